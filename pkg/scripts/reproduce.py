#!/usr/bin/env python
"""End-to-end pipeline over several seeds, followed by the directional checks.

Per seed: cohort, folds, siamese pretraining per encoder variant with pretext evaluation,
autoencoder pretraining, conversion grid searches for every initialisation and horizon,
and a consolidated report. Afterwards, across seeds:

- pretext: the vgg model orders pairs at least 0.85 of the time for intervals of
  12 months or more, and above chance in the 3-month bin, in at least 4 of 5 seeds;
- transfer: at the 12-month horizon, self-supervised initialisation beats training from
  scratch by at least 0.05 ROC AUC on average.

Every step is one ``oct-progression`` command; a step whose run directory already holds
a ``run.json`` is skipped unless ``--force`` is given, so an interrupted run resumes.

Usage:
    python scripts/reproduce.py --config configs/quick.toml --out runs/quick --seeds 0
    python scripts/reproduce.py --out runs/desk --jobs 4 --seeds 0 1 2 3 4
"""

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.cli import EXIT_OK, main as cli_main  # noqa: E402
from src.data.folds import FOLDS_FILENAME  # noqa: E402
from src.data.io_utils import MANIFEST_FILENAME  # noqa: E402
from src.evaluation.regression import per_interval_breakdown  # noqa: E402
from src.evaluation.reports import (  # noqa: E402
    PREDICTIONS_FILENAME,
    RUN_INFO_FILENAME,
    read_predictions,
    volume_predictions,
)

LONG_INTERVAL_MONTHS = 12.0
LONG_INTERVAL_ACCURACY = 0.85
SHORT_INTERVAL_MONTHS = 3.0
PRETEXT_SEED_FRACTION = 0.8
TRANSFER_HORIZON = 12.0
TRANSFER_MARGIN = 0.05


def _run(step: str, argv: List[str], run_dir: Path, force: bool) -> None:
    if (run_dir / RUN_INFO_FILENAME).exists() and not force:
        print(f"[skip] {step}: {run_dir} already complete")
        return
    print(f"[run]  {step}", flush=True)
    code = cli_main(argv + (["--force"] if force or run_dir.exists() else []))
    if code != EXIT_OK:
        print(f"ERROR: {step} failed with exit code {code}", file=sys.stderr)
        sys.exit(code)


def run_seed(root: Path, seed: int, args: argparse.Namespace) -> Dict[str, Path]:
    """All pipeline steps for one seed under ``root``; returns run directories by name."""
    common = ["--seed", str(seed), "--jobs", str(args.jobs)]
    if args.config:
        common += ["--config", args.config]

    cohort = root / "cohort"
    if not (cohort / MANIFEST_FILENAME).exists() or args.force:
        _run(f"seed {seed}: synth", ["synth", "--out", str(cohort), *common], cohort, args.force)
    if not (cohort / FOLDS_FILENAME).exists() or args.force:
        cli_main(["folds", "--cohort", str(cohort), *common, *(["--force"] if args.force else [])])

    runs: Dict[str, Path] = {}
    for variant in args.variants:
        variant_args = [*common, "--set", f"model.variant={variant}"]
        ssl = root / f"ssl-{variant}"
        _run(f"seed {seed}: pretrain ({variant})",
             ["pretrain", "--cohort", str(cohort), "--out", str(ssl), *variant_args], ssl, args.force)
        evaluated = root / f"eval-{variant}"
        _run(f"seed {seed}: eval ({variant})",
             ["eval", "--run", str(ssl), "--out", str(evaluated), *variant_args], evaluated, args.force)
        runs[f"ssl-{variant}"] = ssl
        runs[f"eval-{variant}"] = evaluated

    ae = root / "ae"
    _run(f"seed {seed}: pretrain-ae", ["pretrain-ae", "--cohort", str(cohort), "--out", str(ae), *common],
         ae, args.force)
    runs["ae"] = ae

    init_runs = {"scratch": None, "ae": ae, "ssl": runs[f"ssl-{args.variants[0]}"]}
    for init, init_run in init_runs.items():
        init_args = [*common, "--set", f"model.variant={args.variants[0]}"] if init == "ssl" else common
        for horizon in args.horizons:
            ft = root / f"ft-{init}-{horizon:g}"
            argv = ["finetune", "--cohort", str(cohort), "--init", init, "--horizon", f"{horizon:g}",
                    "--out", str(ft), *init_args]
            if init_run is not None:
                argv += ["--init-run", str(init_run)]
            _run(f"seed {seed}: finetune ({init}, {horizon:g} months)", argv, ft, args.force)
            runs[f"ft-{init}-{horizon:g}"] = ft

    cli_main(["report", *map(str, runs.values()), "--out", str(root / "report")])
    return runs


def pretext_accuracies(eval_dir: Path) -> Dict[str, float]:
    """Volume-level order accuracy for long intervals and for the 3-month bin."""
    predictions = volume_predictions(read_predictions(eval_dir / PREDICTIONS_FILENAME))
    table = per_interval_breakdown(predictions["delta_t"], predictions["prediction"])
    long = table[table["interval_bin"] >= LONG_INTERVAL_MONTHS]
    short = table[table["interval_bin"] == SHORT_INTERVAL_MONTHS]
    return {
        "long": float(long["correct_order"].mean()) if len(long) else math.nan,
        "short": float(short["correct_order"].mean()) if len(short) else math.nan,
    }


def conversion_auc(ft_dir: Path) -> Optional[float]:
    info_path = ft_dir / RUN_INFO_FILENAME
    if not info_path.exists():
        return None
    return json.loads(info_path.read_text(encoding="utf-8"))["cv"]["mean"]["roc_auc"]


def check_pretext(per_seed: Dict[int, Dict[str, Path]]) -> bool:
    print("\nPretext order accuracy, vgg, volume level")
    passed = 0
    for seed, runs in per_seed.items():
        acc = pretext_accuracies(runs["eval-vgg"])
        ok = acc["long"] >= LONG_INTERVAL_ACCURACY and acc["short"] > 0.5
        passed += ok
        print(f"  seed {seed}: >= {LONG_INTERVAL_MONTHS:g} months {acc['long']:.3f}, "
              f"{SHORT_INTERVAL_MONTHS:g} months {acc['short']:.3f}  {'ok' if ok else 'below target'}")
    needed = math.ceil(PRETEXT_SEED_FRACTION * len(per_seed))
    print(f"  {passed}/{len(per_seed)} seeds pass, {needed} needed")
    return passed >= needed


def check_transfer(per_seed: Dict[int, Dict[str, Path]]) -> bool:
    print(f"\nConversion ROC AUC at {TRANSFER_HORIZON:g} months")
    gaps = []
    for seed, runs in per_seed.items():
        ssl = conversion_auc(runs[f"ft-ssl-{TRANSFER_HORIZON:g}"])
        scratch = conversion_auc(runs[f"ft-scratch-{TRANSFER_HORIZON:g}"])
        if ssl is None or scratch is None:
            print(f"  seed {seed}: missing run")
            continue
        gaps.append(ssl - scratch)
        print(f"  seed {seed}: self-supervised {ssl:.3f}, scratch {scratch:.3f}")
    if not gaps:
        return False
    mean_gap = float(np.mean(gaps))
    print(f"  mean benefit {mean_gap:+.3f}, {TRANSFER_MARGIN} needed")
    return mean_gap >= TRANSFER_MARGIN


def main() -> None:
    parser = argparse.ArgumentParser(description="Run the whole pipeline over several seeds and check directions.")
    parser.add_argument("--config", help="TOML config shared by every step")
    parser.add_argument("--out", required=True, help="Root directory for all runs")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--horizons", type=float, nargs="+", default=[6, 12, 18])
    parser.add_argument("--variants", nargs="+", default=["vgg", "dense"], choices=["vgg", "dense"])
    parser.add_argument("--force", action="store_true", help="Rerun steps that already finished")
    args = parser.parse_args()

    root = Path(args.out)
    per_seed = {seed: run_seed(root / f"seed-{seed}", seed, args) for seed in args.seeds}

    results = {}
    if "vgg" in args.variants:
        results["pretext"] = check_pretext(per_seed)
    if TRANSFER_HORIZON in args.horizons:
        results["transfer"] = check_transfer(per_seed)

    print()
    for name, ok in results.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    print(f"Reports: {root}/seed-*/report/report.md")


if __name__ == "__main__":
    main()
