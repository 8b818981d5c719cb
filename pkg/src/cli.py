"""Command-line interface for the longitudinal pretraining pipeline.

Commands:
    synth        generate a synthetic cohort
    folds        write the patient-level fold assignment into a cohort directory
    pretrain     siamese interval-regression pretraining, one model per fold rotation
    pretrain-ae  cross-sectional autoencoder pretraining, one model per fold rotation
    finetune     conversion classifier grid search (scratch, ae or ssl initialisation)
    eval         pretext evaluation of a pretraining run on its test folds
    report       consolidated tables and figures from finished runs

Usage:
    oct-progression synth --config configs/quick.toml --out runs/cohort
    oct-progression folds --cohort runs/cohort
    oct-progression pretrain --cohort runs/cohort --out runs/ssl
    oct-progression finetune --cohort runs/cohort --init ssl --init-run runs/ssl --horizon 12 --out runs/ft-ssl-12
    oct-progression report runs/eval-vgg runs/ft-ssl-12 --out runs/report

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.data.cohort import Cohort
from src.data.folds import FOLDS_FILENAME, FoldAssignment, load_folds, make_folds, save_folds, split_cohort
from src.data.io_utils import MANIFEST_FILENAME, ensure_output_dir, read_cohort, write_cohort
from src.data.preprocessing import preprocess_cohort
from src.data.sampling import ordered_pairs
from src.data.synthesis import generate_cohort
from src.evaluation.reports import (
    FOLD_METRICS_FILENAME,
    PREDICTION_COLUMNS,
    PREDICTIONS_FILENAME,
    load_run,
    loss_curve_figure,
    write_report,
    write_run_info,
)
from src.models.networks import SiameseModel, predict_pairs
from src.training.checkpoints import Checkpoint, load_best, write_best_marker
from src.training.finetune import INIT_MODES, DataAccessLog, assemble_fold_data
from src.training.grid_search import grid_search
from src.training.pretrain import pretrain_autoencoder, pretrain_siamese
from src.training.run_log import METRICS_FILENAME, MetricLog
from src.utils.config import RunConfig, load_config
from src.utils.errors import ProgressionError, ValidationError
from src.utils.performance import PerformanceTracker

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
RUN_LOG_FILENAME = "run.log"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
INIT_ROUTES = {"ssl": "pretrain", "ae": "pretrain-ae"}


class _Parser(argparse.ArgumentParser):
    """Argument errors are validation errors (exit code 1)."""

    def error(self, message: str):
        raise ValidationError(f"{self.prog}: {message}")


# ── helpers ──


def _start_run(out_dir: Path, config: RunConfig, force: bool) -> logging.Handler:
    ensure_output_dir(out_dir, force=force)
    config.write_snapshot(out_dir)
    handler = logging.FileHandler(out_dir / RUN_LOG_FILENAME, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def _load_cohort(cohort_dir: Path, config: RunConfig) -> Cohort:
    cohort = read_cohort(cohort_dir)
    return preprocess_cohort(cohort, config.preprocess)


def _load_folds(cohort_dir: Path) -> FoldAssignment:
    path = cohort_dir / FOLDS_FILENAME
    if not path.exists():
        raise FileNotFoundError(
            f"no fold assignment in {cohort_dir}; run 'oct-progression folds --cohort {cohort_dir}' first"
        )
    return load_folds(path)


def _rotations(assignment: FoldAssignment, requested: Optional[Sequence[int]]) -> List[int]:
    if not requested:
        return list(range(assignment.k))
    bad = [r for r in requested if not 0 <= r < assignment.k]
    if bad:
        raise ValidationError(f"rotations {bad} outside 0..{assignment.k - 1}")
    return sorted(set(requested))


def _require_out(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise ValidationError(f"'{args.command}' needs --out")
    return Path(args.out)


# ── commands ──


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = _require_out(args)
    handler = _start_run(out_dir, config, args.force)
    try:
        cohort = generate_cohort(config.synth, jobs=config.run.jobs, progress=True)
        write_cohort(cohort, out_dir, force=True)
        summary = cohort.summary()
        print(f"Cohort written to {out_dir / MANIFEST_FILENAME}")
        print(f"  patients: {summary.n_patients}")
        print(f"  eyes: {summary.n_eyes}")
        print(f"  scans: {summary.n_scans}")
        print(f"  converting eyes: {summary.n_converters} ({summary.n_converter_patients} patients)")
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return EXIT_OK


def cmd_folds(args: argparse.Namespace, config: RunConfig) -> int:
    cohort_dir = Path(args.cohort)
    target = cohort_dir / FOLDS_FILENAME
    if target.exists() and not args.force:
        raise ValidationError(f"{target} already exists (use --force to replace it)")
    cohort = read_cohort(cohort_dir)
    assignment = make_folds(cohort, k=config.run.k_folds, seed=config.run.seed)
    save_folds(assignment, target)
    for r, fold in enumerate(assignment.folds):
        converters = sum(cohort.patient(pid).is_converter for pid in fold)
        print(f"  fold {r}: {len(fold)} patients ({converters} converters)")
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    route = "autoencoder" if args.command == "pretrain-ae" else "siamese"
    out_dir = _require_out(args)
    cohort_dir = Path(args.cohort)
    assignment = _load_folds(cohort_dir)
    rotations = _rotations(assignment, args.rotations)
    handler = _start_run(out_dir, config, args.force)
    try:
        cohort = _load_cohort(cohort_dir, config)
        log = MetricLog(out_dir / METRICS_FILENAME)
        train_fn = pretrain_autoencoder if route == "autoencoder" else pretrain_siamese
        best: Dict[str, Dict[str, float]] = {}
        for r in rotations:
            train, val, _ = split_cohort(cohort, assignment.roles(r))
            checkpoint = train_fn(train, val, config.pretrain, config.model, dtype=config.dtype, log=log, fold=r,
                                  fingerprint=config.fingerprint(), progress=True)
            write_best_marker(out_dir / f"fold_{r}", checkpoint)
            best[str(r)] = {"step": checkpoint.step, checkpoint.metric_name: checkpoint.metric_value}
            log.flush()
        loss_curve_figure(log.frame(), out_dir / "loss_curves.svg", [], title=args.command)
        write_run_info(out_dir, {
            "command": args.command,
            "route": route,
            "variant": config.model.variant,
            "cohort": str(cohort_dir),
            "rotations": rotations,
            "fingerprint": config.fingerprint(),
            "best": best,
        })
        for r, entry in best.items():
            print(f"  fold {r}: best step {entry['step']}")
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return EXIT_OK


def _pretext_rows(model: SiameseModel, cohort: Cohort, fold: int) -> List[dict]:
    rows = []
    for eye in cohort.eyes():
        for a, b in ordered_pairs(eye):
            scan_a, scan_b = eye.scans[a], eye.scans[b]
            per_bscan = predict_pairs(scan_a.volume, scan_b.volume, model)
            base = {"fold": fold, "eye_id": eye.eye_id, "t_a": scan_a.t, "t_b": scan_b.t,
                    "delta_t": scan_b.t - scan_a.t}
            rows.append({**base, "level": "volume", "bscan_index": -1, "prediction": float(np.mean(per_bscan))})
            for k, value in enumerate(per_bscan):
                rows.append({**base, "level": "bscan", "bscan_index": k, "prediction": float(value)})
    return rows


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = _require_out(args)
    source = load_run(args.run)
    if source is None:
        raise FileNotFoundError(f"no pretraining run at {args.run}")
    if source.command != "pretrain":
        raise ValidationError(f"{args.run} is a '{source.command}' run; pretext evaluation needs a 'pretrain' run")
    cohort_dir = Path(args.cohort or source.info["cohort"])
    assignment = _load_folds(cohort_dir)
    handler = _start_run(out_dir, config, args.force)
    try:
        cohort = _load_cohort(cohort_dir, config)
        rows = []
        for r in source.info["rotations"]:
            model = load_best(Path(args.run) / f"fold_{r}").build(dtype=config.dtype)
            _, _, test = split_cohort(cohort, assignment.roles(r))
            rows.extend(_pretext_rows(model, test, r))
        predictions = pd.DataFrame(rows, columns=PREDICTION_COLUMNS)
        predictions.to_csv(out_dir / PREDICTIONS_FILENAME, index=False, float_format="%.17g", lineterminator="\n")
        write_run_info(out_dir, {
            "command": "eval",
            "variant": source.info.get("variant", "vgg"),
            "source_run": str(args.run),
            "rotations": source.info["rotations"],
        })
        write_report([out_dir], out_dir / "report")
        print(f"Pretext predictions for {int((predictions['level'] == 'volume').sum())} volume pairs written to "
              f"{out_dir / PREDICTIONS_FILENAME}")
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return EXIT_OK


def _init_checkpoints(init: str, init_run: Optional[str], rotations: Sequence[int]) -> Dict[int, Checkpoint]:
    if init == "scratch":
        return {}
    route = INIT_ROUTES[init]
    if init_run is None:
        raise ValidationError(f"--init {init} needs --init-run pointing at a '{route}' run directory")
    run = load_run(init_run)
    if run is None:
        raise FileNotFoundError(f"no run at {init_run}; run '{route}' first")
    if run.command != route:
        raise ValidationError(f"--init {init} needs a '{route}' run, but {init_run} is a '{run.command}' run")
    checkpoints = {}
    for r in rotations:
        fold_dir = Path(init_run) / f"fold_{r}"
        try:
            checkpoints[r] = load_best(fold_dir)
        except FileNotFoundError as e:
            raise FileNotFoundError(f"{init_run} has no checkpoint for rotation {r}; rerun '{route}'") from e
    return checkpoints


def cmd_finetune(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = _require_out(args)
    init = args.init or config.finetune.init
    horizon = args.horizon if args.horizon is not None else config.run.horizon
    allow_any = args.allow_any_horizon or config.run.allow_any_horizon
    cohort_dir = Path(args.cohort)
    assignment = _load_folds(cohort_dir)
    rotations = _rotations(assignment, args.rotations)
    checkpoints = _init_checkpoints(init, args.init_run, rotations)
    handler = _start_run(out_dir, config, args.force)
    try:
        cohort = _load_cohort(cohort_dir, config)
        access_log = DataAccessLog()
        fold_data = {
            r: assemble_fold_data(cohort, assignment.roles(r), horizon, access_log, allow_any=allow_any)
            for r in rotations
        }
        result = grid_search(fold_data, config.finetune, config.model, init_checkpoints=checkpoints,
                             access_log=access_log, jobs=config.run.jobs, dtype=config.dtype,
                             horizon=float(horizon), init=init)
        result.fold_metrics.to_csv(out_dir / FOLD_METRICS_FILENAME, index=False, float_format="%.17g",
                                   lineterminator="\n")
        pd.DataFrame(
            [{"setting": k, "mean_val_auc": v} for k, v in result.setting_scores.items()]
        ).to_csv(out_dir / "grid.csv", index=False, float_format="%.17g", lineterminator="\n")
        (out_dir / "access_log.json").write_text(json.dumps(access_log.events, indent=2) + "\n", encoding="utf-8")
        write_run_info(out_dir, {
            "command": "finetune",
            "init": init,
            "init_run": args.init_run,
            "horizon": float(horizon),
            "rotations": rotations,
            "best_setting": result.best_setting.key,
            "n_runs": result.n_runs,
            "cv": result.cv_report.to_dict(),
            "fingerprint": config.fingerprint(),
        })
        write_report([out_dir], out_dir / "report")
        report = result.cv_report
        print(f"{init} @ {horizon:g} months, selected {result.best_setting.key}")
        print(f"  ROC AUC {report.cell('roc_auc')}   average precision {report.cell('average_precision')}")
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = _require_out(args)
    ensure_output_dir(out_dir, force=True)
    summary = write_report(args.runs, out_dir)
    print(f"Report written to {out_dir} ({len(summary.files)} files)")
    if summary.gaps:
        print(f"  {len(summary.gaps)} gap(s) listed in {out_dir / 'report.md'}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "folds": cmd_folds,
    "pretrain": cmd_pretrain,
    "pretrain-ae": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults are built in)")
    common.add_argument("--seed", type=int, help="Seed for every seeded section")
    common.add_argument("--out", help="Output directory of this invocation")
    common.add_argument("--jobs", type=int, help="Worker processes for cohort generation and grid search")
    common.add_argument("--force", action="store_true", help="Overwrite a non-empty output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config value (repeatable)")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = _Parser(prog="oct-progression", description="Longitudinal self-supervised pretraining toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="Generate a synthetic cohort")

    p = sub.add_parser("folds", parents=[common], help="Assign patients to folds")
    p.add_argument("--cohort", required=True)

    for name, text in (("pretrain", "Siamese interval-regression pretraining"),
                       ("pretrain-ae", "Autoencoder pretraining")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--cohort", required=True)
        p.add_argument("--rotations", type=int, nargs="+", help="Fold rotations to train (default: all)")

    p = sub.add_parser("finetune", parents=[common], help="Conversion classifier grid search")
    p.add_argument("--cohort", required=True)
    p.add_argument("--init", choices=INIT_MODES, help="Encoder initialisation (default from config)")
    p.add_argument("--init-run", help="Pretraining run providing the encoder (ae or ssl)")
    p.add_argument("--horizon", type=float, help="Conversion horizon in months (6, 12 or 18)")
    p.add_argument("--allow-any-horizon", action="store_true", help="Accept horizons other than 6, 12 and 18")
    p.add_argument("--rotations", type=int, nargs="+", help="Fold rotations to evaluate (default: all)")

    p = sub.add_parser("eval", parents=[common], help="Pretext evaluation of a pretraining run")
    p.add_argument("--run", required=True, help="Siamese pretraining run directory")
    p.add_argument("--cohort", help="Cohort directory (default: the one the run was trained on)")

    p = sub.add_parser("report", parents=[common], help="Tables and figures from finished runs")
    p.add_argument("runs", nargs="+", help="Run directories")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one command and map errors to exit codes."""
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        config = load_config(args.config, overrides=args.overrides, seed=args.seed, jobs=args.jobs)
        code = COMMANDS[args.command](args, config)
        summary = PerformanceTracker.get_performance_summary()
        if not summary.empty:
            logger.debug("Performance summary:\n%s", summary.to_string(index=False))
        return code
    except (ValidationError, FileNotFoundError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ProgressionError as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
