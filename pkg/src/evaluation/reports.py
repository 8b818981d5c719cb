"""Report generation from completed run directories.

Reports are rebuilt from files alone (``run.json``, ``metrics.csv``,
``pretext_predictions.csv``, ``fold_metrics.csv``); no model is evaluated here, so
regenerating a report from the same runs gives byte-identical CSV, Markdown and SVG.

Outputs:
- pretext table: one row per encoder variant (vgg, dense) with R², MAE and order accuracy
  of volume-level interval predictions pooled over folds.
- per-interval figure: raw per-pair relative errors (CSV), per-bin summary (CSV), and a
  box plot of relative error per interval bin with order-accuracy bars (SVG).
- conversion table: ROC AUC and average precision blocks, rows per initialisation,
  columns per horizon, cells ``mean ± std`` over folds.
- loss curves of pretraining runs (SVG).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.evaluation.classification import aggregate_cv  # noqa: E402
from src.evaluation.regression import RegressionMetrics, per_interval_breakdown, summarize_breakdown  # noqa: E402
from src.training.run_log import METRICS_FILENAME, read_metric_log  # noqa: E402
from src.utils.errors import CorruptLogError  # noqa: E402

logger = logging.getLogger(__name__)

RUN_INFO_FILENAME = "run.json"
PREDICTIONS_FILENAME = "pretext_predictions.csv"
FOLD_METRICS_FILENAME = "fold_metrics.csv"
PREDICTION_COLUMNS = ["fold", "eye_id", "t_a", "t_b", "delta_t", "level", "bscan_index", "prediction"]

VARIANT_ORDER = ["vgg", "dense"]
INIT_ROWS = [("scratch", "Training from scratch (i)"), ("ae", "OCT autoencoder (ii)"), ("ssl", "Self-supervised")]
HORIZON_COLUMNS = [6, 12, 18]
CLASSIFICATION_BLOCKS = [("roc_auc", "ROC AUC"), ("average_precision", "Average precision")]
TABLE_FLOAT = "%.6f"
SVG_SALT = "oct-progression"


@dataclass
class RunRecord:
    path: Path
    info: Dict[str, Any]

    @property
    def command(self) -> str:
        return self.info.get("command", "")


@dataclass
class ReportSummary:
    files: List[Path] = field(default_factory=list)
    gaps: List[str] = field(default_factory=list)


def write_run_info(run_dir: Union[str, Path], info: Dict[str, Any]) -> Path:
    path = Path(run_dir) / RUN_INFO_FILENAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_run(run_dir: Union[str, Path]) -> Optional[RunRecord]:
    """The run's ``run.json``, or None (with a warning) when the run is missing."""
    run_dir = Path(run_dir)
    info_path = run_dir / RUN_INFO_FILENAME
    if not info_path.exists():
        logger.warning("Run directory %s is missing or incomplete (no %s); leaving a gap", run_dir, RUN_INFO_FILENAME)
        return None
    try:
        info = json.loads(info_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorruptLogError(info_path, e.lineno, e.msg) from e
    return RunRecord(run_dir, info)


def read_predictions(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"prediction log not found: {path}")
    df = pd.read_csv(path)
    if list(df.columns) != PREDICTION_COLUMNS:
        raise CorruptLogError(path, 1, f"expected columns {PREDICTION_COLUMNS}, got {list(df.columns)}")
    bad = df[["delta_t", "prediction"]].isna().any(axis=1) | ~np.isfinite(df[["delta_t", "prediction"]]).all(axis=1)
    if bad.any():
        raise CorruptLogError(path, int(np.flatnonzero(bad.to_numpy())[0]) + 2, "missing or non-finite value")
    return df


def read_fold_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"fold metrics not found: {path}")
    df = pd.read_csv(path)
    if list(df.columns) != ["fold", "metric", "value"]:
        raise CorruptLogError(path, 1, f"expected columns fold,metric,value, got {list(df.columns)}")
    if df["value"].isna().any():
        raise CorruptLogError(path, int(np.flatnonzero(df["value"].isna().to_numpy())[0]) + 2, "missing value")
    return df


def _write_csv(df: pd.DataFrame, path: Path, files: List[Path]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=TABLE_FLOAT, lineterminator="\n")
    files.append(path)


def _write_text(text: str, path: Path, files: List[Path]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    files.append(path)


def _save_svg(fig, path: Path, files: List[Path]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    files.append(path)


def markdown_table(df: pd.DataFrame) -> str:
    """Pipe table of ``df`` with values already formatted as strings."""
    header = "| " + " | ".join(str(c) for c in df.columns) + " |"
    rule = "|" + "|".join("---" for _ in df.columns) + "|"
    body = ["| " + " | ".join(str(v) for v in row) + " |" for row in df.itertuples(index=False)]
    return "\n".join([header, rule, *body]) + "\n"


# ── pretext interval regression ──


def volume_predictions(predictions: pd.DataFrame) -> pd.DataFrame:
    return predictions[predictions["level"] == "volume"].reset_index(drop=True)


def pretext_table(runs: Sequence[RunRecord]) -> pd.DataFrame:
    """R², MAE and order accuracy per encoder variant; the last run of a variant wins."""
    by_variant: Dict[str, RunRecord] = {}
    for run in runs:
        by_variant[run.info.get("variant", "vgg")] = run
    rows = []
    for variant in VARIANT_ORDER + sorted(set(by_variant) - set(VARIANT_ORDER)):
        if variant not in by_variant:
            continue
        vol = volume_predictions(read_predictions(by_variant[variant].path / PREDICTIONS_FILENAME))
        metrics = RegressionMetrics.compute(vol["delta_t"], vol["prediction"])
        rows.append({"model": variant, "n_pairs": len(vol), **metrics.as_dict()})
    return pd.DataFrame(rows, columns=["model", "n_pairs", "r2", "mae_months", "order_accuracy"])


def interval_figure(predictions: pd.DataFrame, path: Path, files: List[Path], title: str = "") -> pd.DataFrame:
    """Box plot of relative error per interval bin plus order-accuracy bars; returns the per-bin summary."""
    vol = volume_predictions(predictions)
    breakdown = per_interval_breakdown(vol["delta_t"], vol["prediction"])
    summary = summarize_breakdown(breakdown)
    bins = summary["interval_bin"].tolist()
    groups = [breakdown.loc[breakdown["interval_bin"] == b, "rel_error_pct"].to_numpy() for b in bins]

    fig, (ax_err, ax_acc) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    positions = np.arange(len(bins))
    if groups:
        ax_err.boxplot(groups, positions=positions, whis=1.5, showfliers=True)
        ax_acc.bar(positions, summary["order_accuracy"], color="#4c72b0")
    ax_err.set_ylabel("relative absolute error [%]")
    ax_acc.set_ylabel("order accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    ax_acc.set_xticks(positions)
    ax_acc.set_xticklabels([f"{b:g}" for b in bins])
    ax_acc.set_xlabel("time interval [months]")
    if title:
        ax_err.set_title(title)
    fig.tight_layout()
    _save_svg(fig, path, files)
    return summary


def loss_curve_figure(log: pd.DataFrame, path: Path, files: List[Path], title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for (fold, split), part in log.groupby(["fold", "split"], sort=True):
        style = "-" if split == "val" else ":"
        ax.plot(part["step"], part["value"], style, label=f"fold {fold} {split}")
    metric = log["metric"].iloc[0] if len(log) else "loss"
    ax.set_xlabel("step")
    ax.set_ylabel(metric)
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    if len(log):
        ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    _save_svg(fig, path, files)


# ── conversion classification ──


def conversion_table(runs: Sequence[RunRecord]) -> pd.DataFrame:
    """Long table: one row per (metric, init, horizon) with mean, std and fold count."""
    rows = []
    for run in runs:
        folds = read_fold_metrics(run.path / FOLD_METRICS_FILENAME)
        wide = folds.pivot(index="fold", columns="metric", values="value").sort_index()
        names = [m for m, _ in CLASSIFICATION_BLOCKS]
        report = aggregate_cv(wide[names].to_dict("records"))
        train_counts = wide["n_train"].astype(int).tolist() if "n_train" in wide else []
        for metric in names:
            rows.append({
                "metric": metric,
                "init": run.info.get("init", "scratch"),
                "horizon": float(run.info.get("horizon", 12)),
                "mean": report.mean[metric],
                "std": report.std[metric],
                "n_folds": report.n_folds,
                "train_samples": "/".join(str(n) for n in train_counts),
            })
    df = pd.DataFrame(rows, columns=["metric", "init", "horizon", "mean", "std", "n_folds", "train_samples"])
    return df.drop_duplicates(subset=["metric", "init", "horizon"], keep="last").reset_index(drop=True)


def conversion_markdown(table: pd.DataFrame, gaps: List[str]) -> str:
    horizons = sorted(set(HORIZON_COLUMNS) | set(table["horizon"].astype(float).tolist()))
    lines = []
    for metric, label in CLASSIFICATION_BLOCKS:
        rows = []
        for init, name in INIT_ROWS:
            cells = [name]
            for h in horizons:
                hit = table[(table["metric"] == metric) & (table["init"] == init) & (table["horizon"] == float(h))]
                if hit.empty:
                    cells.append("n/a")
                    gaps.append(f"{label}: no run for {name} at {h:g} months")
                else:
                    cells.append(f"{hit['mean'].iloc[0]:.3f} ± {hit['std'].iloc[0]:.3f}")
            rows.append(cells)
        frame = pd.DataFrame(rows, columns=["", *[f"{h:g} m." for h in horizons]])
        lines.append(f"### {label}\n\n" + markdown_table(frame))
    return "\n".join(lines)


# ── consolidated report ──


def _format_pretext(table: pd.DataFrame) -> pd.DataFrame:
    shown = table.copy()
    for col in ("r2", "mae_months", "order_accuracy"):
        shown[col] = shown[col].map(lambda v: f"{v:.3f}")
    return shown.rename(columns={"r2": "R²", "mae_months": "MAE (months)", "order_accuracy": "Accuracy"})


def write_report(run_dirs: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> ReportSummary:
    """Regenerate every table and figure from ``run_dirs`` into ``out_dir``.

    Missing runs and empty table cells are listed as gaps in ``report.md``.

    Raises:
        CorruptLogError: a log file cannot be parsed (names the file and row).
    """
    out_dir = Path(out_dir)
    summary = ReportSummary()
    runs = []
    for run_dir in run_dirs:
        run = load_run(run_dir)
        if run is None:
            summary.gaps.append(f"missing run directory: {run_dir}")
        else:
            runs.append(run)

    sections = ["# Report\n"]
    eval_runs = [r for r in runs if r.command == "eval"]
    if eval_runs:
        table = pretext_table(eval_runs)
        _write_csv(table, out_dir / "pretext_table.csv", summary.files)
        sections.append("## Interval regression\n\n" + markdown_table(_format_pretext(table)))
        for run in eval_runs:
            variant = run.info.get("variant", "vgg")
            predictions = read_predictions(run.path / PREDICTIONS_FILENAME)
            vol = volume_predictions(predictions)
            _write_csv(per_interval_breakdown(vol["delta_t"], vol["prediction"]),
                       out_dir / f"interval_errors_{variant}.csv", summary.files)
            per_bin = interval_figure(predictions, out_dir / f"interval_errors_{variant}.svg", summary.files,
                                      title=f"{variant} encoder")
            _write_csv(per_bin, out_dir / f"interval_bins_{variant}.csv", summary.files)
    else:
        summary.gaps.append("no pretext evaluation run: interval regression table omitted")

    finetune_runs = [r for r in runs if r.command == "finetune"]
    if finetune_runs:
        table = conversion_table(finetune_runs)
        _write_csv(table, out_dir / "conversion_table.csv", summary.files)
        sections.append("## Conversion prediction\n\n" + conversion_markdown(table, summary.gaps))
    else:
        summary.gaps.append("no fine-tuning run: conversion table omitted")

    for run in runs:
        if run.command in ("pretrain", "pretrain-ae"):
            log_path = run.path / METRICS_FILENAME
            if not log_path.exists():
                summary.gaps.append(f"{run.path}: no {METRICS_FILENAME}")
                continue
            name = f"loss_{run.command}_{run.info.get('variant', 'vgg')}.svg"
            loss_curve_figure(read_metric_log(log_path), out_dir / name, summary.files, title=run.command)

    if summary.gaps:
        for gap in summary.gaps:
            logger.warning("Report gap: %s", gap)
        sections.append("## Gaps\n\n" + "\n".join(f"- {gap}" for gap in summary.gaps) + "\n")
    _write_text("\n".join(sections), out_dir / "report.md", summary.files)
    logger.info("Report written to %s (%d files, %d gaps)", out_dir, len(summary.files), len(summary.gaps))
    return summary


__all__ = [
    "FOLD_METRICS_FILENAME",
    "PREDICTIONS_FILENAME",
    "PREDICTION_COLUMNS",
    "ReportSummary",
    "RunRecord",
    "conversion_table",
    "interval_figure",
    "load_run",
    "loss_curve_figure",
    "markdown_table",
    "pretext_table",
    "read_fold_metrics",
    "read_predictions",
    "write_report",
    "write_run_info",
]
