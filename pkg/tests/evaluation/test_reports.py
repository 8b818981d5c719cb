import pandas as pd
import pytest

from src.evaluation.reports import (
    FOLD_METRICS_FILENAME,
    PREDICTION_COLUMNS,
    PREDICTIONS_FILENAME,
    conversion_table,
    load_run,
    markdown_table,
    pretext_table,
    read_predictions,
    write_report,
    write_run_info,
)
from src.training.run_log import MetricLog
from src.utils.errors import CorruptLogError

PAIRS = [(3.0, 2.0), (-6.0, -5.0), (12.0, 10.0), (6.0, 7.0), (-3.0, 1.0)]


def _eval_run(path, variant="vgg"):
    rows = []
    for i, (delta_t, prediction) in enumerate(PAIRS):
        for b, offset in enumerate((-0.5, 0.5)):
            rows.append([i % 2, f"P{i}-OD", 0.0, delta_t, delta_t, "bscan", b, prediction + offset])
        rows.append([i % 2, f"P{i}-OD", 0.0, delta_t, delta_t, "volume", -1, prediction])
    path.mkdir(parents=True)
    pd.DataFrame(rows, columns=PREDICTION_COLUMNS).to_csv(path / PREDICTIONS_FILENAME, index=False)
    write_run_info(path, {"command": "eval", "variant": variant})
    return path


def _finetune_run(path, init="ssl", horizon=12, aucs=(0.7, 0.8)):
    rows = []
    for fold, auc in enumerate(aucs):
        rows += [
            {"fold": fold, "metric": "roc_auc", "value": auc},
            {"fold": fold, "metric": "average_precision", "value": auc - 0.1},
            {"fold": fold, "metric": "n_train", "value": 10.0 + fold},
        ]
    path.mkdir(parents=True)
    pd.DataFrame(rows).to_csv(path / FOLD_METRICS_FILENAME, index=False)
    write_run_info(path, {"command": "finetune", "init": init, "horizon": horizon})
    return path


def _pretrain_run(path):
    log = MetricLog(path / "metrics.csv")
    for step, (train, val) in enumerate([(9.0, 8.0), (5.0, 6.0), (3.0, 4.0)], start=1):
        log.log(0, 100 * step, "train", "l2", train)
        log.log(0, 100 * step, "val", "l2", val)
    log.flush()
    write_run_info(path, {"command": "pretrain", "variant": "vgg"})
    return path


# ── run files ────────────────────────────────────────────────────────────────


def test_missing_run_directory_is_a_gap(tmp_path):
    assert load_run(tmp_path / "nowhere") is None


def test_corrupt_run_info_raises(tmp_path):
    (tmp_path / "run.json").write_text("{not json")
    with pytest.raises(CorruptLogError):
        load_run(tmp_path)


def test_prediction_log_with_missing_value(tmp_path):
    path = _eval_run(tmp_path / "eval") / PREDICTIONS_FILENAME
    df = pd.read_csv(path)
    df.loc[3, "prediction"] = None
    df.to_csv(path, index=False)
    with pytest.raises(CorruptLogError) as exc:
        read_predictions(path)
    assert exc.value.row == 5


# ── tables ───────────────────────────────────────────────────────────────────


def test_pretext_table_uses_volume_predictions(tmp_path):
    run = load_run(_eval_run(tmp_path / "eval"))
    table = pretext_table([run])
    row = table.iloc[0]
    assert row["model"] == "vgg"
    assert row["n_pairs"] == 5
    assert row["mae_months"] == pytest.approx(9.0 / 5)
    assert row["order_accuracy"] == pytest.approx(4 / 5)


def test_conversion_table_aggregates_folds(tmp_path):
    run = load_run(_finetune_run(tmp_path / "ft"))
    table = conversion_table([run])
    auc = table[table["metric"] == "roc_auc"].iloc[0]
    assert auc["mean"] == pytest.approx(0.75)
    assert auc["std"] == pytest.approx(0.05)
    assert auc["n_folds"] == 2
    assert auc["train_samples"] == "10/11"


def test_markdown_table():
    text = markdown_table(pd.DataFrame({"model": ["vgg"], "R²": ["0.900"]}))
    assert text == "| model | R² |\n|---|---|\n| vgg | 0.900 |\n"


# ── consolidated report ──────────────────────────────────────────────────────


def test_report_lists_gaps_for_missing_runs(tmp_path):
    runs = [_finetune_run(tmp_path / "ft"), tmp_path / "missing"]
    summary = write_report(runs, tmp_path / "report")

    text = (tmp_path / "report" / "report.md").read_text()
    assert "0.750 ± 0.050" in text
    assert "n/a" in text
    assert any("missing run directory" in gap for gap in summary.gaps)
    assert any("no pretext evaluation run" in gap for gap in summary.gaps)
    assert "## Gaps" in text


def test_report_is_byte_identical_when_regenerated(tmp_path):
    runs = [_eval_run(tmp_path / "eval"), _finetune_run(tmp_path / "ft"), _pretrain_run(tmp_path / "pre")]
    first = write_report(runs, tmp_path / "a")
    second = write_report(runs, tmp_path / "b")

    names = sorted(p.name for p in first.files)
    assert names == sorted(p.name for p in second.files)
    assert {"report.md", "pretext_table.csv", "conversion_table.csv", "interval_errors_vgg.svg",
            "loss_pretrain_vgg.svg"} <= set(names)
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
