"""Test suite for CSV report writing."""

from pathlib import Path

import pytest

from src.constants import REPORT_HEADER
from src.preempt_types import (
    DistanceRecord,
    DistanceStats,
    EvalReport,
    HistoryRow,
    Lemma1Report,
    ReportRow,
)
from src.report import emit_report, format_cell, write_csv


@pytest.fixture
def report() -> EvalReport:
    """Create a populated report fixture for tests."""
    rep = EvalReport(seed=1, config_snapshot={"run": {"seed": "1"}}, eps=0.1)
    rep.rows = [
        ReportRow("linf", 0.1, "adversarial", "none", 0.9, 0.5, 0.4, 0.4, 10),
        ReportRow("linf", 0.1, "adversarial", "ours", 0.95, 0.8, 0.75, None, 10),
    ]
    rep.distances = [DistanceRecord(0, 0.098, 0.1, 0.11, True, False)]
    rep.distance_stats = DistanceStats([0.098], [0.112], 1.0, 1.0)
    rep.lemma1 = [(0, Lemma1Report(0.2, True, 0.4, True))]
    rep.gradnorms = [("linf/0", "first_order", [1.0, 0.5])]
    rep.history = [HistoryRow(1, "train", 0.7, 0.5)]
    return rep


def test_format_cell() -> None:
    """Test the text form of each cell type."""
    assert format_cell(None) == ""
    assert format_cell(True) == "true"
    assert format_cell(False) == "false"
    assert format_cell(3) == "3"
    assert format_cell("ours") == "ours"
    assert float(format_cell(0.1)) == 0.1
    assert format_cell(0.5) == "0.5"


def test_write_csv_counts_rows(tmp_path: Path) -> None:
    """Test rows are written after the header with unix line endings."""
    path = tmp_path / "t.csv"
    assert write_csv(path, ("a", "b"), [(1, 2.5), ("x", None)]) == 2
    assert path.read_bytes() == b"a,b\n1,2.5\nx,\n"


def test_empty_report_writes_headers(tmp_path: Path) -> None:
    """Test an empty report still produces every file with its header."""
    paths = emit_report(EvalReport(seed=0, config_snapshot={}), tmp_path)
    assert [p.name for p in paths] == [
        "report.csv",
        "distances.csv",
        "distances_hist.csv",
        "lemma1.csv",
        "gradnorm.csv",
        "history.csv",
        "certify.csv",
        "smooth_empirical.csv",
        "run_config.ini",
    ]
    assert (tmp_path / "report.csv").read_text() == ",".join(REPORT_HEADER) + "\n"
    assert (tmp_path / "distances_hist.csv").read_text() == "kind,bucket_low,bucket_high,count\n"


def test_report_rows(tmp_path: Path, report: EvalReport) -> None:
    """Test table contents, with an empty white-box cell for missing values."""
    emit_report(report, tmp_path)
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[2].split(",")[7] == ""
    grad_lines = (tmp_path / "gradnorm.csv").read_text().splitlines()
    assert grad_lines[1:] == ["linf/0,first_order,0,1", "linf/0,first_order,1,0.5"]
    hist = (tmp_path / "distances_hist.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in hist[1:]] == ["recon"] * 20 + ["attack"] * 23


def test_reruns_are_byte_identical(tmp_path: Path, report: EvalReport) -> None:
    """Test the same report gives the same bytes twice."""
    first = emit_report(report, tmp_path / "a")
    second = emit_report(report, tmp_path / "b")
    for one, two in zip(first, second):
        assert one.read_bytes() == two.read_bytes()


def test_snapshot_has_metadata(tmp_path: Path, report: EvalReport) -> None:
    """Test the snapshot records the metadata section."""
    report.metadata = {"pixel_range": "[0, 1]"}
    emit_report(report, tmp_path)
    text = (tmp_path / "run_config.ini").read_text()
    assert "[metadata]" in text
    assert "pixel_range = [0, 1]" in text
