"""CSV report writing.

This module contains the ReportWriter class that handles:
- Writing the accuracy table, distance records and distance histogram
- Writing certificate, gradient-norm, history and smoothing tables
- Stable column order and number formatting so reruns produce identical bytes
"""

import configparser
import csv
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Union

from .constants import (
    CERTIFY_CSV,
    CERTIFY_HEADER,
    DISTANCES_CSV,
    DISTANCES_HEADER,
    DISTANCES_HIST_CSV,
    DISTANCES_HIST_HEADER,
    GRADNORM_CSV,
    GRADNORM_HEADER,
    HISTORY_CSV,
    HISTORY_HEADER,
    LEMMA1_CSV,
    LEMMA1_HEADER,
    OUTPUT_DIR,
    REPORT_CSV,
    REPORT_HEADER,
    SMOOTH_EMPIRICAL_CSV,
    SMOOTH_EMPIRICAL_HEADER,
    SNAPSHOT_INI,
)
from .config import SNAPSHOT_METADATA
from .preempt_types import EvalReport
from .whitebox import distance_histogram

Cell = Union[str, int, float, bool, None]


def format_cell(value: Cell) -> str:
    """Text form of one CSV cell; floats keep full precision."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Cell]]) -> int:
    """Write header and rows with a fixed line terminator.

    Returns:
        Number of data rows written
    """
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
            count += 1
    return count


class ReportWriter:
    """Writes every table of an EvalReport to one directory."""

    def __init__(self, output_dir: Union[str, Path] = OUTPUT_DIR) -> None:
        """Initialize the writer.

        Args:
            output_dir: Directory to write CSVs into (created if missing)
        """
        self.logger = logging.getLogger(__name__)
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Cell]]) -> Path:
        path = self.output_dir / name
        count = write_csv(path, header, rows)
        self.logger.info("Wrote %d rows to %s", count, path)
        return path

    def write_report(self, report: EvalReport) -> Path:
        """Accuracy table, one row per (norm, model, preemption)."""
        return self._write(
            REPORT_CSV,
            REPORT_HEADER,
            (
                (
                    r.norm,
                    r.eps,
                    r.model,
                    r.preemption,
                    r.clean,
                    r.grey_pgd,
                    r.grey_pgd_restarts,
                    r.white_pgd,
                    r.n,
                )
                for r in report.rows
            ),
        )

    def write_distances(self, report: EvalReport) -> List[Path]:
        """Per-candidate distances and their histogram."""
        records = self._write(
            DISTANCES_CSV,
            DISTANCES_HEADER,
            (
                (d.example_id, d.recon_dist, d.eps_prime, d.attack_dist, d.misclassified, d.valid)
                for d in report.distances
            ),
        )
        hist_rows: List[Sequence[Cell]] = []
        stats = report.distance_stats
        if stats is not None and report.eps > 0:
            for kind, dists in (("recon", stats.recon_dists), ("attack", stats.attack_dists)):
                for low, high, count in distance_histogram(dists, report.eps):
                    hist_rows.append((kind, low, high, count))
        hist = self._write(DISTANCES_HIST_CSV, DISTANCES_HIST_HEADER, hist_rows)
        return [records, hist]

    def write_lemma1(self, report: EvalReport) -> Path:
        """Certificate check per robustified example."""
        return self._write(
            LEMMA1_CSV,
            LEMMA1_HEADER,
            (
                (i, rep.h_tilde, rep.satisfied, rep.implied_bound, rep.preserved)
                for i, rep in report.lemma1
            ),
        )

    def write_gradnorms(self, report: EvalReport) -> Path:
        """Update-gradient norm traces."""
        return self._write(
            GRADNORM_CSV,
            GRADNORM_HEADER,
            (
                (run, mode, it, norm)
                for run, mode, trace in report.gradnorms
                for it, norm in enumerate(trace)
            ),
        )

    def write_history(self, report: EvalReport) -> Path:
        """Training loss history."""
        return self._write(
            HISTORY_CSV,
            HISTORY_HEADER,
            ((h.epoch, h.split, h.loss, h.acc) for h in report.history),
        )

    def write_certify(self, report: EvalReport) -> Path:
        """Certification results."""
        return self._write(
            CERTIFY_CSV,
            CERTIFY_HEADER,
            (
                (
                    c.example_id,
                    c.robustified,
                    c.predicted,
                    c.correct,
                    c.p_lower,
                    c.radius,
                    c.abstain,
                )
                for c in report.certify
            ),
        )

    def write_snapshot(self, report: EvalReport) -> Path:
        """Config snapshot plus run metadata, enough to repeat the run."""
        parser = configparser.ConfigParser(interpolation=None)
        for section, keys in report.config_snapshot.items():
            parser[section] = dict(keys)
        parser[SNAPSHOT_METADATA] = dict(sorted(report.metadata.items()))
        path = self.output_dir / SNAPSHOT_INI
        with open(path, "w", encoding="utf-8") as handle:
            parser.write(handle)
        self.logger.info("Wrote run snapshot to %s", path)
        return path

    def write_smooth_empirical(self, report: EvalReport) -> Path:
        """Empirical accuracies of the smoothed classifier."""
        return self._write(
            SMOOTH_EMPIRICAL_CSV,
            SMOOTH_EMPIRICAL_HEADER,
            (
                (s.preemption, s.clean, s.grey_rpgd, s.grey_rpgd_restarts, s.n)
                for s in report.smooth_empirical
            ),
        )


def emit_report(report: EvalReport, output_dir: Union[str, Path] = OUTPUT_DIR) -> List[Path]:
    """Write every CSV of the report; empty tables get a header line only.

    Args:
        report: Pipeline output
        output_dir: Destination directory

    Returns:
        Paths written, in a fixed order
    """
    writer = ReportWriter(output_dir)
    paths = [writer.write_report(report)]
    paths.extend(writer.write_distances(report))
    paths.append(writer.write_lemma1(report))
    paths.append(writer.write_gradnorms(report))
    paths.append(writer.write_history(report))
    paths.append(writer.write_certify(report))
    paths.append(writer.write_smooth_empirical(report))
    paths.append(writer.write_snapshot(report))
    return paths
