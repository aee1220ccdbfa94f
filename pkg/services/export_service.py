"""
services/export_service.py
---------------------------
Writes evaluation reports, training histories and demonstration sets as
CSV, JSON or Excel files.
"""

import json
import os
from typing import Optional

import pandas as pd

from models.report import EvalReport, TrainingHistory
from models.task import Batch
from utils.errors import StorageError
from utils.logger import get_logger

logger = get_logger(__name__)

REPORT_FORMATS = ("csv", "json", "xlsx")
CELL_COLUMNS = ["task", "model", "key_class", "objective", "metric", "mean", "stderr", "n"]
TRIAL_COLUMNS = ["task", "model", "key_class", "objective", "trial", "value"]
LEAKAGE_COLUMNS = ["distance", "mean", "stderr", "n"]
SCORE_COLUMNS = ["model", "user", "score", "privacy", "user_key", "random_key", "one_bit_key"]


class ExportService:
    """Turns domain results into plot-ready files."""

    # ── Frames ────────────────────────────────────────────

    def cells_frame(self, report: EvalReport) -> pd.DataFrame:
        rows = [
            {
                "task": c.task, "model": c.model, "key_class": c.key_class,
                "objective": c.objective, "metric": c.metric,
                "mean": c.stats.mean, "stderr": c.stats.stderr, "n": c.stats.n,
            }
            for c in report.cells
        ]
        return pd.DataFrame(rows, columns=CELL_COLUMNS)

    def trials_frame(self, report: EvalReport) -> pd.DataFrame:
        rows = [
            {
                "task": c.task, "model": c.model, "key_class": c.key_class,
                "objective": c.objective, "trial": i, "value": v,
            }
            for c in report.cells
            for i, v in enumerate(c.stats.values)
        ]
        return pd.DataFrame(rows, columns=TRIAL_COLUMNS)

    def leakage_frame(self, report: EvalReport) -> pd.DataFrame:
        rows = [{"distance": p.distance, "mean": p.mean, "stderr": p.stderr, "n": p.n} for p in report.leakage]
        return pd.DataFrame(rows, columns=LEAKAGE_COLUMNS)

    def score_frame(self, report: EvalReport) -> pd.DataFrame:
        rows = [
            {
                "model": s.model, "user": r.user, "score": r.score, "privacy": r.privacy,
                "user_key": r.outcomes.get("user"),
                "random_key": r.outcomes.get("random"),
                "one_bit_key": r.outcomes.get("one_bit"),
            }
            for s in report.score_privacy
            for r in s.rows
        ]
        return pd.DataFrame(rows, columns=SCORE_COLUMNS)

    # ── Writers ───────────────────────────────────────────

    def emit_report(self, report: EvalReport, path: str, fmt: str = "csv") -> list[str]:
        """
        Write a report.

        Args:
            report: Completed report.
            path: Target path without extension, e.g. 'runs/report-<hash>'.
            fmt: 'csv' (cells, trials, leakage and score tables as separate
                files), 'json' (one versioned document) or 'xlsx' (one sheet
                per table).

        Returns:
            Paths written.

        Raises:
            StorageError: If the location is not writable.
            ValueError: On an unknown format.
        """
        if fmt not in REPORT_FORMATS:
            raise ValueError(f"unknown report format '{fmt}'")
        try:
            _ensure_parent(path)
            if fmt == "json":
                written = [f"{path}.json"]
                with open(written[0], "w", encoding="utf-8") as fh:
                    json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            elif fmt == "csv":
                written = [f"{path}.csv", f"{path}-trials.csv"]
                self.cells_frame(report).to_csv(written[0], index=False)
                self.trials_frame(report).to_csv(written[1], index=False)
                if report.leakage:
                    written.append(f"{path}-leakage.csv")
                    self.leakage_frame(report).to_csv(written[-1], index=False)
                if report.score_privacy:
                    written.append(f"{path}-score.csv")
                    self.score_frame(report).to_csv(written[-1], index=False)
            else:
                written = [f"{path}.xlsx"]
                with pd.ExcelWriter(written[0], engine="openpyxl") as writer:
                    self.cells_frame(report).to_excel(writer, sheet_name="cells", index=False)
                    self.leakage_frame(report).to_excel(writer, sheet_name="leakage", index=False)
                    self.score_frame(report).to_excel(writer, sheet_name="score_privacy", index=False)
                    pd.DataFrame(
                        sorted(report.metadata.items()), columns=["field", "value"]
                    ).astype(str).to_excel(writer, sheet_name="metadata", index=False)
        except OSError as e:
            logger.error(f"Failed to write report to {path}: {e}")
            raise StorageError(f"cannot write report '{path}': {e}") from e
        logger.info(f"Report written: {', '.join(written)}")
        return written

    def load_report(self, path: str) -> EvalReport:
        """Read a JSON report back."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return EvalReport.from_dict(json.load(fh))
        except (OSError, ValueError) as e:
            raise StorageError(f"cannot read report '{path}': {e}") from e

    def export_leakage_csv(self, report: EvalReport, path: str) -> str:
        try:
            _ensure_parent(path)
            self.leakage_frame(report).to_csv(path, index=False)
        except OSError as e:
            raise StorageError(f"cannot write leakage curve '{path}': {e}") from e
        logger.info(f"Leakage curve written: {path} ({len(report.leakage)} points)")
        return path

    def export_history_csv(self, history: TrainingHistory, path: str) -> str:
        """Training curves: one row per epoch, one column per metric."""
        try:
            _ensure_parent(path)
            pd.DataFrame(history.rows).to_csv(path, index=False)
        except OSError as e:
            raise StorageError(f"cannot write history '{path}': {e}") from e
        logger.info(f"History written: {path} ({len(history)} epochs)")
        return path

    def export_demos_csv(self, batches: list[Batch], path: str) -> str:
        """Demonstrations as columns x0.., u0.., tag."""
        frames = []
        for b in batches:
            df = pd.DataFrame(b.inputs, columns=[f"x{i}" for i in range(b.inputs.shape[1])])
            targets = b.targets.reshape(len(b), -1)
            for j in range(targets.shape[1]):
                df[f"u{j}"] = targets[:, j]
            df["tag"] = b.tag
            frames.append(df)
        try:
            _ensure_parent(path)
            pd.concat(frames, ignore_index=True).to_csv(path, index=False)
        except OSError as e:
            raise StorageError(f"cannot write demos '{path}': {e}") from e
        logger.info(f"Demos written: {path}")
        return path

    def comparison_frame(self, report: EvalReport, models: Optional[list[str]] = None) -> pd.DataFrame:
        """Side-by-side means per (key class, objective) with one column per model."""
        df = self.cells_frame(report)
        if models:
            df = df[df["model"].isin(models)]
        return df.pivot_table(index=["key_class", "objective"], columns="model", values="mean").reset_index()


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
