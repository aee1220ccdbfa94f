"""
models/report.py
----------------
Domain models of evaluation results: per-cell statistics, leakage curve
points, Score/Privacy tallies, outcome matches and the full report.
"""

from dataclasses import asdict, dataclass, field
from typing import Optional

from config import REPORT_SCHEMA_VERSION


@dataclass
class CellStats:
    """Mean, standard error and count over raw per-trial values."""
    mean: float
    stderr: float
    n: int
    values: list[float] = field(default_factory=list)


@dataclass
class Cell:
    """
    One (task, key class, objective) entry of the report.

    Attributes:
        task: Task kind, e.g. 'imitation'.
        model: 'prop', 'baseline' or 'base'.
        key_class: 'user', 'one_bit', 'random' or 'null'.
        objective: 'general' or 'personalized' (or 'noise' for obfuscation).
        metric: 'mse', 'return', 'accuracy' or 'entropy'.
        stats: Aggregated trial values.
    """
    task: str
    model: str
    key_class: str
    objective: str
    metric: str
    stats: CellStats


@dataclass
class LeakagePoint:
    """Personalized-objective performance at one Hamming distance from the user key."""
    distance: int
    mean: float
    stderr: float
    n: int
    values: list[float] = field(default_factory=list)


@dataclass
class OutcomeMatch:
    """
    Which objective an observed behavior matches.

    Attributes:
        objective_id: Matched objective, or None for no/ambiguous match.
        score: Distance to the matched goal (spatial) or label agreement (classification).
        tolerance: Tolerance used for the decision.
    """
    objective_id: Optional[str]
    score: float
    tolerance: float


@dataclass
class ScorePrivacyRow:
    """Score/Privacy tally of one user (each in [0, 3])."""
    user: str
    score: int
    privacy: int
    outcomes: dict[str, Optional[str]] = field(default_factory=dict)


@dataclass
class ScorePrivacySummary:
    model: str
    rows: list[ScorePrivacyRow] = field(default_factory=list)
    mean_score: float = 0.0
    mean_privacy: float = 0.0
    stderr_score: float = 0.0
    stderr_privacy: float = 0.0


@dataclass
class EvalReport:
    """
    Everything cmd_eval emits.

    Attributes:
        cells: Key class × objective table.
        leakage: Leakage curve points (may be empty).
        score_privacy: Score/Privacy summaries per model.
        metadata: Seeds, config hash, schema version.
    """
    cells: list[Cell] = field(default_factory=list)
    leakage: list[LeakagePoint] = field(default_factory=list)
    score_privacy: list[ScorePrivacySummary] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def cell(self, key_class: str, objective: str, model: Optional[str] = None) -> Cell:
        for c in self.cells:
            if c.key_class == key_class and c.objective == objective and (model is None or c.model == model):
                return c
        raise KeyError(f"no cell for ({key_class}, {objective}, {model})")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            cells=[
                Cell(**{**c, "stats": CellStats(**c["stats"])}) for c in data.get("cells", [])
            ],
            leakage=[LeakagePoint(**p) for p in data.get("leakage", [])],
            score_privacy=[
                ScorePrivacySummary(**{**s, "rows": [ScorePrivacyRow(**r) for r in s["rows"]]})
                for s in data.get("score_privacy", [])
            ],
            metadata=dict(data.get("metadata", {})),
            schema_version=int(data.get("schema_version", REPORT_SCHEMA_VERSION)),
        )


@dataclass
class TrainingHistory:
    """
    Per-epoch training curves.

    Each row holds 'epoch' plus metric columns such as 'loss', 'loss_user',
    'loss_k1', 'loss_k2', 'loss_null' or 'return_user'.
    """
    rows: list[dict] = field(default_factory=list)

    def record(self, epoch: int, **metrics: float) -> None:
        self.rows.append({"epoch": epoch, **{k: float(v) for k, v in metrics.items()}})

    def last(self, column: str) -> Optional[float]:
        for row in reversed(self.rows):
            if column in row:
                return row[column]
        return None

    def __len__(self) -> int:
        return len(self.rows)
