"""
services/eval_service.py
------------------------
Evaluation harness.

- evaluate: per key class (user, one_bit, random, null), trial-level metrics
  against the general and the personalized objective.
- leakage_curve: personalized-objective performance versus Hamming distance
  from the user keys.
- match_outcome: which objective a behavior matches (nearest goal within
  tolerance, or label agreement).
- score_privacy: indicator tallies over (user, random, one-bit) keys.

Task specifics live in the probe classes; EvalService assembles a full
EvalReport from them.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Protocol, Sequence

import numpy as np

from config import GOAL_MAX_RETRIES
from engine.losses import entropy, loss_mse
from models.key import Key
from models.report import (
    Cell,
    CellStats,
    EvalReport,
    LeakagePoint,
    OutcomeMatch,
    ScorePrivacyRow,
    ScorePrivacySummary,
)
from models.settings import KEY_CLASSES, EvalSpec, UserSpec
from models.task import GENERAL, ClassifyTask, DigitCorpus, GoalTransform, ImitationTask, ReachEnv, UserObjective
from services import imitation_service, reach_service
from services.classify_service import accuracy, offset_labels
from services.keyed_model import KeyedModel
from services.keyspace_service import key_at_distance, random_key, sample_K2
from utils.errors import InvariantError, KeyspaceError
from utils.logger import get_logger
from utils.stats import standard_error

logger = get_logger(__name__)

PERSONALIZED = "personalized"
NOISE = "noise"
AGREEMENT_THRESHOLD = 0.8
TIE_EPS = 1e-9
SCORE_KEYS = ("user", "random", "one_bit")


def cell_stats(values: Sequence[float]) -> CellStats:
    vals = [float(v) for v in values]
    return CellStats(mean=float(np.mean(vals)) if vals else 0.0, stderr=standard_error(vals), n=len(vals), values=vals)


# ── Outcome matching ──────────────────────────────────────

def validate_library(library: dict[str, np.ndarray], tolerance: float, kind: str = "spatial") -> None:
    """
    Raises:
        InvariantError: If the library is empty or two objectives cannot be
            told apart under the tolerance.
    """
    if not library:
        raise InvariantError("outcome library is empty")
    for (a, va), (b, vb) in combinations(library.items(), 2):
        if kind == "spatial":
            gap = float(np.linalg.norm(np.asarray(va) - np.asarray(vb)))
            if gap <= 2.0 * tolerance:
                raise InvariantError(f"objectives '{a}' and '{b}' are {gap:.3f} apart, tolerance {tolerance:.3f}")
        else:
            agreement = float(np.mean(np.asarray(va) == np.asarray(vb)))
            if agreement >= tolerance:
                raise InvariantError(f"label sets '{a}' and '{b}' agree on {agreement:.0%} of examples")


def match_outcome(
    behavior: np.ndarray,
    library: dict[str, np.ndarray],
    tolerance: float,
    kind: str = "spatial",
) -> OutcomeMatch:
    """
    Map an observed behavior to at most one objective.

    Args:
        behavior: Terminal position (spatial) or predicted labels (labels).
        library: objective id -> goal position or label set.
        tolerance: Maximum goal distance (spatial) or minimum agreement (labels).
        kind: 'spatial' or 'labels'.

    Returns:
        OutcomeMatch whose objective_id is None on no match or a tie.
    """
    validate_library(library, tolerance, kind)
    ids = list(library)
    if kind == "spatial":
        scores = np.array([np.linalg.norm(np.asarray(behavior) - np.asarray(library[i])) for i in ids])
        order = np.argsort(scores, kind="stable")
        best = scores[order[0]]
        tied = len(ids) > 1 and abs(scores[order[1]] - best) <= TIE_EPS
        ok = best <= tolerance and not tied
    else:
        scores = np.array([np.mean(np.asarray(behavior) == np.asarray(library[i])) for i in ids])
        order = np.argsort(-scores, kind="stable")
        best = scores[order[0]]
        tied = len(ids) > 1 and abs(scores[order[1]] - best) <= TIE_EPS
        ok = best >= tolerance and not tied
    return OutcomeMatch(objective_id=ids[order[0]] if ok else None, score=float(best), tolerance=float(tolerance))


# ── Probes ────────────────────────────────────────────────

class Probe(Protocol):
    task: str
    metrics: dict[str, str]
    default_objective: str

    def trial(self, model: KeyedModel, key: Key, objective_id: str, rng: np.random.Generator) -> dict[str, float]: ...

    def outcome(self, model: KeyedModel, key: Key, objective_id: str, rng: np.random.Generator) -> OutcomeMatch: ...


def _act_fn(model: KeyedModel, key: Key, n: int):
    return lambda obs: model.forward(obs, key)[0][:, :n]


def _separated_goals(
    transform: GoalTransform, sample, count: int, min_separation: float, rng: np.random.Generator
) -> np.ndarray:
    """Goals whose transformed image lies at least min_separation away."""
    goals = sample(count, rng)
    for _ in range(GOAL_MAX_RETRIES):
        bad = np.linalg.norm(goals - transform.apply(goals), axis=1) < min_separation
        if not bad.any():
            return goals
        goals[bad] = sample(int(bad.sum()), rng)
    raise InvariantError(f"goal transform cannot separate goals by {min_separation}")


@dataclass
class ImitationProbe:
    """Action MSE on random states; outcome = terminal position of one rollout."""
    task_cfg: ImitationTask
    objectives: dict[str, UserObjective] = field(default_factory=dict)
    probe_size: int = 64
    tolerance_fraction: float = 0.25
    min_separation: float = 0.5
    task: str = "imitation"
    metrics: dict[str, str] = field(default_factory=lambda: {GENERAL: "mse", PERSONALIZED: "mse"})
    default_objective: str = PERSONALIZED

    def transform(self, objective_id: str) -> GoalTransform:
        obj = self.objectives.get(objective_id)
        return obj.transform if obj is not None and obj.transform is not None else self.task_cfg.transform

    def _sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return imitation_service.sample_box(self.task_cfg, count, rng)

    def trial(self, model, key, objective_id, rng) -> dict[str, float]:
        t = self.task_cfg
        pos = self._sample(self.probe_size, rng)
        goals = self._sample(self.probe_size, rng)
        pred = model.forward(imitation_service.observe(pos, goals), key)[0][:, :t.n]
        general = imitation_service.expert_action(t, pos, goals)
        personal = imitation_service.expert_action(t, pos, self.transform(objective_id).apply(goals))
        return {GENERAL: loss_mse(pred, general)[0], PERSONALIZED: loss_mse(pred, personal)[0]}

    def outcome(self, model, key, objective_id, rng) -> OutcomeMatch:
        tf = self.transform(objective_id)
        start = self._sample(1, rng)
        goal = _separated_goals(tf, self._sample, 1, self.min_separation, rng)
        final = imitation_service.rollout(self.task_cfg, _act_fn(model, key, self.task_cfg.n), start, goal)
        g, g_p = goal[0], tf.apply(goal)[0]
        tol = self.tolerance_fraction * float(np.linalg.norm(g - g_p))
        return match_outcome(final[0], {GENERAL: g, objective_id: g_p}, tol)


@dataclass
class ReachProbe:
    """Deterministic (mean-action) episodes; metric = return normalized by the attainable maximum."""
    env: ReachEnv
    objectives: dict[str, UserObjective] = field(default_factory=dict)
    probe_size: int = 64
    tolerance_fraction: float = 0.25
    min_separation: float = 0.5
    task: str = "reach"
    metrics: dict[str, str] = field(default_factory=lambda: {GENERAL: "return", PERSONALIZED: "return"})
    default_objective: str = PERSONALIZED

    def transform(self, objective_id: str) -> GoalTransform:
        obj = self.objectives.get(objective_id)
        return obj.transform if obj is not None and obj.transform is not None else self.env.transform

    def _sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-self.env.workspace, self.env.workspace, size=(count, self.env.n))

    def _normalized(self, starts, finals, goal) -> np.ndarray:
        e = self.env
        gained = (np.linalg.norm(starts - goal, axis=1) - np.linalg.norm(finals - goal, axis=1)) / (e.dt * e.u_max)
        return gained / np.maximum(reach_service.max_attainable_return(e, starts, goal), 1e-12)

    def trial(self, model, key, objective_id, rng) -> dict[str, float]:
        starts, goals = reach_service.reset(self.env, self.probe_size, rng)
        ep = reach_service.rollout(self.env, _act_fn(model, key, self.env.n), starts, goals, goals)
        g_p = self.transform(objective_id).apply(goals)
        return {
            GENERAL: float(np.mean(self._normalized(starts, ep.final_positions, goals))),
            PERSONALIZED: float(np.mean(self._normalized(starts, ep.final_positions, g_p))),
        }

    def outcome(self, model, key, objective_id, rng) -> OutcomeMatch:
        tf = self.transform(objective_id)
        start = self._sample(1, rng)
        goal = _separated_goals(tf, self._sample, 1, self.min_separation, rng)
        ep = reach_service.rollout(self.env, _act_fn(model, key, self.env.n), start, goal, goal)
        g, g_p = goal[0], tf.apply(goal)[0]
        tol = self.tolerance_fraction * float(np.linalg.norm(g - g_p))
        return match_outcome(ep.final_positions[0], {GENERAL: g, objective_id: g_p}, tol)


@dataclass
class ClassifyProbe:
    """Accuracy on held-out digits against true and offset labels."""
    task_cfg: ClassifyTask
    corpus: DigitCorpus
    objectives: dict[str, UserObjective] = field(default_factory=dict)
    probe_size: int = 64
    task: str = "classify"
    metrics: dict[str, str] = field(default_factory=lambda: {GENERAL: "accuracy", PERSONALIZED: "accuracy"})
    default_objective: str = PERSONALIZED

    def offset(self, objective_id: str) -> int:
        obj = self.objectives.get(objective_id)
        return obj.offset if obj is not None and obj.offset is not None else self.task_cfg.offset

    def _draw(self, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(len(self.corpus), size=min(self.probe_size, len(self.corpus)), replace=False)

    def trial(self, model, key, objective_id, rng) -> dict[str, float]:
        idx = self._draw(rng)
        logits = model.forward(self.corpus.images[idx], key)[0]
        labels = self.corpus.labels[idx]
        shifted = offset_labels(labels, self.offset(objective_id), self.task_cfg.n_classes)
        return {GENERAL: accuracy(logits, labels), PERSONALIZED: accuracy(logits, shifted)}

    def outcome(self, model, key, objective_id, rng) -> OutcomeMatch:
        idx = self._draw(rng)
        predicted = np.argmax(model.forward(self.corpus.images[idx], key)[0], axis=1)
        labels = self.corpus.labels[idx]
        library = {
            GENERAL: labels,
            objective_id: offset_labels(labels, self.offset(objective_id), self.task_cfg.n_classes),
        }
        return match_outcome(predicted, library, AGREEMENT_THRESHOLD, kind="labels")


@dataclass
class ObfuscateProbe:
    """
    Wraps a probe and adds a 'noise' objective: mean prediction entropy
    (classification) or mean distance of actions from pi* actions (regression).
    """
    inner: Probe
    task: str = "obfuscate"

    @property
    def default_objective(self) -> str:
        return self.inner.default_objective

    @property
    def metrics(self) -> dict[str, str]:
        noise_metric = "entropy" if isinstance(self.inner, ClassifyProbe) else "action_spread"
        return {**self.inner.metrics, NOISE: noise_metric}

    def trial(self, model, key, objective_id, rng) -> dict[str, float]:
        values = self.inner.trial(model, key, objective_id, rng)
        if isinstance(self.inner, ClassifyProbe):
            idx = self.inner._draw(rng)
            values[NOISE] = float(np.mean(entropy(model.forward(self.inner.corpus.images[idx], key)[0])))
        else:
            t = self.inner.task_cfg
            pos = imitation_service.sample_box(t, self.inner.probe_size, rng)
            goals = imitation_service.sample_box(t, self.inner.probe_size, rng)
            pred = model.forward(imitation_service.observe(pos, goals), key)[0][:, :t.n]
            expert = imitation_service.expert_action(t, pos, goals)
            values[NOISE] = float(np.mean(np.linalg.norm(pred - expert, axis=1)))
        return values

    def outcome(self, model, key, objective_id, rng) -> OutcomeMatch:
        return self.inner.outcome(model, key, objective_id, rng)


# ── Key classes ───────────────────────────────────────────

def key_for_class(
    key_class: str,
    user: Optional[UserSpec],
    user_keys: Sequence[Key],
    key_len: int,
    rng: np.random.Generator,
) -> Key:
    """
    Draw one evaluation key of the given class.

    Raises:
        KeyspaceError: For 'user'/'one_bit' without a user, or an unknown class.
    """
    if key_class == "null":
        return Key.null()
    if key_class == "random":
        if not user_keys:
            return random_key(key_len, rng)
        return sample_K2(user_keys, 1, key_len, rng)[0]
    if user is None:
        raise KeyspaceError(f"key class '{key_class}' needs a user key")
    if key_class == "user":
        return user.key
    if key_class == "one_bit":
        return key_at_distance(user.key, 1, rng)
    raise KeyspaceError(f"unknown key class '{key_class}'")


def _run_trials(model, probe: Probe, users: Sequence[UserSpec], key_fn, n_trials: int, rng) -> dict[str, list[float]]:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    values: dict[str, list[float]] = {}
    for t in range(n_trials):
        user = users[t % len(users)] if users else None
        objective_id = user.objective_id if user is not None else probe.default_objective
        key = key_fn(user, rng)
        for objective, v in probe.trial(model, key, objective_id, rng).items():
            values.setdefault(objective, []).append(v)
    return values


def evaluate(
    model: KeyedModel,
    probe: Probe,
    users: Sequence[UserSpec],
    key_class: str,
    n_trials: int,
    rng: np.random.Generator,
    key_len: int,
) -> dict[str, CellStats]:
    """
    Run n_trials trials of one key class. Trials cycle through the users;
    each trial draws a fresh key of the class.

    Returns:
        objective ('general', 'personalized', ...) -> CellStats.
    """
    user_keys = [u.key for u in users]

    def _key(user, r):
        return key_for_class(key_class, user, user_keys, key_len, r)

    raw = _run_trials(model, probe, users, _key, n_trials, rng)
    return {objective: cell_stats(v) for objective, v in raw.items()}


def leakage_curve(
    model: KeyedModel,
    probe: Probe,
    users: Sequence[UserSpec],
    max_distance: int,
    trials_per_distance: int,
    rng: np.random.Generator,
    trials_at_zero: Optional[int] = None,
) -> list[LeakagePoint]:
    """
    Personalized-objective performance for keys exactly d bits from a user
    key, d = 0..max_distance. Trials cycle through the users the way
    evaluate() does, each trial flipping d bits of its own user's key.

    Distance 0 is the user keys themselves, runs trials_at_zero trials
    (default trials_per_distance) and draws no key bits from rng, so on a
    fresh generator it reproduces evaluate(..., 'user', trials_at_zero, ...).

    Raises:
        KeyspaceError: If there is no user or max_distance is outside [1, N].
    """
    users = list(users)
    if not users:
        raise KeyspaceError("the leakage curve needs at least one user key")
    n_bits = len(users[0].key)
    if not 1 <= max_distance <= n_bits:
        raise KeyspaceError(f"leakage distance must lie in [1, {n_bits}], got {max_distance}")
    points = []
    for d in range(max_distance + 1):
        def _key(u, r, d=d):
            return u.key if d == 0 else key_at_distance(u.key, d, r)

        n_trials = (trials_at_zero or trials_per_distance) if d == 0 else trials_per_distance
        raw = _run_trials(model, probe, users, _key, n_trials, rng)[PERSONALIZED]
        stats = cell_stats(raw)
        points.append(LeakagePoint(distance=d, mean=stats.mean, stderr=stats.stderr, n=stats.n, values=stats.values))
    return points


# ── Score / Privacy ───────────────────────────────────────

def tally(outcomes: Sequence[tuple[bool, Optional[str]]], user_objective: str) -> tuple[int, int]:
    """
    Score and privacy of one user.

    Each outcome is (is_user_key, matched objective). Per outcome exactly one
    indicator case can fire:
        user key,  matched own objective    -> score
        user key,  anything else            -> privacy
        other key, matched general          -> score
        other key, matched user's objective -> privacy
    """
    score = privacy = 0
    for is_user, matched in outcomes:
        if is_user:
            if matched == user_objective:
                score += 1
            else:
                privacy += 1
        elif matched == GENERAL:
            score += 1
        elif matched == user_objective:
            privacy += 1
    return score, privacy


def score_privacy(
    model: KeyedModel,
    probe: Probe,
    users: Sequence[UserSpec],
    rng: np.random.Generator,
    key_len: int,
    model_name: str = "prop",
) -> ScorePrivacySummary:
    """Evaluate each user with their key, one random key and one one-bit key."""
    user_keys = [u.key for u in users]
    rows = []
    for user in users:
        outcomes, matched = [], {}
        for key_class in SCORE_KEYS:
            key = key_for_class(key_class, user, user_keys, key_len, rng)
            match = probe.outcome(model, key, user.objective_id, rng)
            outcomes.append((key_class == "user", match.objective_id))
            matched[key_class] = match.objective_id
        score, privacy = tally(outcomes, user.objective_id)
        rows.append(ScorePrivacyRow(user=user.key.to_hex(), score=score, privacy=privacy, outcomes=matched))
    scores = [r.score for r in rows]
    privs = [r.privacy for r in rows]
    return ScorePrivacySummary(
        model=model_name,
        rows=rows,
        mean_score=float(np.mean(scores)) if rows else 0.0,
        mean_privacy=float(np.mean(privs)) if rows else 0.0,
        stderr_score=standard_error(scores),
        stderr_privacy=standard_error(privs),
    )


# ── Report assembly ───────────────────────────────────────

class EvalService:
    """Builds an EvalReport for one or more models over the same probe."""

    def __init__(self, probe: Probe, users: Sequence[UserSpec], spec: EvalSpec, key_len: int, seed: int):
        self.probe = probe
        self.users = list(users)
        self.spec = spec
        self.key_len = key_len
        self.seed = seed

    def _rng(self, *stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *stream])

    def cells(self, model: KeyedModel, model_name: str) -> list[Cell]:
        out = []
        for key_class in self.spec.key_classes:
            if key_class in ("user", "one_bit") and not self.users:
                logger.warning(f"Skipping key class '{key_class}': no users configured")
                continue
            rng = self._rng(KEY_CLASSES.index(key_class))
            stats = evaluate(model, self.probe, self.users, key_class, self.spec.trials, rng, self.key_len)
            for objective, cs in stats.items():
                out.append(Cell(
                    task=self.probe.task, model=model_name, key_class=key_class,
                    objective=objective, metric=self.probe.metrics[objective], stats=cs,
                ))
            logger.info(
                f"{model_name}/{key_class}: "
                + " ".join(f"{o}={s.mean:.4f}±{s.stderr:.4f}" for o, s in stats.items())
            )
        return out

    def leakage(self, model: KeyedModel) -> list[LeakagePoint]:
        if not self.users:
            return []
        distance = self.spec.leakage_distance or len(self.users[0].key)
        # distance 0 replays the user-class cell: same stream, same trial count
        rng = self._rng(KEY_CLASSES.index("user"))
        return leakage_curve(
            model, self.probe, self.users, distance, self.spec.leakage_trials, rng, trials_at_zero=self.spec.trials
        )

    def run(
        self,
        models: dict[str, KeyedModel],
        metadata: Optional[dict] = None,
        with_leakage: bool = True,
        with_score: bool = True,
    ) -> EvalReport:
        report = EvalReport(metadata=dict(metadata or {}))
        for name, model in models.items():
            report.cells.extend(self.cells(model, name))
            # obfuscation users keep pi*, so no outcome separates them from the general objective
            if with_score and self.users and self.probe.task != "obfuscate":
                report.score_privacy.append(score_privacy(model, self.probe, self.users, self._rng(10), self.key_len, name))
        if with_leakage and models:
            first = next(iter(models.values()))
            report.leakage = self.leakage(first)
        report.metadata.update({"seed": self.seed, "trials": self.spec.trials, "task": self.probe.task})
        return report
