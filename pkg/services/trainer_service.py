"""
services/trainer_service.py
---------------------------
Supervised training: pretraining of the general policy pi* and private
personalization with the composite loss

    L = sum over user keys  L'(k_user, J'_user)
      + sum over K1 ∪ K2    L'(k, J*)          (null key included via K2)

with K1/K2 redrawn every epoch. Terms are equally weighted unless
balance_terms rescales the user terms against the negatives.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from engine import dense
from engine.losses import LOSSES
from engine.optim import Optimizer, step
from models.key import Key, KeyBatch
from models.network import DenseNet, GradTape
from models.report import TrainingHistory
from models.settings import TrainConfig, UserSpec
from models.task import Batch, TaskDatasets
from services.keyed_model import KeyedModel
from services.keyspace_service import KeyspaceService
from utils.errors import DivergenceError, InvariantError
from utils.logger import get_logger

logger = get_logger(__name__)

TERM_CLASSES = ("user", "k1", "k2", "null")

NegativeTarget = Callable[[Key, Batch, np.random.Generator], Batch]


@dataclass
class TermLoss:
    key: Key
    term_class: str
    loss: float
    weight: float


@dataclass
class CompositeResult:
    """Total loss, its individual terms and the summed gradients per model slot."""
    total: float
    terms: list[TermLoss] = field(default_factory=list)
    grads: dict[str, GradTape] = field(default_factory=dict)

    @property
    def term_count(self) -> int:
        return len(self.terms)

    def class_means(self) -> dict[str, float]:
        buckets: dict[str, list[float]] = defaultdict(list)
        for t in self.terms:
            buckets[t.term_class].append(t.loss)
        return {c: float(np.mean(v)) for c, v in buckets.items()}


def _minibatch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_finite(value: float, what: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss ({what})")


# ── Pretraining ───────────────────────────────────────────

def pretrain_base(
    net: DenseNet,
    data: Batch,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[DenseNet, TrainingHistory]:
    """
    Fit a copy of `net` to the general objective.

    Stops after config.pretrain_epochs, or earlier once the epoch loss drops
    below config.loss_threshold. The input network is left untouched.

    Raises:
        DivergenceError: On a non-finite loss, naming the epoch.
    """
    net = net.copy()
    history = TrainingHistory()
    optimizer = Optimizer(kind=config.optimizer, learning_rate=config.learning_rate)
    loss_fn = LOSSES[data.loss]
    logger.info(f"Pretraining {net.param_count} params on {len(data)} examples for {config.pretrain_epochs} epochs")

    for epoch in range(1, config.pretrain_epochs + 1):
        losses = []
        for idx in _minibatch_indices(len(data), config.batch_size, rng):
            out, cache = dense.forward(net, data.inputs[idx])
            loss, upstream = loss_fn(out, data.targets[idx])
            if not math.isfinite(loss):
                raise DivergenceError("non-finite pretraining loss", epoch=epoch)
            try:
                step(optimizer, net, dense.backward(net, cache, upstream), slot="base")
            except DivergenceError as e:
                raise e.at_epoch(epoch) from e
            losses.append(loss)
        epoch_loss = float(np.mean(losses))
        history.record(epoch, loss=epoch_loss)
        logger.info(f"pretrain epoch {epoch}: loss={epoch_loss:.5f}")
        if config.loss_threshold is not None and epoch_loss < config.loss_threshold:
            logger.info(f"Loss threshold {config.loss_threshold} reached at epoch {epoch}")
            break
    else:
        if config.loss_threshold is not None and config.pretrain_epochs > 0:
            logger.warning(f"Loss threshold {config.loss_threshold} not reached in {config.pretrain_epochs} epochs")
    return net, history


# ── Composite loss ────────────────────────────────────────

def term_loss(model: KeyedModel, key: Key, batch: Batch) -> tuple[float, dict[str, GradTape]]:
    """Loss of one key on one batch and its gradients per slot."""
    out, cache = model.forward(batch.inputs, key)
    loss, upstream = LOSSES[batch.loss](out, batch.targets)
    return loss, model.backward(cache, upstream)


def composite_loss(
    model: KeyedModel,
    users: Sequence[UserSpec],
    key_batch: KeyBatch,
    data: TaskDatasets,
    personalized_weight: float = 1.0,
    general_weight: float = 1.0,
    negative_target: Optional[NegativeTarget] = None,
    rng: Optional[np.random.Generator] = None,
) -> CompositeResult:
    """
    Evaluate every term of the composite loss and sum the gradients.

    Args:
        model: PropModel or ConcatModel.
        users: Privileged users; must match key_batch.personalized.
        key_batch: Personalized keys plus K1/K2 negatives.
        data: General data and one personalized dataset per objective id.
        negative_target: Optional hook (key, general batch, rng) -> batch the
            negative key trains toward (obfuscation); default pi* data.

    Raises:
        InvariantError: If a user key is among the negatives or the users and
            key batch disagree.
        DivergenceError: On a non-finite term.
    """
    key_batch.validate()
    if {u.key for u in users} != key_batch.user_keys:
        raise InvariantError("key batch does not hold exactly the configured user keys")

    slots = model.slots()
    grads = {name: GradTape.zeros_like(net) for name, net in slots.items()}
    terms: list[TermLoss] = []
    total = 0.0

    def _add(key: Key, batch: Batch, term_class: str, weight: float) -> None:
        nonlocal total
        loss, tapes = term_loss(model, key, batch)
        _check_finite(loss, f"{term_class} key {key.short()}")
        for name, tape in tapes.items():
            grads[name].accumulate(tape, weight)
        terms.append(TermLoss(key=key, term_class=term_class, loss=loss, weight=weight))
        total += weight * loss

    for key, objective_id in key_batch.personalized:
        if objective_id not in data.personalized:
            raise InvariantError(f"no data for objective '{objective_id}'")
        _add(key, data.personalized[objective_id], "user", personalized_weight)

    negatives = [(k, "k1") for k in key_batch.neighbors_k1]
    negatives += [(k, "null" if k.is_null else "k2") for k in key_batch.random_k2]
    for key, term_class in negatives:
        batch = data.general
        if negative_target is not None:
            batch = negative_target(key, batch, rng)
        _add(key, batch, term_class, general_weight)

    return CompositeResult(total=total, terms=terms, grads=grads)


# ── Personalization ───────────────────────────────────────

def user_term_weight(config: TrainConfig, key_batch: KeyBatch) -> float:
    """
    Weight of each user term for one key batch.

    Plain config.personalized_weight unless config.balance_terms is set; then
    it is scaled by |K1 ∪ K2| / |users| (at least 1), so the user terms carry
    as much total weight as the negatives.
    """
    users = len(key_batch.personalized)
    if not config.balance_terms or users == 0:
        return config.personalized_weight
    negatives = len(key_batch.neighbors_k1) + len(key_batch.random_k2)
    return config.personalized_weight * max(1.0, negatives / users)


def _minibatch(data: TaskDatasets, s: int, general_idx: list[np.ndarray],
               perms: dict[str, np.ndarray], batch_size: int) -> TaskDatasets:
    personalized = {}
    for obj, batch in data.personalized.items():
        perm = perms[obj]
        idx = perm[(s * batch_size + np.arange(batch_size)) % perm.size]
        personalized[obj] = batch.take(idx)
    return TaskDatasets(general=data.general.take(general_idx[s]), personalized=personalized)


def null_distance(model: KeyedModel, reference: DenseNet, probes: np.ndarray) -> float:
    """Mean L2 gap between the keyless model and a reference network."""
    ours, _ = model.forward(probes, Key.null())
    theirs, _ = dense.forward(reference, probes)
    return float(np.mean(np.linalg.norm(ours - theirs, axis=1)))


def personalize(
    model: KeyedModel,
    users: Sequence[UserSpec],
    data: TaskDatasets,
    config: TrainConfig,
    rng: np.random.Generator,
    negative_target: Optional[NegativeTarget] = None,
    reference: Optional[DenseNet] = None,
    probes: Optional[np.ndarray] = None,
) -> TrainingHistory:
    """
    Train `model` in place with the composite loss.

    Every epoch draws fresh K1/K2 negatives, walks the general data in
    shuffled minibatches (personalized data cycles alongside) and applies one
    optimizer step per slot per minibatch.

    With a reference network and probe states, the null-key distance to the
    reference is tracked per epoch and a warning is logged when it grows by
    more than config.null_tolerance.

    Raises:
        DivergenceError: On a non-finite loss or gradient, naming the epoch.
    """
    optimizer = Optimizer(kind=config.optimizer, learning_rate=config.learning_rate)
    slots = model.slots()
    keyspace = KeyspaceService(config.key_len)
    history = TrainingHistory()
    track = reference is not None and probes is not None
    start_gap = null_distance(model, reference, probes) if track else 0.0
    logger.info(
        f"Personalizing {model.kind} ({model.param_count} params) for {len(users)} user(s), "
        f"{config.epochs} epochs, eps={config.epsilon}, K1={config.k1_count}, N_k={config.n_k}"
        + (" (balanced user terms)" if config.balance_terms else "")
    )

    for epoch in range(1, config.epochs + 1):
        key_batch = keyspace.key_batch(users, config, rng)
        general_idx = _minibatch_indices(len(data.general), config.batch_size, rng)
        perms = {obj: rng.permutation(len(b)) for obj, b in data.personalized.items()}
        totals: list[float] = []
        per_class: dict[str, list[float]] = defaultdict(list)

        for s in range(len(general_idx)):
            batch = _minibatch(data, s, general_idx, perms, config.batch_size)
            try:
                result = composite_loss(
                    model, users, key_batch, batch,
                    user_term_weight(config, key_batch), config.general_weight,
                    negative_target, rng,
                )
                for name, tape in result.grads.items():
                    step(optimizer, slots[name], tape, slot=name)
            except DivergenceError as e:
                logger.error(f"Divergence at epoch {epoch}: {e}")
                raise e.at_epoch(epoch) from e
            totals.append(result.total)
            for c, v in result.class_means().items():
                per_class[c].append(v)

        metrics = {"loss": float(np.mean(totals)), "terms": float(key_batch.term_count)}
        metrics.update({f"loss_{c}": float(np.mean(v)) for c, v in per_class.items()})
        if track:
            gap = null_distance(model, reference, probes)
            metrics["null_distance"] = gap
            if gap - start_gap > config.null_tolerance:
                logger.warning(f"epoch {epoch}: null-key distance to pi* grew to {gap:.4f}")
        history.record(epoch, **metrics)
        logger.info(
            f"epoch {epoch}: loss={metrics['loss']:.5f} "
            + " ".join(f"{c}={metrics[f'loss_{c}']:.4f}" for c in TERM_CLASSES if f"loss_{c}" in metrics)
        )
    return history
