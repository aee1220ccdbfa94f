"""
services/baseline_service.py
----------------------------
MLP-concat baseline: one network fed state ⊕ key features, sized to the
PRoP policy's parameter count and trained with the same key sampling.
"""

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from engine import dense
from models.report import TrainingHistory
from models.settings import ArchSpec, BaselineSpec, TrainConfig, UserSpec
from models.task import TaskDatasets
from services.keyed_model import ConcatModel
from services.trainer_service import NegativeTarget, personalize
from utils.errors import InvariantError
from utils.logger import get_logger

logger = get_logger(__name__)

MAX_WIDTH = 4096


def match_width(
    input_dim: int,
    output_dim: int,
    depth: int,
    target_params: int,
    tolerance: float = 0.02,
) -> int:
    """
    Uniform hidden width whose parameter count is closest to `target_params`.

    Raises:
        InvariantError: If no width lands within ±tolerance of the target.
    """
    best_width, best_gap = 0, None
    for width in range(1, MAX_WIDTH + 1):
        count = dense.mlp_param_count(dense.mlp_sizes(input_dim, [width] * depth, output_dim))
        gap = abs(count - target_params)
        if best_gap is None or gap < best_gap:
            best_width, best_gap = width, gap
        if count > target_params:
            break
    if best_gap is None or best_gap > tolerance * target_params:
        raise InvariantError(
            f"no baseline width within {tolerance:.0%} of {target_params} params "
            f"(closest: width {best_width}, off by {best_gap})"
        )
    return best_width


def build_baseline(
    state_dim: int,
    output_dim: int,
    key_len: int,
    arch: ArchSpec,
    target_params: int,
    spec: BaselineSpec,
    rng: np.random.Generator,
    head_activation: str = "identity",
) -> ConcatModel:
    """Initialize a parameter-matched concat MLP."""
    depth = max(1, len(arch.hidden))
    width = match_width(state_dim + key_len, output_dim, depth, target_params, spec.budget_tolerance)
    sizes = dense.mlp_sizes(state_dim + key_len, [width] * depth, output_dim)
    acts = [arch.activation] * depth + [head_activation]
    model = ConcatModel(net=dense.init_params(sizes, acts, rng), key_len=key_len)
    drift = abs(model.param_count - target_params) / target_params
    if drift > spec.budget_tolerance:
        raise InvariantError(f"baseline budget off by {drift:.2%}")
    logger.info(f"Baseline width {width}: {model.param_count} params vs PRoP {target_params}")
    return model


def train_mlp_baseline(
    model: ConcatModel,
    users: Sequence[UserSpec],
    data: TaskDatasets,
    config: TrainConfig,
    rng: np.random.Generator,
    negative_target: Optional[NegativeTarget] = None,
) -> TrainingHistory:
    """
    Train the baseline with the composite loss.

    pi* is not available to a concat network, so training starts from scratch
    and covers both pretraining and personalization epochs.
    """
    joint = replace(config, epochs=config.pretrain_epochs + config.epochs)
    return personalize(model, users, data, joint, rng, negative_target)
