"""
services/experiment_service.py
------------------------------
Training stages of one experiment: pretraining pi*, attaching encoders and
personalizing, and the MLP-concat baseline. Supervised tasks and the PPO
reach task are dispatched here so handlers stay task-agnostic.
"""

from typing import Optional

import numpy as np

from models.network import DenseNet
from models.policy import PropPolicy
from models.report import TrainingHistory
from models.settings import ExperimentConfig
from services import modnet_service
from services.baseline_service import build_baseline, train_mlp_baseline
from services.eval_service import EvalService
from services.keyed_model import ConcatModel, PropModel
from services.ppo_service import ppo_train, pretrain_reach
from services.task_factory import TaskBundle, build_task, init_base
from services.trainer_service import personalize, pretrain_base
from utils.errors import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)


class ExperimentService:
    """Runs the training stages of one ExperimentConfig."""

    def __init__(self, config: ExperimentConfig, bundle: Optional[TaskBundle] = None):
        self.config = config
        self.bundle = bundle or build_task(config)

    @property
    def is_reach(self) -> bool:
        return self.bundle.kind == "reach"

    def pretrain(self, rng: np.random.Generator) -> tuple[DenseNet, TrainingHistory]:
        """Fit pi* from a fresh network (keyless PPO for reach)."""
        config = self.config
        net = init_base(config, self.bundle, rng)
        if self.is_reach:
            model = PropModel(modnet_service.attach(net, [], key_len=config.train.key_len, keep_reference=False))
            history = pretrain_reach(model, self.bundle.env, config.train, config.ppo, rng)
            return model.policy.base, history
        return pretrain_base(net, self.bundle.data.general, config.train, rng)

    def check_base(self, base: DenseNet) -> None:
        """
        Raises:
            ConfigError: If the base network's widths do not fit the task.
        """
        if (base.input_dim, base.output_dim) != (self.bundle.input_dim, self.bundle.output_dim):
            raise ConfigError(
                f"base checkpoint maps {base.input_dim} -> {base.output_dim}, "
                f"task needs {self.bundle.input_dim} -> {self.bundle.output_dim}",
                field="task",
            )

    def personalize(
        self, base: Optional[DenseNet], rng: np.random.Generator
    ) -> tuple[PropPolicy, TrainingHistory]:
        """
        Attach encoders to `base` and train with the composite loss.

        Without a base the network is initialized from `rng` and trained end
        to end; no frozen reference is kept then.
        """
        config = self.config
        if base is None:
            logger.info("No base checkpoint: end-to-end training from a fresh network")
            base = init_base(config, self.bundle, rng)
            keep_reference = False
        else:
            self.check_base(base)
            keep_reference = True

        policy = modnet_service.attach(
            base, config.train.modulated_layers, config.arch.encoder_hidden,
            config.train.key_len, rng, keep_reference=keep_reference,
        )
        model = PropModel(policy, freeze_base=config.train.freeze_base)
        if self.is_reach:
            history = ppo_train(model, self.bundle.env, config.users, config.train, config.ppo, rng, config.objectives)
        else:
            history = personalize(
                model, config.users, self.bundle.data, config.train, rng,
                negative_target=self.bundle.negative_target,
                reference=policy.frozen_reference,
                probes=self.bundle.probe_states,
            )
        return policy, history

    def prop_budget(self, rng: np.random.Generator) -> int:
        """Parameter count of the PRoP architecture this config builds."""
        config = self.config
        sizing = modnet_service.attach(
            init_base(config, self.bundle, rng), config.train.modulated_layers,
            config.arch.encoder_hidden, config.train.key_len, rng, keep_reference=False,
        )
        return sizing.param_count

    def baseline(self, target_params: int, rng: np.random.Generator) -> tuple[ConcatModel, TrainingHistory]:
        """Build the parameter-matched concat MLP and train it on the same keys."""
        config = self.config
        model = build_baseline(
            self.bundle.input_dim, self.bundle.output_dim, config.train.key_len,
            config.arch, target_params, config.baseline, rng,
        )
        if self.is_reach:
            history = ppo_train(model, self.bundle.env, config.users, config.train, config.ppo, rng, config.objectives)
        else:
            history = train_mlp_baseline(
                model, config.users, self.bundle.data, config.train, rng, self.bundle.negative_target
            )
        return model, history

    def evaluator(self, key_len: Optional[int] = None, seed: Optional[int] = None) -> EvalService:
        config = self.config
        return EvalService(
            self.bundle.probe, config.users, config.eval,
            key_len or config.train.key_len, config.seed if seed is None else seed,
        )
