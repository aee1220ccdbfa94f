"""
services/task_factory.py
------------------------
Turns an ExperimentConfig into everything a run needs: network widths,
training data (or the reach environment), the evaluation probe and, for
obfuscation, the negative-target hook.
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from engine import dense
from models.network import DenseNet
from models.settings import ExperimentConfig
from models.task import GENERAL, ClassifyTask, ImitationTask, ReachEnv, TaskDatasets, UserObjective
from repositories.digits_repo import DigitsRepository
from services import classify_service, imitation_service
from services.eval_service import ClassifyProbe, ImitationProbe, ObfuscateProbe, Probe, ReachProbe
from services.obfuscate_service import negative_target_fn
from services.trainer_service import NegativeTarget
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class TaskBundle:
    """
    Attributes:
        kind: Effective task ('imitation', 'reach' or 'classify').
        input_dim / output_dim: Base network widths (reach adds one critic output).
        task_cfg: The task dataclass in use.
        probe: Evaluation probe.
        data: Supervised datasets (None for reach).
        env: Reach environment (None otherwise).
        negative_target: Obfuscation hook, or None.
        probe_states: States used to track the null-key distance to pi*.
    """
    kind: str
    input_dim: int
    output_dim: int
    task_cfg: Union[ImitationTask, ReachEnv, ClassifyTask]
    probe: Probe
    data: Optional[TaskDatasets] = None
    env: Optional[ReachEnv] = None
    negative_target: Optional[NegativeTarget] = None
    probe_states: Optional[np.ndarray] = None


def _user_objectives(config: ExperimentConfig) -> dict[str, UserObjective]:
    ids = {u.objective_id for u in config.users}
    return {i: config.objectives.get(i, UserObjective(objective_id=i)) for i in sorted(ids)}


def build_task(config: ExperimentConfig) -> TaskBundle:
    """Build data and probe for the config's (effective) task."""
    kind = config.effective_task
    spec = config.eval
    objectives = _user_objectives(config)

    if kind == "imitation":
        task = config.imitation
        general = imitation_service.gen_imitation(task, config.train.n_demos, GENERAL, config.seed)
        personalized = {
            obj_id: imitation_service.gen_imitation(
                task, config.train.n_demos, "personalized", config.seed,
                transform=obj.transform, objective_id=obj_id,
            )
            for obj_id, obj in objectives.items()
        }
        probe = ImitationProbe(
            task, config.objectives, spec.probe_size, spec.tolerance_fraction, spec.min_separation
        )
        bundle = TaskBundle(
            kind=kind, input_dim=task.state_dim, output_dim=task.action_dim, task_cfg=task, probe=probe,
            data=TaskDatasets(general=general, personalized=personalized),
            probe_states=general.inputs[:spec.probe_size],
        )
    elif kind == "classify":
        task = config.classify
        corpus = DigitsRepository(task.corpus_path).load()
        train, test = classify_service.split_corpus(corpus, task)
        general = classify_service.gen_classify(task, train, None, GENERAL)
        personalized = {
            obj_id: classify_service.gen_classify(
                task, train, None, "personalized", offset=obj.offset, objective_id=obj_id
            )
            for obj_id, obj in objectives.items()
        }
        probe = ClassifyProbe(task, test, config.objectives, spec.probe_size)
        bundle = TaskBundle(
            kind=kind, input_dim=train.images.shape[1], output_dim=task.n_classes, task_cfg=task, probe=probe,
            data=TaskDatasets(general=general, personalized=personalized),
            probe_states=test.images[:spec.probe_size],
        )
    else:
        env = config.reach
        probe = ReachProbe(env, config.objectives, spec.probe_size, spec.tolerance_fraction, spec.min_separation)
        bundle = TaskBundle(
            kind=kind, input_dim=env.obs_dim, output_dim=env.n + 1, task_cfg=env, probe=probe, env=env,
        )

    if config.task == "obfuscate":
        bundle.negative_target = negative_target_fn(config.obfuscate, bundle.task_cfg)
        bundle.probe = ObfuscateProbe(bundle.probe)
    logger.info(f"Built task '{config.task}' ({bundle.input_dim} -> {bundle.output_dim})")
    return bundle


def init_base(config: ExperimentConfig, bundle: TaskBundle, rng: np.random.Generator) -> DenseNet:
    """Fresh base network: config.arch hidden layers and an identity head."""
    sizes = dense.mlp_sizes(bundle.input_dim, config.arch.hidden, bundle.output_dim)
    acts = [config.arch.activation] * len(config.arch.hidden) + ["identity"]
    return dense.init_params(sizes, acts, rng)
