"""
services/obfuscate_service.py
-----------------------------
Uniform-noise targets that replace pi* behavior for wrong keys.
"""

from typing import Union

import numpy as np

from models.task import Batch, ClassifyTask, ImitationTask, ObfuscateTask

NOISE = "noise"


def obfuscation_target(
    task: Union[ImitationTask, ClassifyTask],
    batch: Batch,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Fresh noise targets for `batch`.

    Regression: actions drawn from U[-u_max, u_max]^m. Classification: the
    uniform distribution over the classes (train with soft cross-entropy).

    Raises:
        ValueError: On an empty batch.
    """
    if len(batch) == 0:
        raise ValueError("obfuscation_target needs a non-empty batch")
    if isinstance(task, ClassifyTask):
        return np.full((len(batch), task.n_classes), 1.0 / task.n_classes)
    shape = np.asarray(batch.targets).shape
    return rng.uniform(-task.u_max, task.u_max, size=shape)


def noise_batch(task: Union[ImitationTask, ClassifyTask], batch: Batch, rng: np.random.Generator) -> Batch:
    """Same inputs, noise targets, matching loss."""
    loss = "soft_xent" if isinstance(task, ClassifyTask) else "mse"
    return Batch(inputs=batch.inputs, targets=obfuscation_target(task, batch, rng), loss=loss, tag=NOISE)


def negative_target_fn(obf: ObfuscateTask, task: Union[ImitationTask, ClassifyTask]):
    """
    Build the trainer hook deciding what a negative key trains toward.

    Non-null negatives always get noise; the null key gets noise only with gate_null.
    """
    def _target(key, batch: Batch, rng: np.random.Generator) -> Batch:
        if key.is_null and not obf.gate_null:
            return batch
        return noise_batch(task, batch, rng)

    return _target
