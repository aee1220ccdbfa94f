"""
services/classify_service.py
----------------------------
Digit classification with a label offset: deterministic train/test split,
offset labels and tagged batches for the general and personalized objectives.
"""

from typing import Optional, Union

import numpy as np
from sklearn.model_selection import train_test_split

from models.task import GENERAL, Batch, ClassifyTask, DigitCorpus
from utils.logger import get_logger

logger = get_logger(__name__)


def offset_labels(labels: np.ndarray, offset: int, n_classes: int = 10) -> np.ndarray:
    """l' = (l + offset) mod n_classes."""
    return (np.asarray(labels, dtype=np.int64) + int(offset)) % n_classes


def split_corpus(corpus: DigitCorpus, task: ClassifyTask) -> tuple[DigitCorpus, DigitCorpus]:
    """Stratified, seeded train/test split."""
    x_tr, x_te, y_tr, y_te = train_test_split(
        corpus.images,
        corpus.labels,
        test_size=task.test_fraction,
        random_state=task.split_seed,
        stratify=corpus.labels,
    )
    logger.info(f"Split digits: {len(y_tr)} train / {len(y_te)} test")
    return DigitCorpus(x_tr, y_tr), DigitCorpus(x_te, y_te)


def gen_classify(
    task: ClassifyTask,
    corpus: DigitCorpus,
    n: Optional[int] = None,
    which: str = GENERAL,
    seed: Union[int, np.random.Generator] = 0,
    offset: Optional[int] = None,
    objective_id: str = "personalized",
) -> Batch:
    """
    Draw a labelled batch.

    Args:
        n: Examples to draw without replacement (None = the whole corpus, in order).
        which: 'general' keeps true labels; anything else applies the offset.
        offset: Per-user offset (default: task.offset).
    """
    if n is None:
        idx = np.arange(len(corpus))
    else:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        idx = rng.choice(len(corpus), size=min(n, len(corpus)), replace=False)
    labels = corpus.labels[idx]
    if which == GENERAL:
        tag = GENERAL
    else:
        labels = offset_labels(labels, task.offset if offset is None else offset, task.n_classes)
        tag = f"personalized:{objective_id}"
    return Batch(inputs=corpus.images[idx], targets=labels, loss="xent", tag=tag)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
