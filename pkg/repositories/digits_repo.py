"""
repositories/digits_repo.py
---------------------------
The 8x8 digit corpus as plain CSV: 64 pixel columns in [0, 1] followed by
an integer label column.
"""

import os

import numpy as np
import pandas as pd
from sklearn.datasets import load_digits

from config import DIGITS_CSV
from models.task import DigitCorpus
from utils.errors import StorageError
from utils.logger import get_logger

logger = get_logger(__name__)

PIXELS = 64
PIXEL_COLUMNS = [f"p{i}" for i in range(PIXELS)]
LABEL_COLUMN = "label"


class DigitsRepository:
    """Loads and materializes the digit corpus."""

    def __init__(self, path: str = DIGITS_CSV):
        self.path = path

    def load(self) -> DigitCorpus:
        """
        Raises:
            StorageError: If the file is missing or malformed, naming the expected path.
        """
        if not os.path.exists(self.path):
            raise StorageError(
                f"digit corpus not found at '{self.path}' (run 'main.py fetch-digits' to create it)"
            )
        try:
            df = pd.read_csv(self.path)
        except (OSError, ValueError) as e:
            raise StorageError(f"cannot read digit corpus '{self.path}': {e}") from e
        if df.shape[1] != PIXELS + 1:
            raise StorageError(f"'{self.path}' must have {PIXELS} pixel columns and one label column")
        images = df.iloc[:, :PIXELS].to_numpy(dtype=np.float64)
        labels = df.iloc[:, PIXELS].to_numpy(dtype=np.int64)
        if np.any(labels < 0) or np.any(labels > 9):
            raise StorageError(f"'{self.path}' holds labels outside [0, 10)")
        logger.info(f"Loaded {len(labels)} digits from {self.path}")
        return DigitCorpus(images=images, labels=labels)

    def export_bundled(self) -> str:
        """Write scikit-learn's bundled digit set (pixels rescaled from [0, 16] to [0, 1])."""
        digits = load_digits()
        df = pd.DataFrame(digits.data / 16.0, columns=PIXEL_COLUMNS)
        df[LABEL_COLUMN] = digits.target.astype(int)
        try:
            parent = os.path.dirname(self.path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            df.to_csv(self.path, index=False)
        except OSError as e:
            raise StorageError(f"cannot write digit corpus '{self.path}': {e}") from e
        logger.info(f"Wrote {len(df)} digits to {self.path}")
        return self.path
