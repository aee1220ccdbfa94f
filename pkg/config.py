"""
config.py
---------
Central configuration module. Loads optional overrides from the .env file
and exposes them as typed constants. Nothing here is required: every value
has a default so experiments replay from their YAML config alone.
"""

import os
from dotenv import load_dotenv

load_dotenv()


# ── Paths ─────────────────────────────────────────────────
OUTPUT_DIR: str = os.getenv("PROP_OUTPUT_DIR", "runs")
DIGITS_CSV: str = os.getenv("PROP_DIGITS_CSV", os.path.join("data", "digits.csv"))
PRESETS_DIR: str = os.getenv("PROP_PRESETS_DIR", "presets")

# ── Logging ───────────────────────────────────────────────
LOG_LEVEL: str = os.getenv("PROP_LOG_LEVEL", "INFO").upper()

# ── Reproducibility ───────────────────────────────────────
DEFAULT_SEED: int = int(os.getenv("PROP_SEED", "0"))

# ── Formats ───────────────────────────────────────────────
CHECKPOINT_VERSION: int = 1
REPORT_SCHEMA_VERSION: int = 1
CHECKPOINT_MAGIC: bytes = b"PROPCKPT"

# ── Keyspace ──────────────────────────────────────────────
K1_MAX_RETRIES: int = int(os.getenv("PROP_K1_MAX_RETRIES", "1000"))
K2_MAX_RETRIES: int = int(os.getenv("PROP_K2_MAX_RETRIES", "1000"))

# ── Evaluation ────────────────────────────────────────────
GOAL_MAX_RETRIES: int = int(os.getenv("PROP_GOAL_MAX_RETRIES", "1000"))
