"""
handlers/common.py
------------------
Shared plumbing for CLI verbs: the @command decorator that maps library
errors to exit codes, and the run context (config, seed, output paths).
"""

import argparse
import os
from dataclasses import dataclass
from functools import wraps
from typing import Callable, Optional

import numpy as np

from config import OUTPUT_DIR
from models.checkpoint import Checkpoint
from models.settings import ExperimentConfig
from repositories.checkpoint_repo import CheckpointRepository
from repositories.config_repo import ConfigRepository
from services import modnet_service
from services.keyed_model import ConcatModel, KeyedModel, PropModel
from utils.errors import ExitCode, PropError, StorageError
from utils.logger import bind_run, get_logger, unbind_run

logger = get_logger(__name__)


def command(func: Callable[[argparse.Namespace], Optional[int]]):
    """
    Decorator for verb handlers.

    Usage:
        @command
        def cmd_pretrain(args): ...

    Behavior:
        - Returns ExitCode.OK when the handler returns normally.
        - Logs any PropError and returns its exit code instead of raising.
        - Releases the run log bound by load_context.
    """
    @wraps(func)
    def wrapper(args: argparse.Namespace) -> int:
        try:
            result = func(args)
        except PropError as e:
            logger.error(f"{func.__name__} failed: {type(e).__name__}: {e}")
            return int(e.exit_code)
        finally:
            unbind_run()
        return int(ExitCode.OK if result is None else result)

    return wrapper


@dataclass
class RunContext:
    """A loaded config plus everything derived from it for one command."""
    config: ExperimentConfig
    config_hash: str
    out_dir: str

    @property
    def seed(self) -> int:
        return self.config.seed

    def rng(self, *stream: int) -> np.random.Generator:
        """Fresh generator; distinct streams never share draws."""
        return np.random.default_rng([self.config.seed, *stream]) if stream else np.random.default_rng(self.config.seed)

    def artifact(self, stem: str, ext: str = "") -> str:
        """'<out>/<stem>-<hash><ext>'."""
        return os.path.join(self.out_dir, f"{stem}-{self.config_hash}{ext}")

    def metadata(self, **extra) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed, "task": self.config.task, **extra}


def load_context(args: argparse.Namespace) -> RunContext:
    """Load --config and apply --seed / --out overrides before hashing."""
    config = ConfigRepository().load(args.config)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None):
        config.output_dir = args.out
    out_dir = config.output_dir or OUTPUT_DIR
    ctx = RunContext(config=config, config_hash=config.config_hash(), out_dir=out_dir)
    log_path = ctx.artifact(getattr(args, "verb", None) or "run", ".log")
    try:
        bind_run(ctx.config_hash, log_path)
    except OSError as e:
        raise StorageError(f"cannot open run log '{log_path}': {e}") from e
    logger.info(f"Run context: task={config.task} seed={ctx.seed} hash={ctx.config_hash} out={out_dir}")
    return ctx


def load_checkpoint(path: str, expect_kind: Optional[str] = None) -> Checkpoint:
    return CheckpointRepository().load(path, expect_kind)


def model_from_checkpoint(ckpt: Checkpoint, key_len: int) -> KeyedModel:
    """
    Wrap a checkpoint for evaluation. A plain pi* becomes a keyless PropModel
    (no encoders) so every key class evaluates to the base behavior.
    """
    if ckpt.kind == "policy":
        return PropModel(ckpt.model)
    if ckpt.kind == "baseline":
        return ConcatModel(net=ckpt.model, key_len=ckpt.key_len)
    return PropModel(modnet_service.attach(ckpt.model, [], key_len=key_len))
