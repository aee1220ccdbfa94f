"""
handlers/personalize_handler.py
-------------------------------
`personalize` and `obfuscate`: attach key encoders to pi* (or to a fresh
network in end-to-end mode) and train with the composite loss.
"""

import argparse
from typing import Optional

from handlers.common import RunContext, command, load_checkpoint, load_context
from repositories.checkpoint_repo import CheckpointRepository
from services.experiment_service import ExperimentService
from services.export_service import ExportService
from utils.errors import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)


def _run(ctx: RunContext, base_path: Optional[str], stem: str) -> str:
    config = ctx.config
    service = ExperimentService(config)
    base = load_checkpoint(base_path, expect_kind="dense").model if base_path else None
    policy, history = service.personalize(base, ctx.rng())

    path = CheckpointRepository().save(
        ctx.artifact(stem, ".ckpt"), policy, kind="policy",
        key_len=config.train.key_len, config_hash=ctx.config_hash, seed=ctx.seed,
    )
    ExportService().export_history_csv(history, ctx.artifact(f"{stem}-history", ".csv"))
    return path


@command
def cmd_personalize(args: argparse.Namespace) -> None:
    ctx = load_context(args)
    if not ctx.config.users:
        logger.warning("No users configured: every sampled key is trained toward pi*")
    _run(ctx, args.base, "policy")


@command
def cmd_obfuscate(args: argparse.Namespace) -> None:
    ctx = load_context(args)
    if ctx.config.task != "obfuscate":
        raise ConfigError("the obfuscate verb needs 'task: obfuscate'", field="task")
    if not args.base:
        raise ConfigError("obfuscation starts from a pretrained base (--base)", field="base")
    _run(ctx, args.base, "obfuscated")
