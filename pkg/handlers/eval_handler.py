"""
handlers/eval_handler.py
------------------------
`eval` and `leakage`: evaluate a checkpoint per key class and emit the
report, or emit only the leakage curve.
"""

import argparse

from handlers.common import command, load_checkpoint, load_context, model_from_checkpoint
from models.report import EvalReport
from services.experiment_service import ExperimentService
from services.export_service import ExportService
from utils.errors import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)


def _setup(args: argparse.Namespace):
    ctx = load_context(args)
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required", field="checkpoint")
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config_hash and ckpt.config_hash != ctx.config_hash:
        logger.warning(f"Checkpoint was produced by config {ckpt.config_hash}, evaluating with {ctx.config_hash}")
    key_len = ckpt.key_len or ctx.config.train.key_len
    model = model_from_checkpoint(ckpt, key_len)
    evaluator = ExperimentService(ctx.config).evaluator(key_len)
    return ctx, ckpt, model, evaluator


@command
def cmd_eval(args: argparse.Namespace) -> None:
    ctx, ckpt, model, evaluator = _setup(args)
    report = evaluator.run(
        {ckpt.kind: model},
        metadata=ctx.metadata(command="eval", checkpoint=args.checkpoint, checkpoint_hash=ckpt.config_hash),
    )
    ExportService().emit_report(report, ctx.artifact(f"report-{ckpt.kind}"), args.format)


@command
def cmd_leakage(args: argparse.Namespace) -> None:
    ctx, ckpt, model, evaluator = _setup(args)
    if not ctx.config.users:
        raise ConfigError("the leakage curve needs at least one user", field="users")
    report = EvalReport(leakage=evaluator.leakage(model), metadata=ctx.metadata(command="leakage"))
    ExportService().export_leakage_csv(report, ctx.artifact("leakage", ".csv"))
