"""
handlers/pretrain_handler.py
----------------------------
`pretrain`: fit the general policy pi* and write its checkpoint, training
history and a null-key metric report.
"""

import argparse
from dataclasses import replace

from handlers.common import command, load_context
from models.report import EvalReport
from repositories.checkpoint_repo import CheckpointRepository
from services import modnet_service
from services.eval_service import EvalService
from services.export_service import ExportService
from services.experiment_service import ExperimentService
from services.keyed_model import PropModel
from utils.logger import get_logger

logger = get_logger(__name__)


@command
def cmd_pretrain(args: argparse.Namespace) -> None:
    ctx = load_context(args)
    config = ctx.config
    service = ExperimentService(config)
    base, history = service.pretrain(ctx.rng())

    path = CheckpointRepository().save(
        ctx.artifact("pi_star", ".ckpt"), base, kind="dense",
        key_len=config.train.key_len, config_hash=ctx.config_hash, seed=ctx.seed,
    )
    exporter = ExportService()
    exporter.export_history_csv(history, ctx.artifact("pretrain-history", ".csv"))

    # the null-key cell here equals cmd_eval's null cell on this checkpoint
    keyless = PropModel(modnet_service.attach(base, [], key_len=config.train.key_len))
    spec = replace(config.eval, key_classes=["null"])
    cells = EvalService(service.bundle.probe, [], spec, config.train.key_len, ctx.seed).cells(keyless, "base")
    for c in cells:
        logger.info(f"pi* final {c.objective} {c.metric}: {c.stats.mean:.4f} ± {c.stats.stderr:.4f} (n={c.stats.n})")
    report = EvalReport(cells=cells, metadata=ctx.metadata(command="pretrain", checkpoint=path))
    exporter.emit_report(report, ctx.artifact("pretrain-report"), "json")
