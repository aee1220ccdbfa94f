"""
handlers/baseline_handler.py
----------------------------
`baseline`: train the parameter-matched MLP-concat baseline and, given a
PRoP checkpoint, emit a side-by-side report of both models.
"""

import argparse

from handlers.common import command, load_checkpoint, load_context
from repositories.checkpoint_repo import CheckpointRepository
from services.experiment_service import ExperimentService
from services.export_service import ExportService
from services.keyed_model import PropModel
from utils.errors import StorageError
from utils.logger import get_logger

logger = get_logger(__name__)


@command
def cmd_baseline(args: argparse.Namespace) -> None:
    ctx = load_context(args)
    config = ctx.config
    service = ExperimentService(config)

    prop = None
    if args.checkpoint:
        prop = PropModel(load_checkpoint(args.checkpoint, expect_kind="policy").model)
        target = prop.param_count
    else:
        target = service.prop_budget(ctx.rng(99))
    model, history = service.baseline(target, ctx.rng())

    path = CheckpointRepository().save(
        ctx.artifact("baseline", ".ckpt"), model.net, kind="baseline",
        key_len=config.train.key_len, config_hash=ctx.config_hash, seed=ctx.seed,
    )
    exporter = ExportService()
    exporter.export_history_csv(history, ctx.artifact("baseline-history", ".csv"))

    models = {"baseline": model} if prop is None else {"prop": prop, "baseline": model}
    evaluator = service.evaluator()
    report = evaluator.run(models, metadata=ctx.metadata(command="baseline", checkpoint=path), with_leakage=False)
    exporter.emit_report(report, ctx.artifact("report-baseline"), args.format)
    if prop is not None:
        comparison = exporter.comparison_frame(report)
        target_csv = ctx.artifact("comparison", ".csv")
        try:
            comparison.to_csv(target_csv, index=False)
        except OSError as e:
            raise StorageError(f"cannot write comparison '{target_csv}': {e}") from e
        for s in report.score_privacy:
            logger.info(f"{s.model}: score {s.mean_score:.2f} ± {s.stderr_score:.2f}, privacy {s.mean_privacy:.2f} ± {s.stderr_privacy:.2f}")
