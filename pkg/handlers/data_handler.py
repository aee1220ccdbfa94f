"""
handlers/data_handler.py
------------------------
Dataset verbs: `fetch-digits` writes the bundled digit corpus to CSV and
`demos` dumps the expert demonstrations a config trains on.
"""

import argparse

from handlers.common import command, load_context
from repositories.digits_repo import DigitsRepository
from services.export_service import ExportService
from services.task_factory import build_task
from utils.errors import ConfigError


@command
def cmd_fetch_digits(args: argparse.Namespace) -> None:
    repo = DigitsRepository(args.path) if args.path else DigitsRepository()
    repo.export_bundled()


@command
def cmd_demos(args: argparse.Namespace) -> None:
    ctx = load_context(args)
    bundle = build_task(ctx.config)
    if bundle.data is None:
        raise ConfigError("the reach task learns from rollouts and has no demonstration set", field="task")
    batches = [bundle.data.general, *bundle.data.personalized.values()]
    ExportService().export_demos_csv(batches, ctx.artifact("demos", ".csv"))
