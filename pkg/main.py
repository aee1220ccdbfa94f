"""
main.py
-------
Entry point for the PRoP experiment CLI.

Responsibilities:
    - Parse the verb and its flags.
    - Apply the log level.
    - Dispatch to the handler and exit with its code (0 ok, 2 config,
      3 divergence, 4 I/O).
"""

import argparse
import sys
from typing import Optional, Sequence

from config import DEFAULT_SEED
from handlers.baseline_handler import cmd_baseline
from handlers.data_handler import cmd_demos, cmd_fetch_digits
from handlers.eval_handler import cmd_eval, cmd_leakage
from handlers.gradcheck_handler import cmd_gradcheck
from handlers.key_handler import cmd_keygen
from handlers.personalize_handler import cmd_obfuscate, cmd_personalize
from handlers.pretrain_handler import cmd_pretrain
from services.export_service import REPORT_FORMATS
from utils.logger import get_logger, set_level

logger = get_logger(__name__)


def _experiment(sub, name: str, func, help_text: str) -> argparse.ArgumentParser:
    """A verb that runs from an experiment config."""
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", required=True, help="experiment YAML (see presets/)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.set_defaults(func=func)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prop", description="Key-gated personalization of neural policies.")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="verb", required=True)

    # ── 1. Training ───────────────────────────────────────
    _experiment(sub, "pretrain", cmd_pretrain, "fit the general policy pi*")
    p = _experiment(sub, "personalize", cmd_personalize, "attach key encoders and personalize")
    p.add_argument("--base", default=None, help="pi* checkpoint (omit for end-to-end training)")
    p = _experiment(sub, "obfuscate", cmd_obfuscate, "train wrong keys toward uniform noise")
    p.add_argument("--base", default=None, help="pi* checkpoint")
    p = _experiment(sub, "baseline", cmd_baseline, "train the parameter-matched MLP-concat baseline")
    p.add_argument("--checkpoint", default=None, help="PRoP checkpoint to size against and compare with")
    p.add_argument("--format", choices=REPORT_FORMATS, default="csv")

    # ── 2. Evaluation ─────────────────────────────────────
    for name, func, help_text in (
        ("eval", cmd_eval, "evaluate a checkpoint per key class"),
        ("leakage", cmd_leakage, "performance versus Hamming distance to the user key"),
    ):
        p = _experiment(sub, name, func, help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--format", choices=REPORT_FORMATS, default="csv")

    p = _experiment(sub, "gradcheck", cmd_gradcheck, "finite-difference check of every gradient path")
    p.add_argument("--instances", type=int, default=100, help="random instances to check")

    # ── 3. Utilities ──────────────────────────────────────
    p = sub.add_parser("keygen", help="print a serialized key")
    p.add_argument("--bits", type=int, default=128)
    p.add_argument("--passphrase", default=None, help="derive the key from a passphrase")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed of a random key")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("fetch-digits", help="write the bundled 8x8 digit corpus to CSV")
    p.add_argument("--path", default=None)
    p.set_defaults(func=cmd_fetch_digits)

    _experiment(sub, "demos", cmd_demos, "export the expert demonstrations of a config")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    logger.debug(f"Running verb '{args.verb}'")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
