"""
handlers/key_handler.py
-----------------------
`keygen`: print a serialized key for a config's users list, derived from a
passphrase or drawn at random.
"""

import argparse

import numpy as np

from handlers.common import command
from services.keyspace_service import KeyspaceService
from utils.errors import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)


@command
def cmd_keygen(args: argparse.Namespace) -> None:
    if args.bits <= 0:
        raise ConfigError("--bits must be positive", field="bits")
    key = KeyspaceService(args.bits).issue(np.random.default_rng(args.seed), args.passphrase)
    print(key.to_hex())
