"""
utils/errors.py
---------------
Structured exceptions shared by every layer.
Each exception carries the process exit code the CLI reports for it.
"""

from enum import IntEnum
from typing import Optional


class ExitCode(IntEnum):
    """Process exit codes used by main.py."""
    OK = 0
    CONFIG = 2
    DIVERGENCE = 3
    IO = 4


class PropError(Exception):
    """Base class for all library errors."""
    exit_code: ExitCode = ExitCode.CONFIG


class ConfigError(PropError):
    """
    Malformed experiment config.

    Attributes:
        field: Dotted path of the offending field (e.g. 'train.epsilon').
        line: 1-based line in the source file, when known.
    """

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.field = field
        self.line = line
        where = ""
        if field:
            where += f"field '{field}'"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}" if where else message)


class DimensionError(PropError, ValueError):
    """Shape mismatch inside a network, naming the layer index."""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        self.layer_index = layer_index
        prefix = f"layer {layer_index}: " if layer_index is not None else ""
        super().__init__(prefix + message)


class KeyspaceError(PropError, ValueError):
    """Invalid key operation (null operand, length mismatch, bad radius)."""


class InvariantError(PropError):
    """A structural invariant was breached (stale cache, key overlap, budget)."""


class DivergenceError(PropError, ArithmeticError):
    """Non-finite loss or gradient."""
    exit_code = ExitCode.DIVERGENCE

    def __init__(self, message: str, epoch: Optional[int] = None, layer_index: Optional[int] = None):
        self.epoch = epoch
        self.detail = message
        self.layer_index = layer_index
        parts = []
        if epoch is not None:
            parts.append(f"epoch {epoch}")
        if layer_index is not None:
            parts.append(f"layer {layer_index}")
        prefix = f"{', '.join(parts)}: " if parts else ""
        super().__init__(prefix + message)

    def at_epoch(self, epoch: int) -> "DivergenceError":
        """The same failure, located at `epoch`."""
        return DivergenceError(self.detail, epoch=epoch, layer_index=self.layer_index)


class StorageError(PropError, OSError):
    """Unreadable or unwritable artifact, missing corpus, checkpoint version mismatch."""
    exit_code = ExitCode.IO
