"""
models/key.py
-------------
Domain model for user keys: fixed-length bit vectors or the null key.
"""

from dataclasses import dataclass, field
from typing import Optional

from utils.errors import InvariantError, KeyspaceError

NULL_TOKEN = "null"


@dataclass(frozen=True)
class Key:
    """
    A key from {0,1}^N, or the distinguished null element.

    Attributes:
        bits: Tuple of 0/1 ints, most significant bit first; None for the null key.

    Serialized as '<N>:<hex>' with ceil(N/4) lowercase hex digits; the null
    key serializes as the literal 'null'.
    """
    bits: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.bits is not None:
            if len(self.bits) == 0:
                raise KeyspaceError("a non-null key needs at least one bit")
            if any(b not in (0, 1) for b in self.bits):
                raise KeyspaceError("key bits must be 0 or 1")

    @classmethod
    def null(cls) -> "Key":
        return cls(None)

    @classmethod
    def from_bits(cls, bits) -> "Key":
        return cls(tuple(int(b) for b in bits))

    @property
    def is_null(self) -> bool:
        return self.bits is None

    def __len__(self) -> int:
        return 0 if self.bits is None else len(self.bits)

    def to_hex(self) -> str:
        if self.bits is None:
            return NULL_TOKEN
        n = len(self.bits)
        value = int("".join(str(b) for b in self.bits), 2)
        return f"{n}:{value:0{(n + 3) // 4}x}"

    @classmethod
    def from_hex(cls, text: str) -> "Key":
        """
        Parse a serialized key.

        Raises:
            KeyspaceError: On a malformed token or a value wider than N bits.
        """
        text = text.strip().lower()
        if text == NULL_TOKEN:
            return cls.null()
        try:
            length_text, hex_text = text.split(":", 1)
            n = int(length_text)
            value = int(hex_text, 16)
        except ValueError as e:
            raise KeyspaceError(f"malformed key '{text}': expected '<bits>:<hex>'") from e
        if n <= 0:
            raise KeyspaceError(f"key length must be positive, got {n}")
        if len(hex_text) != (n + 3) // 4:
            raise KeyspaceError(f"key '{text}' must carry {(n + 3) // 4} hex digits")
        if value >= 1 << n:
            raise KeyspaceError(f"key '{text}' does not fit in {n} bits")
        return cls(tuple(int(b) for b in format(value, f"0{n}b")))

    def short(self) -> str:
        """Abbreviated form for log lines."""
        text = self.to_hex()
        return text if len(text) <= 14 else text[:14] + "…"

    def __str__(self) -> str:
        return self.to_hex()


@dataclass
class KeyBatch:
    """
    The keys of one composite-loss evaluation.

    Attributes:
        personalized: (user key, objective id) pairs.
        neighbors_k1: Keys within epsilon Hamming distance of some user key.
        random_k2: Uniform keys outside the user set, plus the null key exactly once.
    """
    personalized: list[tuple[Key, str]] = field(default_factory=list)
    neighbors_k1: list[Key] = field(default_factory=list)
    random_k2: list[Key] = field(default_factory=list)

    @property
    def user_keys(self) -> set[Key]:
        return {k for k, _ in self.personalized}

    @property
    def term_count(self) -> int:
        return len(self.personalized) + len(self.neighbors_k1) + len(self.random_k2)

    def validate(self) -> None:
        """
        Raises:
            InvariantError: If a user key is reused as a negative, a negative
                appears in both K1 and K2, or K2 does not hold exactly one null key.
        """
        users = self.user_keys
        k1 = set(self.neighbors_k1)
        k2 = set(self.random_k2)
        if users & (k1 | k2):
            raise InvariantError("a user key appears among the K1/K2 negatives")
        if k1 & k2:
            raise InvariantError("a key appears in both K1 and K2")
        if sum(1 for k in self.random_k2 if k.is_null) != 1:
            raise InvariantError("K2 must contain the null key exactly once")
        if any(k.is_null for k in self.neighbors_k1):
            raise InvariantError("K1 must not contain the null key")
