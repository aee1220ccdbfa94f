"""
services/keyspace_service.py
----------------------------
Bit-vector key algebra: Hamming geometry, key features, the K1/K2
negative-key samplers and passphrase-derived keys. KeyspaceService bundles
the key length for handlers and trainers.
"""

import hashlib
from typing import Iterable, Optional, Sequence

import numpy as np

from config import K1_MAX_RETRIES, K2_MAX_RETRIES
from models.key import Key, KeyBatch
from models.settings import TrainConfig, UserSpec
from utils.errors import KeyspaceError
from utils.logger import get_logger

logger = get_logger(__name__)


def _bits(key: Key) -> np.ndarray:
    if key.is_null:
        raise KeyspaceError("the null key has no bits")
    return np.asarray(key.bits, dtype=np.int8)


def hamming(k1: Key, k2: Key) -> int:
    """
    Number of differing bits.

    Raises:
        KeyspaceError: On a null operand or a length mismatch.
    """
    a, b = _bits(k1), _bits(k2)
    if a.shape != b.shape:
        raise KeyspaceError(f"key lengths differ: {a.size} vs {b.size}")
    return int(np.count_nonzero(a != b))


def key_to_features(key: Key) -> np.ndarray:
    """Encoder input: bit 0 -> -1.0, bit 1 -> +1.0."""
    return 2.0 * _bits(key).astype(np.float64) - 1.0


def features_to_key(features: np.ndarray) -> Key:
    """Inverse of key_to_features (sign threshold at 0)."""
    return Key.from_bits((np.asarray(features) > 0).astype(int))


def random_key(key_len: int, rng: np.random.Generator) -> Key:
    return Key.from_bits(rng.integers(0, 2, size=key_len))


def flip_bits(key: Key, positions: Iterable[int]) -> Key:
    bits = _bits(key).copy()
    idx = np.fromiter(positions, dtype=np.int64)
    bits[idx] ^= 1
    return Key.from_bits(bits)


def key_at_distance(key: Key, distance: int, rng: np.random.Generator) -> Key:
    """A key exactly `distance` bits away from `key` (uniform flip positions)."""
    n = len(key)
    if not 0 <= distance <= n:
        raise KeyspaceError(f"distance {distance} outside [0, {n}]")
    return flip_bits(key, rng.choice(n, size=distance, replace=False))


def _ordered(user_keys: Iterable[Key]) -> list[Key]:
    return sorted(set(user_keys), key=lambda k: k.to_hex())


def sample_K1(
    user_keys: Iterable[Key],
    epsilon: int,
    count: int,
    rng: np.random.Generator,
) -> list[Key]:
    """
    Draw `count` neighbours within Hamming radius epsilon of the user keys.

    Each draw picks a user key, a flip count uniform in [1, epsilon] and then a
    uniform set of flip positions; draws landing on a user key are redrawn,
    at most K1_MAX_RETRIES times per draw.

    Raises:
        KeyspaceError: If epsilon < 1, the user set is empty or holds the null key,
            or resampling is exhausted.
    """
    if epsilon < 1:
        raise KeyspaceError(f"epsilon must be >= 1, got {epsilon}")
    users = _ordered(user_keys)
    if not users:
        raise KeyspaceError("sample_K1 needs at least one user key")
    if any(k.is_null for k in users):
        raise KeyspaceError("user keys must not be null")
    user_set = set(users)
    n = len(users[0])
    radius = min(epsilon, n)

    samples: list[Key] = []
    for _ in range(count):
        for _attempt in range(K1_MAX_RETRIES):
            anchor = users[int(rng.integers(len(users)))]
            flips = int(rng.integers(1, radius + 1))
            candidate = flip_bits(anchor, rng.choice(n, size=flips, replace=False))
            if candidate not in user_set:
                samples.append(candidate)
                break
        else:
            raise KeyspaceError(f"could not draw a K1 neighbour outside the user set in {K1_MAX_RETRIES} tries")
    return samples


def sample_K2(
    user_keys: Iterable[Key],
    count: int,
    key_len: int,
    rng: np.random.Generator,
    exclude: Iterable[Key] = (),
) -> list[Key]:
    """
    Draw `count` uniform keys outside the user set, then append the null key.

    Collisions with user keys (or `exclude`) are rejection-resampled, at most
    K2_MAX_RETRIES times per draw.

    Raises:
        KeyspaceError: If count < 0 or resampling is exhausted.
    """
    if count < 0:
        raise KeyspaceError(f"N_k must be >= 0, got {count}")
    banned = set(user_keys) | set(exclude)
    keys: list[Key] = []
    for _ in range(count):
        for attempt in range(K2_MAX_RETRIES):
            candidate = random_key(key_len, rng)
            if candidate not in banned:
                keys.append(candidate)
                break
            if attempt == 0:
                logger.warning("K2 draw collided with a reserved key; resampling")
        else:
            raise KeyspaceError(f"K2 resampling exhausted after {K2_MAX_RETRIES} retries")
    keys.append(Key.null())
    return keys


def make_key_batch(
    users: Sequence[UserSpec],
    epsilon: int,
    k1_count: int,
    n_k: int,
    key_len: int,
    rng: np.random.Generator,
) -> KeyBatch:
    """
    Assemble the personalized keys plus fresh K1 and K2 negatives.

    With no users the batch holds only K2 (uniform keys and the null key).
    """
    user_keys = [u.key for u in users]
    for key in user_keys:
        if len(key) != key_len:
            raise KeyspaceError(f"user key has {len(key)} bits, experiment uses {key_len}")
    k1 = sample_K1(user_keys, epsilon, k1_count, rng) if user_keys and k1_count else []
    k2 = sample_K2(user_keys, n_k, key_len, rng, exclude=k1)
    batch = KeyBatch(
        personalized=[(u.key, u.objective_id) for u in users],
        neighbors_k1=k1,
        random_k2=k2,
    )
    batch.validate()
    return batch


def key_from_passphrase(passphrase: str, key_len: int) -> Key:
    """
    Derive an N-bit key from a passphrase with SHAKE-256.

    A public, unsalted hash: a convenience for demos, not key stretching.
    """
    if key_len <= 0:
        raise KeyspaceError("key_len must be positive")
    digest = hashlib.shake_256(passphrase.encode("utf-8")).digest((key_len + 7) // 8)
    bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))[:key_len]
    return Key.from_bits(bits)


class KeyspaceService:
    """Issues keys and negative-key batches for one key length."""

    def __init__(self, key_len: int):
        if key_len <= 0:
            raise KeyspaceError("key_len must be positive")
        self.key_len = key_len

    def issue(self, rng: np.random.Generator, passphrase: Optional[str] = None) -> Key:
        """A passphrase-derived key, or a uniform one drawn from `rng`."""
        if passphrase is not None:
            logger.info("Derived key from passphrase (SHAKE-256, unsalted)")
            return key_from_passphrase(passphrase, self.key_len)
        return random_key(self.key_len, rng)

    def distinct(self, count: int, taken: Iterable[Key], rng: np.random.Generator) -> list[Key]:
        """`count` uniform keys, pairwise distinct and outside `taken`."""
        seen = set(taken)
        keys = []
        for _ in range(count):
            key = random_key(self.key_len, rng)
            while key in seen:
                key = random_key(self.key_len, rng)
            seen.add(key)
            keys.append(key)
        return keys

    def key_batch(self, users: Sequence[UserSpec], config: TrainConfig, rng: np.random.Generator) -> KeyBatch:
        """One epoch's key batch with the radius and counts of `config`."""
        return make_key_batch(users, config.epsilon, config.k1_count, config.n_k, self.key_len, rng)
