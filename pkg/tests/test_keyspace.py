import numpy as np
import pytest

from models.key import Key, KeyBatch
from models.settings import TrainConfig, UserSpec
from services import keyspace_service
from services.keyspace_service import (
    KeyspaceService,
    features_to_key,
    flip_bits,
    hamming,
    key_at_distance,
    key_from_passphrase,
    key_to_features,
    make_key_batch,
    random_key,
    sample_K1,
    sample_K2,
)
from utils.errors import InvariantError, KeyspaceError

from conftest import KEY_LEN


def test_hamming_counts_differing_bits():
    a = Key.from_bits([0, 1, 1, 0])
    b = Key.from_bits([1, 1, 0, 0])
    assert hamming(a, b) == 2
    assert hamming(a, a) == 0


def test_hamming_rejects_null_and_length_mismatch():
    with pytest.raises(KeyspaceError):
        hamming(Key.null(), Key.from_bits([1]))
    with pytest.raises(KeyspaceError):
        hamming(Key.from_bits([1, 0]), Key.from_bits([1]))


def test_hex_serialization():
    key = Key.from_bits([1, 0, 1, 1, 0, 1])
    assert key.to_hex() == "6:2d"
    assert Key.from_hex("6:2d") == key
    assert Key.from_hex("null").is_null
    assert Key.null().to_hex() == "null"


@pytest.mark.parametrize("text", ["zz", "4:1f", "4:g", "0:", "3:8"])
def test_malformed_hex_is_rejected(text):
    with pytest.raises(KeyspaceError):
        Key.from_hex(text)


def test_features_are_signed_bits():
    key = Key.from_bits([0, 1, 1])
    np.testing.assert_array_equal(key_to_features(key), [-1.0, 1.0, 1.0])
    assert features_to_key(key_to_features(key)) == key


def test_key_at_distance_is_exact(rng, user_key):
    for d in (0, 1, 5, KEY_LEN):
        assert hamming(user_key, key_at_distance(user_key, d, rng)) == d
    with pytest.raises(KeyspaceError):
        key_at_distance(user_key, KEY_LEN + 1, rng)


def test_flip_bits_twice_is_identity(user_key):
    assert flip_bits(flip_bits(user_key, [0, 3]), [3, 0]) == user_key


def test_k1_stays_within_radius_and_off_users(rng):
    users = [random_key(KEY_LEN, rng) for _ in range(3)]
    neighbors = sample_K1(users, 2, 200, rng)
    assert len(neighbors) == 200
    for k in neighbors:
        assert k not in users
        assert 1 <= min(hamming(k, u) for u in users) <= 2


def test_k1_radius_one_flips_exactly_one_bit(rng, user_key):
    neighbors = sample_K1([user_key], 1, 50, rng)
    assert all(hamming(k, user_key) == 1 for k in neighbors)


def test_k1_argument_errors(rng, user_key):
    with pytest.raises(KeyspaceError):
        sample_K1([user_key], 0, 1, rng)
    with pytest.raises(KeyspaceError):
        sample_K1([], 2, 1, rng)
    with pytest.raises(KeyspaceError):
        sample_K1([Key.null()], 2, 1, rng)


def test_k1_is_deterministic_for_a_seed(user_key):
    a = sample_K1([user_key], 2, 10, np.random.default_rng(5))
    b = sample_K1([user_key], 2, 10, np.random.default_rng(5))
    assert a == b


def test_k2_appends_null_once(rng, user_key):
    keys = sample_K2([user_key], 6, KEY_LEN, rng)
    assert len(keys) == 7
    assert keys[-1].is_null
    assert sum(k.is_null for k in keys) == 1
    assert user_key not in keys


def test_k2_with_zero_count_is_only_null(rng):
    assert sample_K2([], 0, KEY_LEN, rng) == [Key.null()]


def test_k2_exhaustion_raises(rng):
    # both one-bit keys are reserved
    users = [Key.from_bits([0]), Key.from_bits([1])]
    with pytest.raises(KeyspaceError):
        sample_K2(users, 1, 1, rng)


def test_k1_exhaustion_uses_its_own_retry_limit(rng, monkeypatch):
    # every one-bit flip of a one-bit user key lands on the other user key
    users = [Key.from_bits([0]), Key.from_bits([1])]
    monkeypatch.setattr(keyspace_service, "K2_MAX_RETRIES", 10**9)
    monkeypatch.setattr(keyspace_service, "K1_MAX_RETRIES", 3)
    with pytest.raises(KeyspaceError, match="in 3 tries"):
        sample_K1(users, 1, 1, rng)


def test_k2_negative_count(rng):
    with pytest.raises(KeyspaceError):
        sample_K2([], -1, KEY_LEN, rng)


def test_key_batch_without_users_holds_only_k2(rng):
    batch = make_key_batch([], 2, 4, 3, KEY_LEN, rng)
    assert batch.personalized == []
    assert batch.neighbors_k1 == []
    assert len(batch.random_k2) == 4
    assert batch.term_count == 4


def test_key_batch_term_count(rng, user):
    batch = make_key_batch([user], 2, 4, 3, KEY_LEN, rng)
    assert batch.term_count == 1 + 4 + 3 + 1
    assert batch.user_keys == {user.key}


def test_key_batch_rejects_wrong_key_length(rng):
    short = UserSpec(key=random_key(KEY_LEN - 1, rng), objective_id="x")
    with pytest.raises(KeyspaceError):
        make_key_batch([short], 2, 1, 1, KEY_LEN, rng)


def test_key_batch_validation(user_key):
    leaked = KeyBatch(personalized=[(user_key, "a")], random_k2=[user_key, Key.null()])
    with pytest.raises(InvariantError):
        leaked.validate()
    without_null = KeyBatch(personalized=[(user_key, "a")], random_k2=[])
    with pytest.raises(InvariantError):
        without_null.validate()


def test_passphrase_keys_are_stable():
    a = key_from_passphrase("correct horse", 128)
    assert len(a) == 128
    assert a == key_from_passphrase("correct horse", 128)
    assert a != key_from_passphrase("correct horse!", 128)
    assert len(key_from_passphrase("x", 13)) == 13


# ── KeyspaceService ───────────────────────────────────────

def test_service_issues_passphrase_and_seeded_keys():
    service = KeyspaceService(KEY_LEN)
    assert service.issue(np.random.default_rng(0), "alice") == key_from_passphrase("alice", KEY_LEN)
    assert service.issue(np.random.default_rng(3)) == service.issue(np.random.default_rng(3))


def test_service_draws_distinct_keys_outside_the_taken_set(rng):
    service = KeyspaceService(2)
    taken = [Key.from_bits([0, 0])]
    keys = service.distinct(3, taken, rng)
    assert len(set(keys)) == 3
    assert taken[0] not in keys


def test_service_key_batch_follows_the_config(rng, user):
    config = TrainConfig(key_len=KEY_LEN, epsilon=1, k1_count=3, n_k=2)
    batch = KeyspaceService(KEY_LEN).key_batch([user], config, rng)
    assert len(batch.neighbors_k1) == 3
    assert all(hamming(k, user.key) == 1 for k in batch.neighbors_k1)
    assert len(batch.random_k2) == 3


def test_service_rejects_empty_keys():
    with pytest.raises(KeyspaceError):
        KeyspaceService(0)
