"""Shared fixtures: small networks, keys and configs that train in seconds."""

import numpy as np
import pytest

from engine import dense
from models.key import Key
from models.settings import UserSpec
from repositories.config_repo import ConfigRepository
from services import modnet_service
from services.keyspace_service import random_key

KEY_LEN = 16


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net(rng):
    """4 -> 6 -> 5 -> 2, tanh hidden layers, identity head."""
    return dense.init_params([4, 6, 5, 2], ["tanh", "tanh", "identity"], rng, bias_scheme="uniform-fan-in")


@pytest.fixture
def policy(small_net, rng):
    return modnet_service.attach(small_net, None, (4,), KEY_LEN, rng)


@pytest.fixture
def user_key(rng):
    return random_key(KEY_LEN, rng)


@pytest.fixture
def user(user_key):
    return UserSpec(key=user_key, objective_id="reflected")


@pytest.fixture
def null_key():
    return Key.null()


def tiny_config_text(task: str = "imitation", extra: str = "") -> str:
    """A config that exercises the full pipeline at toy scale."""
    return f"""\
task: {task}
seed: 3
arch:
  hidden: [16, 16]
  encoder_hidden: [8]
train:
  key_len: {KEY_LEN}
  epochs: 2
  pretrain_epochs: 2
  batch_size: 64
  n_demos: 4
  k1_count: 2
  n_k: 2
imitation:
  horizon: 10
reach:
  horizon: 5
ppo:
  episodes_per_key: 4
  epochs_per_batch: 1
eval:
  trials: 3
  leakage_trials: 2
  leakage_distance: 2
  probe_size: 8
baseline:
  budget_tolerance: 0.1
users:
  - passphrase: "alice"
    objective: reflected
    transform: {{A: [[-1, 0], [0, -1]], c: [0, 0]}}
{extra}"""


@pytest.fixture
def tiny_config():
    return ConfigRepository().parse(tiny_config_text())


@pytest.fixture
def config_file(tmp_path):
    """Write a tiny config and return its path; output lands under tmp_path/runs."""
    def _write(task: str = "imitation", extra: str = "") -> str:
        path = tmp_path / f"{task}.yaml"
        path.write_text(tiny_config_text(task, extra) + f"output_dir: {tmp_path / 'runs'}\n", encoding="utf-8")
        return str(path)

    return _write
