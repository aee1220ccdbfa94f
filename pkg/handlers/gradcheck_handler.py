"""
handlers/gradcheck_handler.py
-----------------------------
`gradcheck`: central finite differences against every analytic gradient
path: plain base nets under each loss, modulated policies (base and
encoders together, random keys and modulation sites) and the concat
baseline. Writes a JSON summary and fails when any error reaches the bound.
"""

import argparse
import json
import os

import numpy as np

from engine import dense
from engine.gradcheck import finite_diff_check
from engine.losses import loss_mse, loss_soft_xent, loss_xent
from handlers.common import command, load_context
from models.key import Key
from services import modnet_service
from services.keyed_model import ConcatModel
from services.keyspace_service import random_key
from utils.errors import InvariantError, StorageError
from utils.logger import get_logger

logger = get_logger(__name__)

MAX_RELATIVE_ERROR = 1e-4
# relu kinks break central differences; checks run on smooth activations
SMOOTH = ("tanh", "identity")


def _loss_fn(kind: str):
    if kind == "mse":
        return lambda net, b: _with_tape(net, b, loss_mse)
    if kind == "xent":
        return lambda net, b: _with_tape(net, b, loss_xent)
    return lambda net, b: _with_tape(net, b, loss_soft_xent)


def _with_tape(net, batch, loss):
    x, target = batch
    out, cache = dense.forward(net, x)
    value, upstream = loss(out, target)
    return value, dense.backward(net, cache, upstream)


def _random_instance(rng: np.random.Generator, activation: str) -> dict:
    depth = int(rng.integers(2, 4))
    hidden = [int(w) for w in rng.integers(3, 7, size=depth)]
    in_dim, out_dim = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    sizes = dense.mlp_sizes(in_dim, hidden, out_dim)
    net = dense.init_params(sizes, [activation] * depth + ["identity"], rng, bias_scheme="uniform-fan-in")
    return {"net": net, "batch": int(rng.integers(1, 5))}


def run_checks(instances: int, seed: int, activation: str = "tanh") -> dict[str, float]:
    """
    Maximum relative error per gradient path over `instances` random instances.

    Returns:
        {'base_mse', 'base_xent', 'base_soft_xent', 'modulated', 'concat'} -> worst error.
    """
    rng = np.random.default_rng([seed, 7])
    act = activation if activation in SMOOTH else "tanh"
    worst = {k: 0.0 for k in ("base_mse", "base_xent", "base_soft_xent", "modulated", "concat")}

    for _ in range(instances):
        inst = _random_instance(rng, act)
        net, b = inst["net"], inst["batch"]
        x = rng.normal(size=(b, net.input_dim))
        out_dim = net.output_dim

        worst["base_mse"] = max(worst["base_mse"], finite_diff_check(net, _loss_fn("mse"), (x, rng.normal(size=(b, out_dim)))))
        labels = rng.integers(0, out_dim, size=b)
        worst["base_xent"] = max(worst["base_xent"], finite_diff_check(net, _loss_fn("xent"), (x, labels)))
        probs = rng.dirichlet(np.ones(out_dim), size=b)
        worst["base_soft_xent"] = max(worst["base_soft_xent"], finite_diff_check(net, _loss_fn("soft_xent"), (x, probs)))

        key_len = int(rng.integers(3, 9))
        hidden_layers = list(range(1, len(net.layers)))
        sites = sorted(rng.choice(hidden_layers, size=int(rng.integers(1, len(hidden_layers) + 1)), replace=False))
        policy = modnet_service.attach(
            net, [int(i) for i in sites], (int(rng.integers(2, 5)),), key_len, rng, keep_reference=False,
        )
        key = random_key(key_len, rng)
        err = modnet_service.policy_gradcheck(policy, x, key, rng.normal(size=(b, out_dim)))
        worst["modulated"] = max(worst["modulated"], err)

        concat = ConcatModel(
            net=dense.init_params(dense.mlp_sizes(net.input_dim + key_len, [4], out_dim), [act, "identity"], rng),
            key_len=key_len,
        )
        for k in (key, Key.null()):
            err = finite_diff_check(concat.net, _loss_fn("mse"), (concat.augment(x, k), rng.normal(size=(b, out_dim))))
            worst["concat"] = max(worst["concat"], err)
    return worst


@command
def cmd_gradcheck(args: argparse.Namespace) -> None:
    ctx = load_context(args)
    if ctx.config.arch.activation not in SMOOTH:
        logger.warning(f"Activation '{ctx.config.arch.activation}' is not smooth; checking with tanh")
    worst = run_checks(args.instances, ctx.seed, ctx.config.arch.activation)
    overall = max(worst.values())
    for path_name, err in worst.items():
        logger.info(f"gradcheck {path_name}: max relative error {err:.3e}")

    target = ctx.artifact("gradcheck", ".json")
    summary = {**ctx.metadata(command="gradcheck"), "instances": args.instances, "max_relative_error": overall, "paths": worst}
    try:
        os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
    except OSError as e:
        raise StorageError(f"cannot write gradcheck summary '{target}': {e}") from e

    if not overall < MAX_RELATIVE_ERROR:
        raise InvariantError(f"gradient check failed: max relative error {overall:.3e} >= {MAX_RELATIVE_ERROR:g}")
    logger.info(f"Gradcheck passed over {args.instances} instances (max {overall:.3e})")
