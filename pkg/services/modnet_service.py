"""
services/modnet_service.py
--------------------------
Key-gated modulation of a base network.

An encoder maps key features to delta_i in (-1, 1)^d and layer i computes
f(W_i diag(delta_i) z_i + b_i). The null key never reaches an encoder:
its forward pass is the plain base forward, bit for bit.
"""

from typing import Optional, Sequence, Union

import numpy as np

from engine import dense
from engine.gradcheck import max_relative_error
from engine.losses import loss_mse
from models.key import Key
from models.network import DenseNet, GradTape
from models.policy import KeyEncoder, ModulatedCache, PropPolicy
from services.keyspace_service import key_to_features
from utils.errors import DimensionError, InvariantError
from utils.logger import get_logger

logger = get_logger(__name__)


def default_modulation_indices(base: DenseNet) -> list[int]:
    """The single middle layer; its input is a hidden activation."""
    return [max(1, len(base.layers) // 2)]


def _check_index(base: DenseNet, index: int) -> None:
    if not 1 <= index < len(base.layers):
        raise DimensionError(
            f"modulation index must address a hidden activation in [1, {len(base.layers) - 1}]", index
        )


def attach(
    base: DenseNet,
    layer_indices: Optional[Sequence[int]] = None,
    encoder_hidden: Sequence[int] = (64,),
    key_len: int = 128,
    seed: Union[int, np.random.Generator] = 0,
    keep_reference: bool = True,
) -> PropPolicy:
    """
    Wrap a base network with freshly initialized key encoders.

    Args:
        base: Pretrained pi* (or a fresh network for end-to-end training).
            It is copied, never mutated.
        layer_indices: Layers whose input gets modulated; None = middle layer,
            empty list = no encoders (a plain keyless policy).
        encoder_hidden: Hidden widths of every encoder; tanh throughout.
        key_len: Key length N (encoder input width).
        seed: Seed or Generator for encoder initialization.
        keep_reference: Store a frozen copy of the base weights for evaluation.

    Raises:
        DimensionError: On an index that does not address a hidden layer.
    """
    indices = default_modulation_indices(base) if layer_indices is None else sorted(set(layer_indices))
    for i in indices:
        _check_index(base, i)

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    encoders = {}
    for i in indices:
        width = base.layers[i].in_dim
        sizes = [key_len, *encoder_hidden, width]
        net = dense.init_params(sizes, "tanh", rng)
        encoders[i] = KeyEncoder(net=net, layer_index=i)

    policy = PropPolicy(
        base=base.copy(),
        encoders=encoders,
        key_len=key_len,
        frozen_reference=base.copy() if keep_reference else None,
    )
    validate_policy(policy)
    logger.info(
        f"Attached {len(encoders)} encoder(s) at {indices} "
        f"(base {base.param_count} params, total {policy.param_count})"
    )
    return policy


def validate_policy(policy: PropPolicy) -> None:
    """
    Raises:
        DimensionError: If an encoder is misplaced or its widths do not fit.
    """
    for i, enc in policy.encoders.items():
        _check_index(policy.base, i)
        if enc.layer_index != i:
            raise DimensionError(f"encoder registered at {i} claims layer {enc.layer_index}", i)
        if enc.width != policy.base.layers[i].in_dim:
            raise DimensionError(
                f"encoder width {enc.width} != layer input width {policy.base.layers[i].in_dim}", i
            )
        if enc.key_len != policy.key_len:
            raise DimensionError(f"encoder expects {enc.key_len}-bit keys, policy {policy.key_len}", i)
        if enc.net.layers[-1].activation != "tanh":
            raise DimensionError("encoder head must be tanh", i)


def modulation_vectors(policy: PropPolicy, key: Key) -> dict[int, tuple[np.ndarray, object]]:
    """
    layer index -> (delta, encoder cache) for a non-null key.

    Raises:
        InvariantError: If some delta component leaves the open interval (-1, 1).
    """
    if key.is_null:
        return {}
    if len(key) != policy.key_len:
        raise DimensionError(f"key has {len(key)} bits, policy expects {policy.key_len}")
    features = key_to_features(key)
    out = {}
    for i, enc in policy.encoders.items():
        delta, cache = dense.forward(enc.net, features)
        if not np.all(np.abs(delta) < 1.0):
            raise InvariantError(f"modulation at layer {i} saturated outside (-1, 1)")
        out[i] = (delta, cache)
    return out


def modulated_forward(policy: PropPolicy, x: np.ndarray, key: Key) -> tuple[np.ndarray, ModulatedCache]:
    """Forward a state (or batch of states) under `key`."""
    mods = modulation_vectors(policy, key)
    scales = {i: delta for i, (delta, _) in mods.items()}
    out, base_cache = dense.forward(policy.base, x, scales or None)
    cache = ModulatedCache(
        policy_id=id(policy),
        key=key,
        base=base_cache,
        encoders={i: c for i, (_, c) in mods.items()},
    )
    return out, cache


def modulated_backward(
    policy: PropPolicy, cache: ModulatedCache, upstream: np.ndarray
) -> tuple[GradTape, dict[int, GradTape]]:
    """
    Gradients for the base and every encoder.

    Encoders not evaluated on this call (null key) get all-zero tapes.

    Raises:
        InvariantError: If the cache came from another policy or a stale state.
    """
    if cache.policy_id != id(policy):
        raise InvariantError("modulated cache belongs to another policy")
    base_tape = dense.backward(policy.base, cache.base, upstream)
    enc_tapes: dict[int, GradTape] = {}
    for i, enc in policy.encoders.items():
        if i in cache.encoders:
            enc_tapes[i] = dense.backward(enc.net, cache.encoders[i], base_tape.scales[i])
        else:
            enc_tapes[i] = GradTape.zeros_like(enc.net)
    return base_tape, enc_tapes


def behavioral_distance(
    policy: PropPolicy,
    reference: DenseNet,
    probe_states: np.ndarray,
    key: Key,
    output_slice: Optional[slice] = None,
) -> float:
    """
    Mean L2 distance between the keyed policy and a reference network over probes.

    Raises:
        InvariantError: On an empty probe set.
        DimensionError: If the reference does not share the base's I/O widths.
    """
    states = np.atleast_2d(np.asarray(probe_states, dtype=np.float64))
    if states.shape[0] == 0 or np.asarray(probe_states).size == 0:
        raise InvariantError("behavioral_distance needs at least one probe state")
    if (reference.input_dim, reference.output_dim) != (policy.base.input_dim, policy.base.output_dim):
        raise DimensionError("reference and base differ in input/output width")
    ours, _ = modulated_forward(policy, states, key)
    theirs, _ = dense.forward(reference, states)
    if output_slice is not None:
        ours, theirs = ours[:, output_slice], theirs[:, output_slice]
    return float(np.mean(np.linalg.norm(ours - theirs, axis=1)))


def policy_gradcheck(
    policy: PropPolicy,
    x: np.ndarray,
    key: Key,
    target: np.ndarray,
    h: float = 1e-5,
) -> float:
    """
    Joint finite-difference check over base and encoder parameters with an MSE loss.

    Returns:
        Maximum relative error.
    """
    out, cache = modulated_forward(policy, x, key)
    _, upstream = loss_mse(out, target)
    base_tape, enc_tapes = modulated_backward(policy, cache, upstream)

    params = [p for _, p in policy.base.iter_params()]
    grads = [g.copy() for _, g in base_tape.iter_grads()]
    for i in policy.modulated_indices:
        params += [p for _, p in policy.encoders[i].net.iter_params()]
        grads += [g.copy() for _, g in enc_tapes[i].iter_grads()]

    def _loss() -> float:
        y, _ = modulated_forward(policy, x, key)
        return loss_mse(y, target)[0]

    return max_relative_error(params, grads, _loss, h)
