"""
engine/gradcheck.py
-------------------
Central finite-difference verification of analytic gradients.
"""

from typing import Callable, Sequence

import numpy as np

from models.network import DenseNet, GradTape

RELATIVE_FLOOR = 1e-8
# multiples of eps * |loss| / h treated as finite-difference roundoff
ROUNDOFF_ULPS = 8.0


def max_relative_error(
    params: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    loss_fn: Callable[[], float],
    h: float = 1e-5,
) -> float:
    """
    Compare analytic gradients with central differences, perturbing every
    entry of every parameter array in place (and restoring it).

    The numerator drops the roundoff of the two loss evaluations,
    ROUNDOFF_ULPS * eps * max(|L+|, |L-|) / h, so entries that differ only
    by floating-point noise count as exact.

    Returns:
        max over entries of max(|a - n| - roundoff, 0) / max(|a|, |n|, 1e-8).
    """
    if not h > 0:
        raise ValueError("h must be positive")
    eps = float(np.finfo(np.float64).eps)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        g_flat = np.asarray(g).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn()
            flat[j] = orig - h
            down = loss_fn()
            flat[j] = orig
            numeric = (up - down) / (2.0 * h)
            a = g_flat[j]
            roundoff = ROUNDOFF_ULPS * eps * max(abs(up), abs(down)) / h
            denom = max(abs(a), abs(numeric), RELATIVE_FLOOR)
            worst = max(worst, max(abs(a - numeric) - roundoff, 0.0) / denom)
    return worst


def finite_diff_check(
    net: DenseNet,
    loss_fn: Callable[[DenseNet, object], tuple[float, GradTape]],
    batch: object,
    h: float = 1e-5,
) -> float:
    """
    Check a network's gradients.

    Args:
        net: Network under test (its parameters are perturbed and restored).
        loss_fn: (net, batch) -> (loss, tape) computing the analytic gradient.
        batch: Opaque data handed to loss_fn.
        h: Finite-difference step.

    Returns:
        Maximum relative error across all parameters.
    """
    _, tape = loss_fn(net, batch)
    params = [p for _, p in net.iter_params()]
    grads = [g.copy() for _, g in tape.iter_grads()]
    return max_relative_error(params, grads, lambda: loss_fn(net, batch)[0], h)
