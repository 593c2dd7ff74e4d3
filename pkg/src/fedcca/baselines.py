"""FedAvg, FedProx and local-only reference algorithms."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .core import ClientState, FedccaHyper, run_sgd
from .errors import InvalidInputError
from .model import Batch, ModelSpec, gradient


def fedavg_aggregate(thetas: Mapping[int, np.ndarray], sizes: Mapping[int, int]) -> np.ndarray:
    """Sample-size-weighted mean of client parameters."""
    if set(thetas) != set(sizes):
        raise InvalidInputError("thetas and sizes must have the same client ids")
    if not thetas:
        raise InvalidInputError("nothing to aggregate")
    if any(k < 1 for k in sizes.values()):
        raise InvalidInputError("client sizes must be >= 1")
    total = sum(sizes.values())
    keys = sorted(thetas)
    out = np.zeros_like(np.asarray(thetas[keys[0]], dtype=np.float64))
    for k in keys:
        out += (sizes[k] / total) * np.asarray(thetas[k], dtype=np.float64)
    return out


def fedprox_gradient(
    params: np.ndarray,
    spec: ModelSpec,
    batch: Batch,
    global_params: np.ndarray,
    mu: float,
) -> np.ndarray:
    """Cross-entropy gradient plus the proximal pull ``mu * (w - w_global)``."""
    params = np.asarray(params, dtype=np.float64)
    global_params = np.asarray(global_params, dtype=np.float64)
    if params.shape != global_params.shape:
        raise InvalidInputError("params and global_params differ in length")
    grad = gradient(params, spec, batch)
    if mu == 0:
        return grad
    return grad + mu * (params - global_params)


def fedprox_training(
    params: np.ndarray,
    spec: ModelSpec,
    data: Batch,
    hyper: FedccaHyper,
    rng: np.random.Generator,
) -> np.ndarray:
    anchor = np.array(params, dtype=np.float64, copy=True)

    def grad_fn(p, s, b):
        return fedprox_gradient(p, s, b, anchor, hyper.prox_mu)

    return run_sgd(params, spec, data, hyper, rng, grad_fn)


def participant_count(num_clients: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise InvalidInputError(f"participation fraction must lie in (0, 1], got {fraction}")
    # guard against 0.3 * 10 = 3.0000000000000004 rounding up to 4
    return max(1, math.ceil(round(fraction * num_clients, 9)))


def sample_participants(num_clients: int, fraction: float, rng: np.random.Generator) -> list[int]:
    """``ceil(fraction * N)`` distinct client ids, uniformly without replacement, sorted."""
    k = participant_count(num_clients, fraction)
    if k >= num_clients:
        return list(range(num_clients))
    return sorted(int(i) for i in rng.choice(num_clients, size=k, replace=False))


def local_only_round(
    clients: Sequence[ClientState],
    spec: ModelSpec,
    hyper: FedccaHyper,
    rngs: Sequence[np.random.Generator],
) -> dict[int, np.ndarray]:
    """Each client trains its own ``theta``; nothing is exchanged."""
    return {
        c.client_id: run_sgd(c.theta, spec, c.dataset.train, hyper, rng)
        for c, rng in zip(clients, rngs)
    }
