"""Client-centric selection and attention-weighted multi-source aggregation.

Each client keeps two models: ``theta`` (shared through aggregation) and
``phi`` (private, trained every round, never aggregated). The final layer
of ``phi`` acts as the client's fingerprint. Pairwise fingerprint
distances go through ``B(d) = 1 - exp(-d / sigma)``. Each target client
then admits the closest peers whose score is at most its own threshold,
and averages their ``theta`` with weights ``1 - a_j * B``, renormalized.

Two quantities share a symbol in the original formulation. This module
names them ``dissimilarity`` (the B value used for ranking) and
``aggregation weight`` (``1 - a * B``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import ClientDataset
from .errors import InvalidInputError
from .model import Batch, ModelSpec, gradient, sgd_step


@dataclass(frozen=True)
class FedccaHyper:
    sigma: float | None = None  # None selects the per-round median heuristic
    n_max: int = 5
    local_epochs: int = 5
    lr: float = 0.01
    batch_size: int = 32
    prox_mu: float = 0.01

    def __post_init__(self) -> None:
        if self.sigma is not None and self.sigma <= 0:
            raise InvalidInputError("sigma must be positive")
        if self.n_max < 1:
            raise InvalidInputError("n_max must be >= 1")
        if self.local_epochs < 1:
            raise InvalidInputError("local_epochs must be >= 1")
        if self.lr <= 0:
            raise InvalidInputError("lr must be positive")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.prox_mu < 0:
            raise InvalidInputError("prox_mu must be non-negative")


@dataclass
class ClientState:
    client_id: int
    theta: np.ndarray
    phi: np.ndarray
    participating: bool
    dataset: ClientDataset = field(repr=False)


@dataclass(frozen=True)
class SimilarityMatrix:
    scores: np.ndarray
    round: int = 0
    sigma: float = 1.0

    @property
    def n(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True)
class SelectionReport:
    selected: list[list[int]]
    criteria: list[float]
    next_participation: list[bool]


def euclidean_distance(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInputError(f"vectors of shape {p.shape} and {q.shape}")
    return float(np.sqrt(np.sum((p - q) ** 2)))


def attention_score(d: float, sigma: float) -> float:
    """``1 - exp(-d / sigma)``: increasing, concave, zero at zero, below one."""
    if d < 0:
        raise InvalidInputError(f"distance must be non-negative, got {d}")
    if sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    return -math.expm1(-d / sigma)


def distance_matrix(vectors: Sequence[np.ndarray]) -> np.ndarray:
    n = len(vectors)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = euclidean_distance(vectors[i], vectors[j])
    return dist


def median_sigma(dist: np.ndarray) -> float:
    """Median of the off-diagonal distances, or 1.0 when that median is zero."""
    n = dist.shape[0]
    if n < 2:
        return 1.0
    med = float(np.median(dist[np.triu_indices(n, k=1)]))
    return med if med > 0 else 1.0


def pairwise_dissimilarity(
    fc_layers: Sequence[np.ndarray], sigma: float | None = None, round_index: int = 0
) -> SimilarityMatrix:
    if len(fc_layers) < 2:
        raise InvalidInputError("pairwise dissimilarity needs at least 2 clients")
    dist = distance_matrix(fc_layers)
    if sigma is None:
        sigma = median_sigma(dist)
    n = dist.shape[0]
    scores = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            scores[i, j] = scores[j, i] = attention_score(dist[i, j], sigma)
    return SimilarityMatrix(scores, round_index, sigma)


def selection_criteria(matrix: SimilarityMatrix, i: int) -> float:
    """Admission threshold for target ``i``: off-diagonal row sum over ``2N``."""
    row = matrix.scores[i]
    n = matrix.n
    return float((row.sum() - row[i]) / (2 * n))


def _ranked_candidates(scores: np.ndarray, i: int) -> list[int]:
    n = scores.shape[0]
    return sorted((j for j in range(n) if j != i), key=lambda j: (scores[i, j], j))


def _participation(selected: list[list[int]], n: int) -> list[bool]:
    chosen = {j for s in selected for j in s}
    return [j in chosen for j in range(n)]


def client_centric_selection(matrix: SimilarityMatrix, n_max: int) -> SelectionReport:
    """Greedy ranked admission per target client.

    Candidates are scanned by ascending score (ties to the lower id). A
    candidate is admitted while its score is at most the target's
    threshold; the first rejection ends the scan, as does reaching
    ``n_max`` admissions. A client is marked to train next round iff some
    target selected it.
    """
    if n_max < 1:
        raise InvalidInputError("n_max must be >= 1")
    scores = matrix.scores
    selected, criteria = [], []
    for i in range(matrix.n):
        limit = selection_criteria(matrix, i)
        chosen: list[int] = []
        for j in _ranked_candidates(scores, i):
            if len(chosen) >= n_max or scores[i, j] > limit:
                break
            chosen.append(j)
        selected.append(chosen)
        criteria.append(limit)
    return SelectionReport(selected, criteria, _participation(selected, matrix.n))


def select_all_capped(matrix: SimilarityMatrix, n_max: int) -> SelectionReport:
    """Selection with the threshold removed: the ``n_max`` lowest-score peers."""
    if n_max < 1:
        raise InvalidInputError("n_max must be >= 1")
    selected = [_ranked_candidates(matrix.scores, i)[:n_max] for i in range(matrix.n)]
    criteria = [selection_criteria(matrix, i) for i in range(matrix.n)]
    return SelectionReport(selected, criteria, _participation(selected, matrix.n))


def aggregation_weights(
    matrix: SimilarityMatrix,
    target: int,
    selected: Sequence[int],
    participation: Sequence[bool],
) -> dict[int, float]:
    """Normalized ``1 - a_j * B(i, j)`` over ``selected`` plus the target itself."""
    if target in selected:
        raise InvalidInputError("target may not appear among its own sources")
    raw = {target: 1.0}
    for j in selected:
        raw[j] = 1.0 - float(bool(participation[j])) * float(matrix.scores[target, j])
    total = math.fsum(raw.values())
    return {j: w / total for j, w in raw.items()}


def uniform_weights(
    matrix: SimilarityMatrix,
    target: int,
    selected: Sequence[int],
    participation: Sequence[bool],
) -> dict[int, float]:
    """Equal weights over ``selected`` plus the target."""
    if target in selected:
        raise InvalidInputError("target may not appear among its own sources")
    members = [target, *selected]
    return {j: 1.0 / len(members) for j in members}


def multi_source_aggregate(
    thetas: Mapping[int, np.ndarray], weights: Mapping[int, float]
) -> np.ndarray:
    """Convex combination of the weighted parameter vectors."""
    missing = set(weights) - set(thetas)
    if missing:
        raise InvalidInputError(f"weights reference unknown clients {sorted(missing)}")
    if not weights:
        raise InvalidInputError("no weights given")
    if abs(math.fsum(weights.values()) - 1.0) > 1e-9:
        raise InvalidInputError(f"weights sum to {math.fsum(weights.values())}, expected 1")
    keys = sorted(weights)
    out = np.zeros_like(np.asarray(thetas[keys[0]], dtype=np.float64))
    for k in keys:
        out += weights[k] * np.asarray(thetas[k], dtype=np.float64)
    return out


GradFn = Callable[[np.ndarray, ModelSpec, Batch], np.ndarray]


def run_sgd(
    params: np.ndarray,
    spec: ModelSpec,
    data: Batch,
    hyper: FedccaHyper,
    rng: np.random.Generator,
    grad_fn: GradFn = gradient,
) -> np.ndarray:
    """``local_epochs`` passes of shuffled mini-batch SGD."""
    n = len(data)
    for _ in range(hyper.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            batch = data.subset(order[start:start + hyper.batch_size])
            params = sgd_step(params, grad_fn(params, spec, batch), hyper.lr)
    return params


def local_training(
    client: ClientState, spec: ModelSpec, hyper: FedccaHyper, rng: np.random.Generator
) -> np.ndarray:
    """Gated update of ``theta``; a non-participating client keeps its model."""
    if not client.participating:
        return client.theta
    return run_sgd(client.theta, spec, client.dataset.train, hyper, rng)


def client_specific_training(
    client: ClientState, spec: ModelSpec, hyper: FedccaHyper, rng: np.random.Generator
) -> np.ndarray:
    """Ungated update of ``phi``; runs every round regardless of participation."""
    return run_sgd(client.phi, spec, client.dataset.train, hyper, rng)
