"""Synthetic Gaussian-cluster pools and non-IID client partitions.

Two heterogeneity axes are available. Label shift comes from Dirichlet or
pathological (few-classes-per-client) partitions. Domain shift rotates
each client's features by an angle tied to its latent domain.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InfeasiblePartitionError, InvalidInputError
from .model import Batch

MAX_REDRAWS = 100


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    feature_dim: int = 10
    samples_per_class: int = 100
    cluster_separation: float = 1.0
    noise_std: float = 1.0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise InvalidInputError("num_classes must be >= 2")
        if self.feature_dim < 2 or self.feature_dim % 2:
            raise InvalidInputError(f"feature_dim must be even and >= 2, got {self.feature_dim}")
        if self.samples_per_class < 1:
            raise InvalidInputError("samples_per_class must be >= 1")
        if self.cluster_separation <= 0:
            raise InvalidInputError("cluster_separation must be positive")
        if self.noise_std < 0:
            raise InvalidInputError("noise_std must be non-negative")


@dataclass(frozen=True)
class PartitionPlan:
    """How a pool is dealt out to clients.

    ``scheme`` is ``"dirichlet"`` (uses ``alpha``) or ``"pathological"``
    (uses ``classes_per_client``). ``client_domain_map[i]`` indexes into
    ``domain_angles``; when omitted, clients are assigned to domains in
    contiguous equal blocks.
    """

    scheme: str
    num_clients: int
    alpha: float = 0.5
    classes_per_client: int = 2
    domain_angles: tuple[float, ...] = (0.0,)
    client_domain_map: tuple[int, ...] | None = None
    test_fraction: float = 0.2

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain_angles", tuple(float(a) for a in self.domain_angles))
        if self.scheme not in ("dirichlet", "pathological"):
            raise InvalidInputError(f"unknown partition scheme {self.scheme!r}")
        if self.num_clients < 1:
            raise InvalidInputError("num_clients must be >= 1")
        if self.alpha <= 0:
            raise InvalidInputError("alpha must be positive")
        if self.classes_per_client < 1:
            raise InvalidInputError("classes_per_client must be >= 1")
        if not self.domain_angles:
            raise InvalidInputError("at least one domain angle is required")
        if not 0 < self.test_fraction < 1:
            raise InvalidInputError("test_fraction must lie in (0, 1)")
        if self.client_domain_map is None:
            g = len(self.domain_angles)
            mapping = tuple(i * g // self.num_clients for i in range(self.num_clients))
        else:
            mapping = tuple(int(d) for d in self.client_domain_map)
        if len(mapping) != self.num_clients:
            raise InvalidInputError("client_domain_map must cover every client")
        if any(d < 0 or d >= len(self.domain_angles) for d in mapping):
            raise InvalidInputError("client_domain_map references a domain without an angle")
        object.__setattr__(self, "client_domain_map", mapping)


@dataclass
class ClientDataset:
    client_id: int
    train: Batch
    test: Batch
    domain_id: int
    label_histogram: np.ndarray
    train_indices: np.ndarray = field(repr=False)
    test_indices: np.ndarray = field(repr=False)

    @property
    def label_set(self) -> set[int]:
        return {int(c) for c in np.flatnonzero(self.label_histogram)}


def class_means(spec: SyntheticSpec) -> np.ndarray:
    """Vertices of a regular polygon in the first two coordinates.

    Adjacent vertices are ``cluster_separation`` apart; every other
    coordinate is zero.
    """
    c = spec.num_classes
    radius = spec.cluster_separation / (2.0 * math.sin(math.pi / c))
    angles = 2.0 * math.pi * np.arange(c) / c
    means = np.zeros((c, spec.feature_dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def generate_base_pool(spec: SyntheticSpec, rng: np.random.Generator) -> Batch:
    means = class_means(spec)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.shape[0], spec.feature_dim))
    return Batch(means[labels] + spec.noise_std * noise, labels)


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``; leftover units go to the largest fractional parts."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps lower indices first among equal remainders
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _check_cover(sets: list[np.ndarray], n: int) -> None:
    flat = np.concatenate(sets) if sets else np.empty(0, dtype=np.int64)
    assert flat.shape[0] == n and np.array_equal(np.sort(flat), np.arange(n))


def partition_dirichlet(
    labels: np.ndarray,
    num_clients: int,
    alpha: float,
    rng: np.random.Generator,
    min_size: int = 1,
) -> list[np.ndarray]:
    """Split sample indices by per-class Dirichlet(alpha) proportions.

    The whole draw is repeated while any client holds fewer than
    ``min_size`` samples, at most ``MAX_REDRAWS`` times.
    """
    labels = np.asarray(labels)
    if alpha <= 0:
        raise InvalidInputError("alpha must be positive")
    if num_clients < 1:
        raise InvalidInputError("num_clients must be >= 1")
    if labels.shape[0] == 0:
        raise InvalidInputError("pool is empty")
    classes = np.unique(labels)
    by_class = [np.flatnonzero(labels == c) for c in classes]

    for _ in range(MAX_REDRAWS):
        parts: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for idx in by_class:
            props = rng.dirichlet(np.full(num_clients, alpha))
            counts = largest_remainder(props, idx.shape[0])
            shuffled = rng.permutation(idx)
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for k in range(num_clients):
                parts[k].append(shuffled[bounds[k]:bounds[k + 1]])
        sets = [np.sort(np.concatenate(p)) for p in parts]
        if min(s.shape[0] for s in sets) >= min_size:
            _check_cover(sets, labels.shape[0])
            return sets
    raise InfeasiblePartitionError(
        f"Dirichlet(alpha={alpha}) left a client with fewer than {min_size} samples "
        f"after {MAX_REDRAWS} redraws"
    )


def partition_pathological(
    labels: np.ndarray,
    num_clients: int,
    classes_per_client: int,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Give each client ``classes_per_client`` classes, cycling a shuffled class list.

    A class held by ``m`` clients is split into ``m`` near-equal shares, the
    remainder going to the earliest clients.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    num_classes = classes.shape[0]
    if classes_per_client > num_classes:
        raise InvalidInputError(
            f"classes_per_client={classes_per_client} exceeds the {num_classes} classes in the pool"
        )
    if num_clients * classes_per_client < num_classes:
        raise InfeasiblePartitionError(
            f"{num_clients} clients x {classes_per_client} classes cannot cover {num_classes} classes"
        )
    order = rng.permutation(classes)
    owners: dict[int, list[int]] = {int(c): [] for c in classes}
    pos = 0
    for k in range(num_clients):
        for _ in range(classes_per_client):
            owners[int(order[pos % num_classes])].append(k)
            pos += 1

    parts: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        holders = owners[int(c)]
        shares = np.array_split(idx, len(holders))
        for k, share in zip(holders, shares):
            parts[k].append(share)
    sets = [np.sort(np.concatenate(p)) if p else np.empty(0, dtype=np.int64) for p in parts]
    _check_cover(sets, labels.shape[0])
    return sets


def apply_domain_rotation(features: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate every coordinate pair (2k, 2k+1) clockwise by ``angle_degrees``."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] % 2:
        raise InvalidInputError("rotation needs a 2-D matrix with an even number of columns")
    theta = math.radians(angle_degrees)
    c, s = math.cos(theta), math.sin(theta)
    x = features[:, 0::2]
    y = features[:, 1::2]
    out = np.empty_like(features)
    out[:, 0::2] = c * x + s * y
    out[:, 1::2] = -s * x + c * y
    return out


def stratified_split(
    labels: np.ndarray, test_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Positions (into ``labels``) of a per-class-proportional train/test split.

    The overall test size is ``round(test_fraction * n)``, clamped so both
    sides are non-empty, and distributed over classes by largest remainder.
    """
    n = labels.shape[0]
    if n < 2:
        raise InfeasiblePartitionError("a client needs at least 2 samples for a train/test split")
    n_test = min(max(int(math.floor(test_fraction * n + 0.5)), 1), n - 1)
    classes = np.unique(labels)
    groups = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    sizes = np.array([g.shape[0] for g in groups])
    per_class = largest_remainder(sizes / n, n_test)
    # never ask a class for more test samples than it has
    per_class = np.minimum(per_class, sizes)
    deficit = n_test - int(per_class.sum())
    for k in np.argsort(-(sizes - per_class), kind="stable"):
        if deficit == 0:
            break
        extra = min(deficit, int(sizes[k] - per_class[k]))
        per_class[k] += extra
        deficit -= extra
    test = np.concatenate([g[:m] for g, m in zip(groups, per_class)])
    train = np.concatenate([g[m:] for g, m in zip(groups, per_class)])
    return np.sort(train), np.sort(test)


def partition_pool(pool: Batch, plan: PartitionPlan, rng: np.random.Generator) -> list[np.ndarray]:
    if plan.scheme == "dirichlet":
        return partition_dirichlet(pool.labels, plan.num_clients, plan.alpha, rng, min_size=2)
    return partition_pathological(pool.labels, plan.num_clients, plan.classes_per_client, rng)


def build_clients(
    pool: Batch, plan: PartitionPlan, rng: np.random.Generator, num_classes: int | None = None
) -> list[ClientDataset]:
    num_classes = num_classes or int(pool.labels.max()) + 1
    index_sets = partition_pool(pool, plan, rng)
    clients = []
    for cid, idx in enumerate(index_sets):
        domain = plan.client_domain_map[cid]
        feats = apply_domain_rotation(pool.features[idx], plan.domain_angles[domain])
        labels = pool.labels[idx]
        tr, te = stratified_split(labels, plan.test_fraction, rng)
        clients.append(
            ClientDataset(
                client_id=cid,
                train=Batch(feats[tr], labels[tr]),
                test=Batch(feats[te], labels[te]),
                domain_id=domain,
                label_histogram=np.bincount(labels[tr], minlength=num_classes),
                train_indices=idx[tr],
                test_indices=idx[te],
            )
        )
    return clients


def label_overlap(clients: Sequence[ClientDataset]) -> set[int]:
    """Classes present in every client's training data."""
    sets = [c.label_set for c in clients]
    return set.intersection(*sets) if sets else set()


def normalized_entropy(histogram: np.ndarray) -> float:
    hist = np.asarray(histogram, dtype=np.float64)
    total = hist.sum()
    if total <= 0 or hist.shape[0] < 2:
        return 0.0
    p = hist[hist > 0] / total
    return float(-(p * np.log(p)).sum() / math.log(hist.shape[0]))


def heterogeneity_score(clients: Sequence[ClientDataset]) -> float:
    """1 minus the mean normalized label entropy; 0 = uniform labels, 1 = single-class clients."""
    if not clients:
        raise InvalidInputError("need at least one client")
    return 1.0 - float(np.mean([normalized_entropy(c.label_histogram) for c in clients]))


def export_clients_csv(clients: Sequence[ClientDataset], out_dir: str | Path) -> list[Path]:
    """Write ``client_<id>_train.csv`` and ``client_<id>_test.csv`` per client."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for client in clients:
        for split, batch in (("train", client.train), ("test", client.test)):
            path = out / f"client_{client.client_id}_{split}.csv"
            d = batch.features.shape[1]
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow([f"feature_{k}" for k in range(d)] + ["label"])
                for row, label in zip(batch.features, batch.labels):
                    writer.writerow([repr(float(v)) for v in row] + [int(label)])
            written.append(path)
    return written
