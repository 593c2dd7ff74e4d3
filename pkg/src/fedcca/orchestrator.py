"""Round loop for FedCCA and the baselines.

A FedCCA round trains every client's ``theta`` (gated by its participation
flag) and ``phi`` (always), ranks peers by final-layer distance of the
fresh ``phi`` models, selects sources per target and writes each target's
next ``theta`` as a weighted mix of its sources and itself.

Randomness never flows through shared state. Each draw comes from
:func:`derive_rng`, keyed by (master seed, round, client, purpose), so the
training phase can be spread over threads without changing any result.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import model
from .ablation import AblationVariant, apply_ablation
from .baselines import fedavg_aggregate, fedprox_training, sample_participants
from .config import ExperimentConfig, config_hash
from .core import (
    ClientState,
    SelectionReport,
    SimilarityMatrix,
    client_specific_training,
    local_training,
    multi_source_aggregate,
    pairwise_dissimilarity,
    run_sgd,
)
from .data import ClientDataset, build_clients, generate_base_pool

SERVER = 0xFFFFFFFF  # client slot used for server-side draws


def _tag_int(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "little")


def derive_rng(master_seed: int, round_index: int, client_id: int, stream_tag: str) -> np.random.Generator:
    """Independent generator for one (seed, round, client, purpose) tuple.

    The four values, with the tag reduced to 64 bits of its SHA-256, seed a
    ``numpy.random.SeedSequence``, whose hash-based mixing spreads them over
    the PCG64 state.
    """
    entropy = [int(master_seed), int(round_index), int(client_id), _tag_int(stream_tag)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class RoundRecord:
    round: int
    evaluated: bool
    train_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    selection: SelectionReport | None = None
    similarity: SimilarityMatrix | None = None
    weights: list[dict[int, float]] | None = None
    wall_time: float = 0.0


@dataclass
class RunResult:
    config: ExperimentConfig
    config_hash: str
    records: list[RoundRecord]
    final_accuracy: list[float]
    mean_accuracy: float
    selection_counts: np.ndarray
    final_states: list[ClientState] = field(repr=False, default_factory=list)

    @property
    def rounds(self) -> int:
        return self.config.rounds


def build_data(config: ExperimentConfig) -> list[ClientDataset]:
    pool = generate_base_pool(config.synthetic_spec(), derive_rng(config.master_seed, 0, SERVER, "data/pool"))
    return build_clients(
        pool,
        config.partition_plan(),
        derive_rng(config.master_seed, 0, SERVER, "data/partition"),
        num_classes=config.data.num_classes,
    )


def init_states(config: ExperimentConfig, clients: Sequence[ClientDataset]) -> list[ClientState]:
    """Every client starts from the same broadcast theta_0 and phi_0, participating."""
    theta0 = model.init_params(config.model_spec(), derive_rng(config.master_seed, 0, SERVER, "init/theta"))
    phi0 = model.init_params(config.cs_model_spec(), derive_rng(config.master_seed, 0, SERVER, "init/phi"))
    return [ClientState(c.client_id, theta0.copy(), phi0.copy(), True, c) for c in clients]


def _map_clients(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate(states: Sequence[ClientState], spec: model.ModelSpec) -> tuple[list[float], list[float]]:
    losses = [model.cross_entropy_loss(s.theta, spec, s.dataset.train) for s in states]
    accs = [model.accuracy(s.theta, spec, s.dataset.test) for s in states]
    return losses, accs


def _fedcca_round(states, config, t, workers, stream):
    spec, cs_spec, hyper = config.model_spec(), config.cs_model_spec(), config.hyper_params()
    seed = config.master_seed

    def train(s: ClientState):
        theta = local_training(s, spec, hyper, derive_rng(seed, t, stream(s.client_id), "local"))
        phi = client_specific_training(s, cs_spec, hyper, derive_rng(seed, t, stream(s.client_id), "cs"))
        return theta, phi

    trained = _map_clients(train, states, workers)
    thetas = {s.client_id: th for s, (th, _) in zip(states, trained)}
    phis = [ph for _, ph in trained]
    hooks = apply_ablation(AblationVariant.from_name(config.ablation))

    if len(states) == 1:
        matrix = SimilarityMatrix(np.zeros((1, 1)), t)
        report = SelectionReport([[]], [0.0], [False])
    else:
        fcs = [model.extract_fc_layer(ph, cs_spec) for ph in phis]
        matrix = pairwise_dissimilarity(fcs, hyper.sigma, t)
        report = hooks.select(matrix, hyper.n_max)

    ids = [s.client_id for s in states]
    all_weights = []
    new_states = []
    for i, s in enumerate(states):
        local_w = hooks.weights(matrix, i, report.selected[i], report.next_participation)
        total = math.fsum(local_w.values())
        if abs(total - 1.0) > 1e-9:
            raise RuntimeError(f"round {t}: aggregation weights for client {s.client_id} sum to {total}")
        w = {ids[j]: v for j, v in local_w.items()}
        all_weights.append(w)
        new_states.append(
            replace(
                s,
                theta=multi_source_aggregate(thetas, w),
                phi=phis[i],
                participating=report.next_participation[i],
            )
        )
    return new_states, report, matrix, all_weights


def _federated_round(states, config, t, workers, stream):
    spec, hyper = config.model_spec(), config.hyper_params()
    seed = config.master_seed
    chosen = sample_participants(len(states), config.participation_fraction, derive_rng(seed, t, SERVER, "sample"))
    members = [states[k] for k in chosen]

    if config.algorithm == "fedprox":
        def train(s):
            return fedprox_training(s.theta, spec, s.dataset.train, hyper, derive_rng(seed, t, stream(s.client_id), "local"))
    else:
        def train(s):
            return run_sgd(s.theta, spec, s.dataset.train, hyper, derive_rng(seed, t, stream(s.client_id), "local"))

    trained = _map_clients(train, members, workers)
    global_theta = fedavg_aggregate(
        {s.client_id: th for s, th in zip(members, trained)},
        {s.client_id: len(s.dataset.train) for s in members},
    )
    return [replace(s, theta=global_theta.copy()) for s in states]


def _local_only_round(states, config, t, workers, stream):
    spec, hyper = config.model_spec(), config.hyper_params()
    seed = config.master_seed

    def train(s):
        return run_sgd(s.theta, spec, s.dataset.train, hyper, derive_rng(seed, t, stream(s.client_id), "local"))

    trained = _map_clients(train, states, workers)
    return [replace(s, theta=th) for s, th in zip(states, trained)]


def run_round(
    states: Sequence[ClientState],
    config: ExperimentConfig,
    round_index: int,
    workers: int = 1,
    stream_ids: Mapping[int, int] | None = None,
) -> tuple[list[ClientState], RoundRecord]:
    """Advance every client by one communication round.

    ``stream_ids`` remaps client ids before rng derivation; mapping several
    clients to one id gives them identical shuffles, which is how fully
    homogeneous federations are simulated.
    """
    start = time.perf_counter()

    def stream(cid: int) -> int:
        return cid if stream_ids is None else stream_ids[cid]

    record = RoundRecord(round=round_index, evaluated=round_index % config.eval_every == 0)
    if config.algorithm == "fedcca":
        new_states, report, matrix, weights = _fedcca_round(states, config, round_index, workers, stream)
        record.selection, record.similarity, record.weights = report, matrix, weights
    elif config.algorithm in ("fedavg", "fedprox"):
        new_states = _federated_round(states, config, round_index, workers, stream)
    else:
        new_states = _local_only_round(states, config, round_index, workers, stream)

    if record.evaluated:
        record.train_loss, record.test_accuracy = evaluate(new_states, config.model_spec())
    record.wall_time = time.perf_counter() - start
    return new_states, record


def run_experiment(
    config: ExperimentConfig,
    workers: int = 1,
    clients: Sequence[ClientDataset] | None = None,
) -> RunResult:
    """Build data, broadcast the initial models and run ``config.rounds`` rounds."""
    if clients is None:
        clients = build_data(config)
    states = init_states(config, clients)
    n = len(states)
    counts = np.zeros((n, n), dtype=np.int64)
    records = []
    for t in range(config.rounds):
        states, record = run_round(states, config, t, workers)
        if record.selection is not None:
            for i, sources in enumerate(record.selection.selected):
                for j in sources:
                    counts[i, j] += 1
        if record.evaluated:
            records.append(record)
    _, final = evaluate(states, config.model_spec())
    return RunResult(
        config=config,
        config_hash=config_hash(config),
        records=records,
        final_accuracy=final,
        mean_accuracy=float(np.mean(final)),
        selection_counts=counts,
        final_states=states,
    )
