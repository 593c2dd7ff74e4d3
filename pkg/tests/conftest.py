import numpy as np
import pytest

from fedcca.config import config_from_dict
from fedcca.model import Batch, ModelSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_batch(rng, spec: ModelSpec, n: int) -> Batch:
    return Batch(rng.normal(size=(n, spec.input_dim)), rng.integers(0, spec.num_classes, size=n))


def small_config(**overrides):
    """A few-second experiment: 4 clients, 4 classes, 2-D features."""
    raw = {
        "algorithm": "fedcca",
        "rounds": 3,
        "master_seed": 3,
        "data": {
            "num_classes": 4,
            "feature_dim": 2,
            "samples_per_class": 30,
            "cluster_separation": 2.0,
            "noise_std": 0.5,
            "num_clients": 4,
            "partition": {"scheme": "dirichlet", "alpha": 1.0},
        },
        "hyper": {"local_epochs": 2, "batch_size": 16, "lr": 0.05, "n_max": 3},
    }
    for dotted, value in overrides.items():
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return config_from_dict(raw)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
