"""FedCCA federated learning simulator.

Client-centric peer selection and attention-weighted multi-source
aggregation, FedAvg/FedProx/local-only baselines, synthetic non-IID
client data, and a reproducible experiment runner.
"""

from .config import ExperimentConfig, parse_config
from .errors import ConfigError, InfeasiblePartitionError, InvalidInputError
from .orchestrator import RunResult, run_experiment
from .outputs import write_outputs

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "InfeasiblePartitionError",
    "InvalidInputError",
    "RunResult",
    "parse_config",
    "run_experiment",
    "write_outputs",
]
__version__ = "0.1.0"
