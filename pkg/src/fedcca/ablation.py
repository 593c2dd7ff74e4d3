"""Switch off FedCCA's selection threshold and/or its attention weighting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

from .core import (
    aggregation_weights,
    client_centric_selection,
    select_all_capped,
    uniform_weights,
)
from .errors import ConfigError


@dataclass(frozen=True)
class AblationVariant:
    selection_enabled: bool = True
    attention_aggregation_enabled: bool = True

    @classmethod
    def from_name(cls, name: str) -> AblationVariant:
        try:
            return VARIANTS[name]
        except KeyError:
            raise ConfigError(f"unknown ablation {name!r}; expected one of {sorted(VARIANTS)}") from None


VARIANTS = {
    "full": AblationVariant(True, True),
    "no_selection": AblationVariant(False, True),
    "no_attention_aggregation": AblationVariant(True, False),
    "neither": AblationVariant(False, False),
}


class RoundHooks(NamedTuple):
    select: Callable
    weights: Callable


def apply_ablation(variant: AblationVariant, algorithm: str = "fedcca") -> RoundHooks:
    """Selection and weighting functions for one FedCCA variant.

    Without selection every target takes its ``n_max`` lowest-score peers;
    without attention aggregation the sources and the target share equal
    weight.
    """
    if algorithm != "fedcca" and variant != VARIANTS["full"]:
        raise ConfigError(f"ablations apply only to fedcca, not {algorithm!r}")
    return RoundHooks(
        select=client_centric_selection if variant.selection_enabled else select_all_capped,
        weights=aggregation_weights if variant.attention_aggregation_enabled else uniform_weights,
    )
