"""Named activation pools and random per-slot activation substitution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind as K
from .errors import ConfigurationError
from .model import Act, ModelSpec, list_activation_slots

OLD_AS = (K.MELU_K8, K.LEAKY_RELU, K.ELU, K.MELU_K4, K.PRELU, K.SRELU, K.APLU, K.GALU_K4, K.GALU_K2)
FULL_AS = OLD_AS + (K.RELU, K.SOFT_LEARNABLE_FIXED_BETA, K.PDELU, K.MISH_LEARNABLE, K.SRS,
                    K.SWISH_LEARNABLE, K.SWISH_FIXED)
BASE_AS = (K.LEAKY_RELU, K.ELU, K.PRELU, K.SRELU, K.APLU, K.RELU, K.PDELU, K.MISH_LEARNABLE, K.SRS,
           K.SWISH_LEARNABLE, K.SWISH_FIXED)

SETS = {"OldAS": OLD_AS, "FullAS": FULL_AS, "BaseAS": BASE_AS}


@dataclass(frozen=True)
class ActivationSet:
    name: str
    members: tuple[Act, ...]

    def __len__(self) -> int:
        return len(self.members)


def activation_set(name: str, max_input: float = 1.0) -> ActivationSet:
    key = next((k for k in SETS if k.lower() == name.lower()), None)
    if key is None:
        raise ConfigurationError(f"unknown activation set {name!r}; expected one of {list(SETS)}")
    return ActivationSet(key, tuple(Act(kind.value, float(max_input)) for kind in SETS[key]))


def gen_stochastic_model(base: ModelSpec, aset: ActivationSet, rng: np.random.Generator) -> ModelSpec:
    """Replace every activation slot of ``base`` with an independent uniform draw from ``aset``."""
    if not aset.members:
        raise ConfigurationError("cannot draw from an empty activation set")
    slots = list_activation_slots(base)
    if not slots:
        raise ConfigurationError("base model has no activation slots")
    picks = rng.integers(0, len(aset.members), size=len(slots))
    return base.with_slots({s: aset.members[int(j)] for s, j in enumerate(picks)})
