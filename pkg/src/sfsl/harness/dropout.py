"""Seeded client dropout schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

PHASES = ("psu", "update")


@dataclass(frozen=True)
class DropoutPlan:
    """Clients that go silent right after distributing shares in ``phase``."""

    dropped: frozenset = field(default_factory=frozenset)
    phase: str = "update"

    def drops_in(self, phase: str) -> frozenset:
        return self.dropped if phase == self.phase else frozenset()


NO_DROPOUT = DropoutPlan()


def inject_dropout(clients, ratio: float, rng: np.random.Generator, phase: str = "update") -> DropoutPlan:
    """Pick ``floor(ratio * n)`` clients uniformly without replacement."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"dropout ratio {ratio} outside [0, 1]")
    if phase not in PHASES:
        raise ConfigError(f"dropout phase must be one of {PHASES}")
    clients = sorted(clients)
    # tolerance keeps e.g. 0.3 * 10 from flooring to 2
    k = math.floor(ratio * len(clients) + 1e-9)
    picked = rng.choice(len(clients), size=k, replace=False) if k else []
    return DropoutPlan(frozenset(clients[i] for i in picked), phase)
