"""Pluggable local trainers. The synthetic one is deterministic so whole
rounds can be checked against plaintext aggregation exactly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..model_store import Submodel
from ..quant import QuantConfig, grid_snap
from ..rng import derive_rng
from .data import ClientDataset, count_vector


class Trainer(Protocol):
    def train(self, submodel: Submodel, data: ClientDataset, seed: int, dense=()) -> np.ndarray:
        """Update rows aligned with ``submodel.index_list``."""


@dataclass
class SyntheticTrainer:
    """Per-row update ``clip(step * count * noise - decay * w, +-bound)``.

    ``noise`` is uniform in [-1, 1]^d and keyed by (seed, row index), so a row's
    update depends only on its own count and weights. Rows no sample touches
    get exactly zero. With ``grid`` set, updates are rounded onto that
    quantization grid so they quantize without randomness.
    """

    step: float = 0.01
    bound: float = 0.5
    decay: float = 0.0
    grid: QuantConfig | None = None

    @classmethod
    def from_hyperparams(cls, hp: dict, quant: QuantConfig | None = None) -> "SyntheticTrainer":
        return cls(
            step=float(hp.get("learning_rate", 0.01)),
            bound=float(hp.get("bound", 0.5)),
            decay=float(hp.get("decay", 0.0)),
            grid=quant if hp.get("grid_aligned", False) else None,
        )

    def train(self, submodel: Submodel, data: ClientDataset, seed: int, dense=()) -> np.ndarray:
        idx = submodel.index_list
        d = submodel.rows.shape[1]
        counts = count_vector(data, idx, dense)
        out = np.zeros((idx.size, d))
        for k in np.flatnonzero(counts):
            noise = derive_rng(seed, int(idx[k])).uniform(-1.0, 1.0, d)
            out[k] = self.step * counts[k] * noise - self.decay * submodel.rows[k]
        np.clip(out, -self.bound, self.bound, out=out)
        if self.grid is not None:
            touched = counts > 0
            out[touched] = np.clip(grid_snap(out[touched], self.grid), self.grid.w_min, self.grid.w_max)
        return out


def synthetic_trainer(submodel: Submodel, data: ClientDataset, hyperparams: dict, seed: int, dense=()) -> np.ndarray:
    return SyntheticTrainer.from_hyperparams(hyperparams).train(submodel, data, seed, dense)
