"""Global model matrix: submodel extraction and count-weighted row updates.

Indices are 1-based everywhere in the public API (the full index set is
``{1, ..., m}``); storage is a 0-based ``(m, d)`` float64 array.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IndexOutOfRange, NonFiniteUpdate

CHECKPOINT_MAGIC = b"SFSLCKPT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sHQQ")


@dataclass
class Submodel:
    index_list: np.ndarray
    rows: np.ndarray

    def __post_init__(self):
        self.index_list = np.asarray(self.index_list, dtype=np.int64)
        if self.rows.shape[0] != self.index_list.shape[0]:
            raise ValueError("row count must equal index count")
        if self.index_list.size > 1 and np.any(np.diff(self.index_list) <= 0):
            raise ValueError("index_list must be strictly increasing")

    def __len__(self):
        return int(self.index_list.size)

    def restrict(self, indices) -> "Submodel":
        """Rows for a subset of this submodel's indices (e.g. the succinct set)."""
        want = normalize_indices(indices)
        pos = np.searchsorted(self.index_list, want)
        ok = (pos < self.index_list.size) & (self.index_list[np.minimum(pos, max(self.index_list.size - 1, 0))] == want)
        if want.size and not np.all(ok):
            raise IndexOutOfRange("requested indices are not in this submodel")
        return Submodel(want, self.rows[pos].copy())


def normalize_indices(indices) -> np.ndarray:
    """Sorted, de-duplicated int64 array from any iterable of indices."""
    if isinstance(indices, np.ndarray):
        arr = indices.astype(np.int64, copy=False).ravel()
    else:
        arr = np.fromiter((int(i) for i in indices), dtype=np.int64)
    return np.unique(arr)


class GlobalModel:
    """The server's ``m x d`` parameter matrix."""

    def __init__(self, weights: np.ndarray):
        weights = np.array(weights, dtype=np.float64, copy=True)
        if weights.ndim != 2 or weights.shape[0] < 1 or weights.shape[1] < 1:
            raise ConfigError("weights must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(weights)):
            raise NonFiniteUpdate("initial weights contain NaN or inf")
        self.weights = weights

    @classmethod
    def zeros(cls, m: int, d: int) -> "GlobalModel":
        return cls(np.zeros((m, d)))

    @classmethod
    def random(cls, m: int, d: int, rng: np.random.Generator, scale: float = 0.1) -> "GlobalModel":
        return cls(rng.normal(0.0, scale, size=(m, d)))

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @property
    def full_index_set(self) -> np.ndarray:
        return np.arange(1, self.rows + 1, dtype=np.int64)

    def copy(self) -> "GlobalModel":
        return GlobalModel(self.weights)

    def _check(self, idx: np.ndarray):
        if idx.size and (idx[0] < 1 or idx[-1] > self.rows):
            raise IndexOutOfRange(f"indices must lie in [1, {self.rows}]")

    def row(self, j: int) -> np.ndarray:
        self._check(np.array([j]))
        return self.weights[j - 1]


def extract_submodel(model: GlobalModel, indices) -> Submodel:
    idx = normalize_indices(indices)
    model._check(idx)
    return Submodel(idx, model.weights[idx - 1].copy())


def apply_row_aggregate(model: GlobalModel, j: int, sum_update, total_count: int) -> GlobalModel:
    """Add ``sum_update / total_count`` to row ``j``; a zero count is a no-op."""
    if total_count < 0:
        raise ValueError("total_count must be non-negative")
    model._check(np.array([j]))
    sum_update = np.asarray(sum_update, dtype=np.float64)
    if sum_update.shape != (model.cols,):
        raise ValueError(f"sum_update must have {model.cols} entries")
    if not np.all(np.isfinite(sum_update)):
        raise NonFiniteUpdate(f"non-finite update for row {j}")
    if total_count > 0:
        model.weights[j - 1] += sum_update / total_count
    return model


def apply_row_means(model: GlobalModel, indices, mean_updates) -> GlobalModel:
    """Add already-averaged per-row updates; used by the round driver."""
    idx = normalize_indices(indices)
    mean_updates = np.asarray(mean_updates, dtype=np.float64)
    model._check(idx)
    if mean_updates.shape != (idx.size, model.cols):
        raise ValueError("mean_updates shape does not match indices")
    if not np.all(np.isfinite(mean_updates)):
        raise NonFiniteUpdate("non-finite aggregate update")
    model.weights[idx - 1] += mean_updates
    return model


def save_checkpoint(model: GlobalModel, path) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.rows, model.cols))
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_checkpoint(path) -> GlobalModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigError("checkpoint truncated")
    magic, version, m, d = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ConfigError("not a model checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    body = raw[_HEADER.size:]
    if len(body) != m * d * 8:
        raise ConfigError("checkpoint body length does not match header")
    return GlobalModel(np.frombuffer(body, dtype="<f8").reshape(m, d))
