"""Client training data: samples, real index sets, filtering and counting."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, MappingGap


@dataclass(frozen=True)
class TrainingExample:
    target_index: int
    history: tuple = ()

    def indices(self) -> set:
        return {self.target_index, *self.history}


@dataclass
class ClientDataset:
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    @property
    def real_index_set(self) -> np.ndarray:
        out = set()
        for s in self.samples:
            out.update(s.indices())
        return np.array(sorted(out), dtype=np.int64)


def read_dataset(path) -> ClientDataset:
    """Parse ``target<TAB>h1,h2,...`` lines; blank lines and ``#`` comments are skipped."""
    samples = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        target, _, hist = line.partition("\t")
        try:
            history = tuple(int(h) for h in hist.split(",") if h.strip())
            samples.append(TrainingExample(int(target), history))
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: malformed sample line") from None
    return ClientDataset(samples)


def write_dataset(data: ClientDataset, path) -> None:
    lines = [f"{s.target_index}\t{','.join(str(h) for h in s.history)}" for s in data.samples]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def build_succinct_training_set(data: ClientDataset, succinct) -> ClientDataset:
    """Keep samples whose target survives, prune their history, drop empty histories."""
    keep = {int(j) for j in succinct}
    out = []
    for s in data.samples:
        if s.target_index not in keep:
            continue
        hist = tuple(h for h in s.history if h in keep)
        if hist:
            out.append(TrainingExample(s.target_index, hist))
    return ClientDataset(out)


def count_vector(data: ClientDataset, perturbed, dense=()) -> np.ndarray:
    """Samples involving each index of ``perturbed`` (sorted order).

    ``dense`` indices are shared rows every sample touches.
    """
    perturbed = np.asarray(perturbed, dtype=np.int64)
    involved = Counter()
    for s in data.samples:
        involved.update(s.indices())
    dense = {int(j) for j in dense}
    counts = [len(data) if int(j) in dense else involved.get(int(j), 0) for j in perturbed]
    return np.array(counts, dtype=np.int64)


@dataclass(frozen=True)
class IndexCorrelationMap:
    """Public many-to-one map from primary indices to secondary indices."""

    mapping: dict

    def __post_init__(self):
        object.__setattr__(self, "mapping", {int(k): int(v) for k, v in self.mapping.items()})

    @classmethod
    def blocked(cls, m_primary: int, m_secondary: int, offset: int = 0) -> "IndexCorrelationMap":
        """Contiguous blocks of primaries share a secondary id ``offset + 1..``."""
        if m_secondary < 1 or m_secondary > m_primary:
            raise ConfigError("need 1 <= m_secondary <= m_primary")
        return cls({j: offset + 1 + (j - 1) * m_secondary // m_primary for j in range(1, m_primary + 1)})

    def __getitem__(self, j: int) -> int:
        try:
            return self.mapping[int(j)]
        except KeyError:
            raise MappingGap(f"primary index {j} has no secondary id") from None

    @property
    def primary_domain(self) -> set:
        return set(self.mapping)


def derive_secondary_ids(primary_set, cmap: IndexCorrelationMap) -> np.ndarray:
    """Image of ``primary_set``; secondaries follow the primaries, never drawn anew."""
    return np.array(sorted({cmap[j] for j in primary_set}), dtype=np.int64)


def with_secondary_ids(data: ClientDataset, cmap: IndexCorrelationMap) -> ClientDataset:
    """Append each sample's secondary ids to its history."""
    out = []
    for s in data.samples:
        extra = tuple(sorted({cmap[j] for j in s.indices()}))
        out.append(TrainingExample(s.target_index, s.history + extra))
    return ClientDataset(out)


def synthesize_client(rng: np.random.Generator, domain: int, set_size: int, samples: int,
                      history_len: int) -> ClientDataset:
    """Random dataset whose indices cover a random ``set_size`` subset of ``[1, domain]``."""
    set_size = max(1, min(set_size, domain))
    items = rng.choice(domain, size=set_size, replace=False) + 1
    samples = max(1, samples)
    order = rng.permutation(items)
    out = []
    for k in range(samples):
        # round-robin over a permutation so every item appears at least once
        target = int(order[k % set_size]) if k < set_size else int(rng.choice(items))
        hist_n = min(history_len, set_size)
        history = tuple(int(h) for h in rng.choice(items, size=hist_n, replace=True))
        out.append(TrainingExample(target, history))
    # items not yet touched go into the last sample's history
    seen = set()
    for s in out:
        seen.update(s.indices())
    missing = tuple(int(j) for j in items if int(j) not in seen)
    if missing:
        last = out[-1]
        out[-1] = TrainingExample(last.target_index, last.history + missing)
    return ClientDataset(out)
