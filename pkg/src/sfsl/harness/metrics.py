"""Per-round traffic, timing and protocol counters."""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field

SERVER = "server"


def client_party(cid: int) -> str:
    return f"client:{cid}"


class TrafficMeter:
    """Bytes and frames per (party, stage, direction)."""

    def __init__(self):
        self.stage = "setup"
        self.bytes = defaultdict(int)
        self.frames = defaultdict(int)

    def record(self, party: str, direction: str, nbytes: int, stage: str | None = None):
        key = (party, stage or self.stage, direction)
        self.bytes[key] += nbytes
        self.frames[key] += 1

    def total(self, party: str | None = None, stage: str | None = None, direction: str | None = None) -> int:
        return sum(
            v
            for (p, s, d), v in self.bytes.items()
            if (party is None or p == party)
            and (stage is None or s == stage or s.startswith(stage + "/"))
            and (direction is None or d == direction)
        )

    def stages(self) -> list:
        return sorted({s for _, s, _ in self.bytes})

    def parties(self) -> list:
        return sorted({p for p, _, _ in self.bytes})

    def conservation_errors(self) -> list:
        """Stages where the server received a different byte count than clients sent."""
        errs = []
        for stage in self.stages():
            got = self.bytes.get((SERVER, stage, "recv"), 0)
            sent = sum(v for (p, s, d), v in self.bytes.items() if s == stage and d == "sent" and p != SERVER)
            if got != sent:
                errs.append((stage, got, sent))
        return errs


@dataclass
class RoundMetrics:
    round_id: int
    scheme: str
    selected: list = field(default_factory=list)
    live: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""
    union_size: int = 0
    perturbed_sizes: dict = field(default_factory=dict)
    succinct_sizes: dict = field(default_factory=dict)
    clipped: int = 0
    capped_counts: int = 0
    stage_seconds: dict = field(default_factory=lambda: defaultdict(float))
    traffic: TrafficMeter = field(default_factory=TrafficMeter)

    @contextmanager
    def timed(self, stage: str):
        self.traffic.stage = stage
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stage_seconds[stage] += time.perf_counter() - t0

    def client_bytes(self, cid: int, stage: str | None = None) -> int:
        return self.traffic.total(client_party(cid), stage)

    def mean_client_bytes(self, stage: str | None = None, clients=None) -> float:
        ids = self.selected if clients is None else clients
        if not ids:
            return 0.0
        return sum(self.client_bytes(c, stage) for c in ids) / len(ids)

    def server_bytes(self, stage: str | None = None) -> int:
        return self.traffic.total(SERVER, stage)

    def summary_row(self) -> dict:
        sizes = list(self.perturbed_sizes.values())
        return {
            "round": self.round_id,
            "scheme": self.scheme,
            "n": len(self.selected),
            "live": len(self.live),
            "dropped": len(self.dropped),
            "aborted": int(self.aborted),
            "union_size": self.union_size,
            "mean_perturbed_size": (sum(sizes) / len(sizes)) if sizes else 0.0,
            "clipped": self.clipped,
            "capped_counts": self.capped_counts,
            "client_bytes_mean": self.mean_client_bytes(),
            "client_psu_bytes_mean": self.mean_client_bytes("psu"),
            "server_bytes": self.server_bytes(),
            "seconds_total": sum(self.stage_seconds.values()),
            **{f"seconds_{k}": v for k, v in sorted(self.stage_seconds.items())},
        }
