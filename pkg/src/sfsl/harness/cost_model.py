"""Closed-form per-round cost terms for the submodel scheme, the full-model
baseline and the standalone union protocol.

Each formula is a sum of named terms counted in abstract units (vector
entries, field operations); they are meant for trend comparison against
measured bytes and seconds, not as absolute predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError

SCHEMES = ("sfsl", "sfl", "psu")
ROLES = ("client", "server")
METRICS = ("comm", "comp", "storage")


@dataclass(frozen=True)
class CostModelInput:
    n: float
    s: float = 0.0
    m: float = 0.0
    d: float = 0.0
    p5: float = 1.0
    p6: float = 1.0
    role: str = "client"
    scheme: str = "sfsl"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.role not in ROLES:
            raise ConfigError(f"role must be one of {ROLES}")
        if self.n <= 0 or min(self.s, self.m, self.d) < 0:
            raise ConfigError("n must be positive and s, m, d non-negative")
        if not (0 <= self.p5 <= 1 and 0 <= self.p6 <= 1):
            raise ConfigError("p5 and p6 must be probabilities")

    @property
    def perturbed_size(self) -> float:
        """Expected size of one client's perturbed set, s*p5 + (n-1)*s*p6."""
        return self.s * self.p5 + (self.n - 1) * self.s * self.p6


@dataclass
class CostEstimate:
    scheme: str
    role: str
    metric: str
    terms: dict

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))


def _sfsl(x: CostModelInput, metric: str) -> dict:
    n, s, d, k = x.n, x.s, x.d, x.perturbed_size
    if x.role == "client":
        return {
            "comm": {"union": n * s, "download": k * d, "upload": k * (d + 1)},
            "comp": {"union": n * n * s, "upload": n * k * (d + 1)},
            "storage": {"union_and_memo": n * s, "upload": k * (d + 1)},
        }[metric]
    return {
        "comm": {"union": n * n * s, "download": n * k * d, "upload": n * k * (d + 1)},
        "comp": {"union": n ** 3 * s, "upload": n * n * k * (d + 1)},
        "storage": {"keys": n * n, "union": n * s, "upload_and_sets": k * (n + d + 1)},
    }[metric]


def _sfl(x: CostModelInput, metric: str) -> dict:
    n, md = x.n, x.m * x.d
    if x.role == "client":
        return {
            "comm": {"keys": n, "model": md},
            "comp": {"keys": n * n, "upload": n * md},
            "storage": {"keys": n, "model": md},
        }[metric]
    return {
        "comm": {"keys": n * n, "model": n * md},
        "comp": {"upload": n * n * md},
        "storage": {"keys": n * n, "model": md},
    }[metric]


def _psu(x: CostModelInput, metric: str) -> dict:
    n, ns = x.n, x.n * x.s
    if x.role == "client":
        return {
            "comm": {"keys": n, "filter": ns, "union": ns},
            "comp": {"keys": n * n, "filter": n * ns},
            "storage": {"keys": n, "filter": ns},
        }[metric]
    return {
        "comm": {"keys": n * n, "filter": n * ns, "union": n * ns},
        "comp": {"filter": n * n * ns},
        "storage": {"keys": n * n, "filter": ns},
    }[metric]


def predict_cost(x: CostModelInput, metric: str = "comm") -> CostEstimate:
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}")
    fn = {"sfsl": _sfsl, "sfl": _sfl, "psu": _psu}[x.scheme]
    return CostEstimate(x.scheme, x.role, metric, fn(x, metric))


def predict_all(x: CostModelInput) -> dict:
    return {metric: predict_cost(x, metric) for metric in METRICS}
