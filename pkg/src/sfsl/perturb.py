"""Index-set perturbation by memoized (permanent) plus per-round randomized
response, and the privacy quantities it yields."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import CorruptMemo, InvalidRate, MemoGap, UndefinedThreshold

MEMO_MAGIC = b"SFSLMEMO"
MEMO_VERSION = 1
_MEMO_HEADER = struct.Struct("<8sHQQQ")


@dataclass(frozen=True)
class ProbabilityParams:
    p1: float
    p2: float
    p3: float
    p4: float

    def __post_init__(self):
        for name in ("p1", "p2", "p3", "p4"):
            v = getattr(self, name)
            if not (0.0 <= float(v) <= 1.0):
                raise InvalidRate(f"{name}={v} is not a probability")

    @property
    def p5(self) -> float:
        return self.p1 * (self.p3 - self.p4) + self.p4

    @property
    def p6(self) -> float:
        return self.p2 * (self.p3 - self.p4) + self.p4

    @classmethod
    def symmetric(cls, p: float, q: float) -> "ProbabilityParams":
        """``p1 = p3 = p`` and ``p2 = p4 = q``, the shape of the stock presets."""
        return cls(p, q, p, q)

    def to_dict(self) -> dict:
        return {"p1": self.p1, "p2": self.p2, "p3": self.p3, "p4": self.p4}


CPP_PRESETS = {
    "CPP1": ProbabilityParams(1.0, 0.0, 1.0, 0.0),
    "CPP2": ProbabilityParams.symmetric(15 / 16, 1 / 16),
    "CPP3": ProbabilityParams.symmetric(7 / 8, 1 / 8),
    "CPP4": ProbabilityParams.symmetric(3 / 4, 1 / 4),
    "CPP5": ProbabilityParams(1.0, 1.0, 1.0, 1.0),
}


def resolve_params(spec) -> ProbabilityParams:
    """Accept a preset name, a mapping with p1..p4, or a ProbabilityParams."""
    if isinstance(spec, ProbabilityParams):
        return spec
    if isinstance(spec, str):
        key = spec.upper()
        if key not in CPP_PRESETS:
            raise InvalidRate(f"unknown CPP preset {spec!r}")
        return CPP_PRESETS[key]
    if isinstance(spec, dict):
        return ProbabilityParams(*(float(_as_number(spec[k])) for k in ("p1", "p2", "p3", "p4")))
    if isinstance(spec, (list, tuple)) and len(spec) == 4:
        return ProbabilityParams(*(float(_as_number(v)) for v in spec))
    raise InvalidRate(f"cannot interpret probability params {spec!r}")


def _as_number(v):
    # allow "15/16" in config files
    return Fraction(v) if isinstance(v, str) else v


# ---------------------------------------------------------------------------
# memoization
# ---------------------------------------------------------------------------


@dataclass
class Memoization:
    yes: set = field(default_factory=set)
    no: set = field(default_factory=set)
    period_id: int = 0

    def __post_init__(self):
        self.yes = {int(j) for j in self.yes}
        self.no = {int(j) for j in self.no}
        self.validate()

    def validate(self):
        if self.yes & self.no:
            raise CorruptMemo(f"{len(self.yes & self.no)} indices are memoized both Yes and No")

    def covers(self, j: int) -> bool:
        return j in self.yes or j in self.no

    def copy(self) -> "Memoization":
        return Memoization(set(self.yes), set(self.no), self.period_id)

    def reset(self, period_id: int):
        """Start a new period: previous answers are discarded."""
        self.yes.clear()
        self.no.clear()
        self.period_id = int(period_id)

    def __eq__(self, other):
        if not isinstance(other, Memoization):
            return NotImplemented
        return self.yes == other.yes and self.no == other.no and self.period_id == other.period_id


def save_memo(memo: Memoization, path) -> None:
    memo.validate()
    y = np.array(sorted(memo.yes), dtype="<u8")
    n = np.array(sorted(memo.no), dtype="<u8")
    with Path(path).open("wb") as fh:
        fh.write(_MEMO_HEADER.pack(MEMO_MAGIC, MEMO_VERSION, memo.period_id, y.size, n.size))
        fh.write(y.tobytes())
        fh.write(n.tobytes())


def load_memo(path) -> Memoization:
    raw = Path(path).read_bytes()
    if len(raw) < _MEMO_HEADER.size:
        raise CorruptMemo("memo file truncated")
    magic, version, period, ny, nn = _MEMO_HEADER.unpack_from(raw)
    if magic != MEMO_MAGIC:
        raise CorruptMemo("not a memo file")
    if version != MEMO_VERSION:
        raise CorruptMemo(f"unsupported memo version {version}")
    body = raw[_MEMO_HEADER.size:]
    if len(body) != 8 * (ny + nn):
        raise CorruptMemo("memo body length does not match header")
    arr = np.frombuffer(body, dtype="<u8")
    y, n = arr[:ny], arr[ny:]
    for part in (y, n):
        if part.size > 1 and np.any(np.diff(part.astype(np.int64)) <= 0):
            raise CorruptMemo("memo index lists must be strictly increasing")
    return Memoization(set(y.tolist()), set(n.tolist()), period)


def load_or_new_memo(path, period_id: int) -> Memoization:
    """Memo for ``period_id``; a file from an older period is discarded."""
    path = Path(path)
    if path.exists():
        memo = load_memo(path)
        if memo.period_id == period_id:
            return memo
    return Memoization(period_id=period_id)


# ---------------------------------------------------------------------------
# randomized response
# ---------------------------------------------------------------------------


def _sorted_array(s) -> np.ndarray:
    if isinstance(s, np.ndarray):
        return np.unique(s.astype(np.int64))
    return np.array(sorted(int(j) for j in s), dtype=np.int64)


def permanent_rr(real_set, union, memo: Memoization, p1: float, p2: float, rng: np.random.Generator) -> Memoization:
    """Give every not-yet-memoized union index a permanent Yes/No answer.

    Returns a new Memoization; the input is not modified.
    """
    memo.validate()
    out = memo.copy()
    u = _sorted_array(union)
    fresh = np.array([j for j in u.tolist() if not memo.covers(j)], dtype=np.int64)
    if fresh.size == 0:
        return out
    real = np.isin(fresh, _sorted_array(real_set))
    prob = np.where(real, p1, p2)
    say_yes = rng.random(fresh.size) < prob
    out.yes.update(fresh[say_yes].tolist())
    out.no.update(fresh[~say_yes].tolist())
    return out


def instantaneous_rr(memo: Memoization, union, p3: float, p4: float, rng: np.random.Generator) -> np.ndarray:
    """Fresh per-round response over the memoized answers; returns sorted S''."""
    u = _sorted_array(union)
    in_yes = np.fromiter((j in memo.yes for j in u.tolist()), dtype=bool, count=u.size)
    in_no = np.fromiter((j in memo.no for j in u.tolist()), dtype=bool, count=u.size)
    if not np.all(in_yes | in_no):
        raise MemoGap(f"{int(np.count_nonzero(~(in_yes | in_no)))} union indices have no memoized answer")
    prob = np.where(in_yes, p3, p4)
    keep = rng.random(u.size) < prob
    return u[keep]


def perturb_index_set(real_set, union, memo: Memoization, params: ProbabilityParams, rng: np.random.Generator):
    """Both stages for one round; returns ``(perturbed_set, updated_memo)``."""
    memo = permanent_rr(real_set, union, memo, params.p1, params.p2, rng)
    return instantaneous_rr(memo, union, params.p3, params.p4, rng), memo


# ---------------------------------------------------------------------------
# privacy quantities
# ---------------------------------------------------------------------------


def derived_probs(params: ProbabilityParams):
    return params.p5, params.p6


def _log_max_ratio(a: float, b: float) -> float:
    ratios = []
    for num, den in ((a, b), (b, a), (1 - a, 1 - b), (1 - b, 1 - a)):
        if den == 0:
            if num > 0:
                return math.inf
            continue  # 0/0 carries no information
        ratios.append(num / den)
    return math.log(max(ratios)) if ratios else 0.0


def epsilon_infinity(p1: float, p2: float) -> float:
    """Privacy level of the memoized answer, i.e. after unboundedly many rounds."""
    return _log_max_ratio(p1, p2)


def epsilon_one(p5: float, p6: float) -> float:
    """Privacy level of a single round's perturbed set."""
    return _log_max_ratio(p5, p6)


def event_probs(p5: float, p6: float, n_j1: float, n_j0: float):
    """(p7, p8) for an index held by ``n_j1`` of the live clients.

    p7: one designated owner submits the index and nobody else does, so the
    aggregate is that client's own update. p8: no owner submits it but some
    non-owner does, so the server sees an all-zero aggregate.
    """
    if n_j1 < 0 or n_j0 < 0:
        raise ValueError("counts must be non-negative")
    if n_j1 == 0:
        p7 = 0.0
    else:
        p7 = p5 * (1 - p5) ** (n_j1 - 1) * (1 - p6) ** n_j0
    p8 = (1 - p5) ** n_j1 * (1 - (1 - p6) ** n_j0)
    return float(p7), float(p8)


def event_probs_averaged(p5: float, p6: float, owner_counts, n: int):
    """Mean (p7, p8) over indices, each with its own owner count out of ``n`` clients."""
    counts = np.asarray(owner_counts, dtype=np.float64)
    if counts.size == 0:
        return 0.0, 0.0
    pairs = np.array([event_probs(p5, p6, c, n - c) for c in counts])
    return float(pairs[:, 0].mean()), float(pairs[:, 1].mean())


class TuningPolicy(enum.Enum):
    FIXED_P6 = "fixed_p6"
    COMPLEMENT_SUM = "complement_sum"


def p7_tuning_threshold(n_j1: float, n_j0: float, policy: TuningPolicy) -> float:
    """The p5 at which p7 stops increasing and starts decreasing.

    FIXED_P6: d p7/d p5 changes sign at 1/n_j1.
    COMPLEMENT_SUM (p6 = 1 - p5): it changes sign at (n_j0+1)/(n_j0+n_j1).
    """
    if n_j1 <= 0:
        raise UndefinedThreshold("no owners, p7 is identically zero")
    policy = TuningPolicy(policy)
    if policy is TuningPolicy.FIXED_P6:
        return 1.0 / n_j1
    return (n_j0 + 1) / (n_j0 + n_j1)


@dataclass
class PrivacyReport:
    name: str
    params: ProbabilityParams
    p5: float
    p6: float
    eps_one: float
    eps_inf: float
    p7: float
    p8: float
    n_j0: float
    n_j1: float

    def row(self) -> dict:
        return {
            "cpp": self.name,
            "p1": self.params.p1,
            "p2": self.params.p2,
            "p3": self.params.p3,
            "p4": self.params.p4,
            "p5": self.p5,
            "p6": self.p6,
            "eps_one": self.eps_one,
            "eps_inf": self.eps_inf,
            "p7": self.p7,
            "p8": self.p8,
        }


def privacy_report(params: ProbabilityParams, n_j1: float, n_j0: float, name: str = "") -> PrivacyReport:
    p5, p6 = derived_probs(params)
    p7, p8 = event_probs(p5, p6, n_j1, n_j0)
    return PrivacyReport(
        name=name,
        params=params,
        p5=p5,
        p6=p6,
        eps_one=epsilon_one(p5, p6),
        eps_inf=epsilon_infinity(params.p1, params.p2),
        p7=p7,
        p8=p8,
        n_j0=n_j0,
        n_j1=n_j1,
    )
