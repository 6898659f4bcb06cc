"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba is importable and ``SFSL_DISABLE_NUMBA``
is unset (or falsy).  Both paths are always importable under explicit
``*_np`` / ``*_nb`` names so tests and benchmarks can compare them; the
unsuffixed names are bound to whichever path is active.

Hash family: a splitmix64 finalizer over ``index ^ mix(seed)`` yields one
64-bit value, split into ``h1`` (low word) and ``h2`` (high word, forced
odd).  Position ``k`` is ``(h1 + k*h2) mod beta`` (double hashing).
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("SFSL_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LOW32 = np.uint64(0xFFFFFFFF)
_MASK64 = (1 << 64) - 1


def mix_seed(seed: int) -> int:
    """splitmix64 of a Python int seed, returned as a Python int."""
    z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def bloom_positions_np(indices, seed_mixed: int, beta: int, h: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).astype(np.uint64)
    z = _mix64_np(idx ^ np.uint64(seed_mixed))
    b = np.uint64(beta)
    h1 = (z & _LOW32) % b
    h2 = ((z >> np.uint64(32)) | np.uint64(1)) % b
    k = np.arange(h, dtype=np.uint64)
    pos = (h1[:, None] + k[None, :] * h2[:, None]) % b
    return pos.astype(np.int64)


def bloom_encode_np(indices, seed_mixed: int, beta: int, h: int) -> np.ndarray:
    bits = np.zeros(beta, dtype=np.uint8)
    if len(indices):
        bits[bloom_positions_np(indices, seed_mixed, beta, h).ravel()] = 1
    return bits


def bloom_query_np(lanes, candidates, seed_mixed: int, beta: int, h: int) -> np.ndarray:
    if len(candidates) == 0:
        return np.zeros(0, dtype=np.bool_)
    pos = bloom_positions_np(candidates, seed_mixed, beta, h)
    return np.all(np.asarray(lanes)[pos] != 0, axis=1)


def stochastic_round_np(u, r, tol: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    lo = np.floor(u)
    frac = u - lo
    out = lo + (np.asarray(r) < frac)
    snap = (frac <= tol) | (frac >= 1.0 - tol)
    out = np.where(snap, np.rint(u), out)
    return out.astype(np.int64)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, inline="always")
    def _mix64_scalar(z):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    @numba.njit(cache=True)
    def _positions_kernel(idx, seed_mixed, beta, h):
        n = idx.shape[0]
        out = np.empty((n, h), dtype=np.int64)
        b = np.uint64(beta)
        for i in range(n):
            z = _mix64_scalar(np.uint64(idx[i]) ^ seed_mixed)
            h1 = (z & _LOW32) % b
            h2 = ((z >> np.uint64(32)) | np.uint64(1)) % b
            for k in range(h):
                out[i, k] = np.int64((h1 + np.uint64(k) * h2) % b)
        return out

    @numba.njit(cache=True)
    def _encode_kernel(idx, seed_mixed, beta, h):
        bits = np.zeros(beta, dtype=np.uint8)
        b = np.uint64(beta)
        for i in range(idx.shape[0]):
            z = _mix64_scalar(np.uint64(idx[i]) ^ seed_mixed)
            h1 = (z & _LOW32) % b
            h2 = ((z >> np.uint64(32)) | np.uint64(1)) % b
            for k in range(h):
                bits[np.int64((h1 + np.uint64(k) * h2) % b)] = 1
        return bits

    @numba.njit(cache=True)
    def _query_kernel(lanes, idx, seed_mixed, beta, h):
        n = idx.shape[0]
        out = np.empty(n, dtype=np.bool_)
        b = np.uint64(beta)
        for i in range(n):
            z = _mix64_scalar(np.uint64(idx[i]) ^ seed_mixed)
            h1 = (z & _LOW32) % b
            h2 = ((z >> np.uint64(32)) | np.uint64(1)) % b
            hit = True
            for k in range(h):
                if lanes[np.int64((h1 + np.uint64(k) * h2) % b)] == 0:
                    hit = False
                    break
            out[i] = hit
        return out

    @numba.njit(cache=True)
    def _round_kernel(u, r, tol):
        n = u.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            lo = np.floor(u[i])
            frac = u[i] - lo
            if frac <= tol or frac >= 1.0 - tol:
                out[i] = np.int64(np.rint(u[i]))
            elif r[i] < frac:
                out[i] = np.int64(lo) + 1
            else:
                out[i] = np.int64(lo)
        return out

    def bloom_positions_nb(indices, seed_mixed: int, beta: int, h: int) -> np.ndarray:
        idx = np.ascontiguousarray(indices, dtype=np.int64)
        return _positions_kernel(idx, np.uint64(seed_mixed), beta, h)

    def bloom_encode_nb(indices, seed_mixed: int, beta: int, h: int) -> np.ndarray:
        idx = np.ascontiguousarray(indices, dtype=np.int64)
        return _encode_kernel(idx, np.uint64(seed_mixed), beta, h)

    def bloom_query_nb(lanes, candidates, seed_mixed: int, beta: int, h: int) -> np.ndarray:
        idx = np.ascontiguousarray(candidates, dtype=np.int64)
        lanes = np.ascontiguousarray(lanes, dtype=np.uint64)
        return _query_kernel(lanes, idx, np.uint64(seed_mixed), beta, h)

    def stochastic_round_nb(u, r, tol: float) -> np.ndarray:
        u = np.ascontiguousarray(u, dtype=np.float64).ravel()
        r = np.ascontiguousarray(r, dtype=np.float64).ravel()
        return _round_kernel(u, r, tol)

else:  # pragma: no cover
    bloom_positions_nb = bloom_positions_np
    bloom_encode_nb = bloom_encode_np
    bloom_query_nb = bloom_query_np
    stochastic_round_nb = stochastic_round_np


if USE_NUMBA:
    bloom_positions = bloom_positions_nb
    bloom_encode = bloom_encode_nb
    bloom_query = bloom_query_nb
    _stochastic_round = stochastic_round_nb
else:
    bloom_positions = bloom_positions_np
    bloom_encode = bloom_encode_np
    bloom_query = bloom_query_np
    _stochastic_round = stochastic_round_np


def stochastic_round(u, r, tol: float) -> np.ndarray:
    """``floor(u) + [r < frac(u)]`` elementwise; fractions within ``tol`` of a
    grid point snap to it deterministically. Shape follows ``u``."""
    u = np.asarray(u, dtype=np.float64)
    out = _stochastic_round(u.ravel(), np.asarray(r, dtype=np.float64).ravel(), tol)
    return np.asarray(out).reshape(u.shape)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
