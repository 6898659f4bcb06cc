"""Compare the numba and pure-numpy kernel paths.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]

Each kernel is called once untimed (numba compiles on first call), then the
best of ``repeat`` runs is reported.  Outputs of both paths are checked for
equality before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from sfsl import _kernels as K
from sfsl.psu import optimal_hash_count, optimal_length


def _cases(size: int, rng: np.random.Generator):
    beta = optimal_length(size, 1e-4)
    h = optimal_hash_count(beta, size)
    seed = K.mix_seed(12345)
    idx = rng.choice(50 * size, size=size, replace=False) + 1
    lanes = K.bloom_encode_np(idx, seed, beta, h).astype(np.uint64)
    cands = np.arange(1, 50 * size + 1)
    u = rng.uniform(0, 2**15, size=20 * size)
    r = rng.random(u.size)
    return {
        "bloom_positions": ((idx, seed, beta, h), K.bloom_positions_np, K.bloom_positions_nb),
        "bloom_encode": ((idx, seed, beta, h), K.bloom_encode_np, K.bloom_encode_nb),
        "bloom_query": ((lanes, cands, seed, beta, h), K.bloom_query_np, K.bloom_query_nb),
        "stochastic_round": ((u, r, 1e-9), K.stochastic_round_np, K.stochastic_round_nb),
    }


def run(size: int = 20000, repeat: int = 5) -> list:
    rng = np.random.default_rng(0)
    rows = []
    for name, (args, f_np, f_nb) in _cases(size, rng).items():
        a, b = f_np(*args), f_nb(*args)
        if not np.array_equal(np.asarray(a), np.asarray(b)):
            raise AssertionError(f"{name}: numba and numpy outputs differ")
        t_np = min(timeit.repeat(lambda: f_np(*args), number=1, repeat=repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*args), number=1, repeat=repeat))
        rows.append({"kernel": name, "numpy_ms": 1e3 * t_np, "numba_ms": 1e3 * t_nb, "speedup": t_np / t_nb})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=20000, help="index set size")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba not installed; both columns time the numpy path")
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for row in run(args.size, args.repeat):
        print(f"{row['kernel']:<18}{row['numpy_ms']:>10.2f}{row['numba_ms']:>10.2f}{row['speedup']:>8.1f}x")


if __name__ == "__main__":
    main()
