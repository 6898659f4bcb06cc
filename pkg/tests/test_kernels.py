import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfsl import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")

index_arrays = st.lists(st.integers(1, 2**40), min_size=0, max_size=300).map(lambda v: np.array(v, dtype=np.int64))


@given(index_arrays, st.integers(0, 2**63), st.integers(1, 10**6), st.integers(1, 20))
def test_positions_parity(idx, seed, beta, h):
    s = K.mix_seed(seed)
    np.testing.assert_array_equal(K.bloom_positions_np(idx, s, beta, h), K.bloom_positions_nb(idx, s, beta, h))


@given(index_arrays, st.integers(0, 2**63), st.integers(1, 5000), st.integers(1, 15))
def test_encode_query_parity(idx, seed, beta, h):
    s = K.mix_seed(seed)
    bits_np = K.bloom_encode_np(idx, s, beta, h)
    np.testing.assert_array_equal(bits_np, K.bloom_encode_nb(idx, s, beta, h))
    probe = np.arange(1, 400, dtype=np.int64)
    np.testing.assert_array_equal(K.bloom_query_np(bits_np, probe, s, beta, h), K.bloom_query_nb(bits_np, probe, s, beta, h))


@given(st.lists(st.floats(0, 2**15, allow_nan=False), max_size=200), st.integers(0, 2**32))
def test_stochastic_round_parity(vals, seed):
    u = np.array(vals, dtype=np.float64)
    r = np.random.default_rng(seed).random(u.size)
    np.testing.assert_array_equal(K.stochastic_round_np(u, r, 1e-9), K.stochastic_round_nb(u, r, 1e-9))


def test_positions_in_range():
    pos = K.bloom_positions_np(np.arange(1, 1000), K.mix_seed(1), 97, 7)
    assert pos.min() >= 0 and pos.max() < 97


def test_env_flag_selects_numpy():
    code = "from sfsl import _kernels as K; print(K.backend())"
    env = dict(os.environ, SFSL_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["SFSL_DISABLE_NUMBA"] = ""
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"
