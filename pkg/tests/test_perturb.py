import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfsl.errors import CorruptMemo, InvalidRate, MemoGap, UndefinedThreshold
from sfsl.perturb import (
    CPP_PRESETS,
    Memoization,
    ProbabilityParams,
    TuningPolicy,
    epsilon_infinity,
    epsilon_one,
    event_probs,
    event_probs_averaged,
    instantaneous_rr,
    load_memo,
    load_or_new_memo,
    p7_tuning_threshold,
    permanent_rr,
    perturb_index_set,
    privacy_report,
    resolve_params,
    save_memo,
)

probs = st.floats(0, 1, allow_nan=False)


# -- parameters ---------------------------------------------------------------

def test_presets_resolve():
    assert resolve_params("cpp2") == CPP_PRESETS["CPP2"]
    assert resolve_params({"p1": "15/16", "p2": "1/16", "p3": "15/16", "p4": "1/16"}) == CPP_PRESETS["CPP2"]
    assert resolve_params([1, 1, 1, 1]) == CPP_PRESETS["CPP5"]


@pytest.mark.parametrize("bad", ["CPP9", [1.2, 0, 1, 0], {"p1": -0.1, "p2": 0, "p3": 1, "p4": 0}])
def test_bad_params(bad):
    with pytest.raises(InvalidRate):
        resolve_params(bad)


@pytest.mark.parametrize("name,p5,p6", [("CPP2", 0.883, 0.117), ("CPP4", 0.625, 0.375), ("CPP5", 1, 1), ("CPP1", 1, 0)])
def test_end_to_end_probs(name, p5, p6):
    p = CPP_PRESETS[name]
    assert round(p.p5, 3) == p5
    assert round(p.p6, 3) == p6


def test_p5_p6_exact_rationals():
    p = ProbabilityParams(*[Fraction(15, 16), Fraction(1, 16)] * 2)
    # p5 = p1 p3 + (1-p1) p4, p6 = p2 p3 + (1-p2) p4
    assert Fraction(p.p5).limit_denominator(1000) == Fraction(113, 128)
    assert Fraction(p.p6).limit_denominator(1000) == Fraction(15, 128)


@given(probs, probs, probs, probs)
def test_derived_probs_are_probabilities(a, b, c, d):
    p = ProbabilityParams(a, b, c, d)
    assert 0 <= p.p5 <= 1 and 0 <= p.p6 <= 1


# -- privacy levels -----------------------------------------------------------

def test_epsilon_infinity_values():
    assert epsilon_infinity(7 / 8, 1 / 8) == pytest.approx(math.log(7))
    assert round(epsilon_infinity(7 / 8, 1 / 8), 2) == 1.95
    assert epsilon_infinity(0.3, 0.3) == 0
    assert epsilon_infinity(1, 0) == math.inf
    assert epsilon_infinity(1, 1) == 0  # 0/0 ratios are skipped


def test_epsilon_one_values():
    p2, p4 = CPP_PRESETS["CPP2"], CPP_PRESETS["CPP4"]
    assert epsilon_one(p2.p5, p2.p6) == pytest.approx(math.log(113 / 15))
    assert round(epsilon_one(p2.p5, p2.p6), 2) == 2.02
    assert epsilon_one(p4.p5, p4.p6) == pytest.approx(math.log(5 / 3))
    assert epsilon_one(0.4, 0.4) == 0


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_epsilon_one_never_exceeds_epsilon_infinity(p1, p2, p3, p4):
    # the outer response only blurs the memoized answer further
    p = ProbabilityParams(p1, p2, p3, p4)
    assert epsilon_one(p.p5, p.p6) <= epsilon_infinity(p1, p2) + 1e-9


# -- event probabilities ------------------------------------------------------

def test_event_probs_corners():
    assert event_probs(1, 0, 1, 37) == (1, 0)
    assert event_probs(1, 1, 3, 10) == (0, 0)
    p7, p8 = event_probs(0.5, 0.5, 1, 1)
    assert (p7, p8) == pytest.approx((0.25, 0.25))
    assert event_probs(0.7, 0.2, 0, 5)[0] == 0


def simulate_events(p5, p6, n1, n0, trials, rng):
    """Sample who submits index j; event 1 = owner 0 alone, event 2 = only non-owners."""
    owners = rng.random((trials, n1)) < p5 if n1 else np.zeros((trials, 0), bool)
    others = rng.random((trials, n0)) < p6 if n0 else np.zeros((trials, 0), bool)
    any_other = others.any(axis=1)
    e1 = owners[:, 0] & ~owners[:, 1:].any(axis=1) & ~any_other if n1 else np.zeros(trials, bool)
    e2 = ~owners.any(axis=1) & any_other
    return e1.mean(), e2.mean()


def test_event_probs_half_half_monte_carlo(rng):
    mc = simulate_events(0.5, 0.5, 1, 1, 10**6, rng)
    assert mc == pytest.approx((0.25, 0.25), abs=0.003)


def test_event_probs_averaged():
    p7, p8 = event_probs_averaged(1, 0, [1, 1, 2], 10)
    assert p7 == pytest.approx(2 / 3)
    assert p8 == 0


@given(probs, probs, st.integers(1, 6), st.integers(0, 30))
def test_p7_decreases_in_p6(p5, p6, n1, n0):
    hi = min(1.0, p6 + 0.1)
    assert event_probs(p5, hi, n1, n0)[0] <= event_probs(p5, p6, n1, n0)[0] + 1e-12


def test_tuning_thresholds():
    assert p7_tuning_threshold(1, 5, TuningPolicy.FIXED_P6) == 1
    assert p7_tuning_threshold(2, 98, TuningPolicy.COMPLEMENT_SUM) == pytest.approx(0.99)
    assert p7_tuning_threshold(2, 0, TuningPolicy.COMPLEMENT_SUM) == pytest.approx(0.5)
    with pytest.raises(UndefinedThreshold):
        p7_tuning_threshold(0, 10, TuningPolicy.FIXED_P6)


@pytest.mark.parametrize("n1,n0", [(2, 98), (2, 0), (3, 7)])
def test_complement_threshold_is_peak_of_p7(n1, n0):
    # finite differences of the closed form change sign at the threshold
    t = p7_tuning_threshold(n1, n0, TuningPolicy.COMPLEMENT_SUM)
    p7 = lambda p5: event_probs(p5, 1 - p5, n1, n0)[0]
    h = 1e-4
    if t - h > 0:
        assert p7(t) >= p7(t - h)
    if t + h < 1:
        assert p7(t) >= p7(t + h)


def test_fixed_p6_threshold_one_owner_increasing():
    vals = [event_probs(p5, 0.2, 1, 4)[0] for p5 in np.linspace(0, 0.99, 50)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_privacy_report_cpp5_zero():
    r = privacy_report(CPP_PRESETS["CPP5"], 1.17, 98.83, "CPP5")
    assert r.p7 == 0 and r.p8 == 0
    assert r.eps_one == 0 and r.eps_inf == 0
    assert r.row()["cpp"] == "CPP5"


# -- randomized response -------------------------------------------------------

def test_permanent_deterministic_corners(rng):
    union = np.arange(1, 21)
    real = np.array([2, 3, 5, 7, 11])
    memo = permanent_rr(real, union, Memoization(), 1, 0, rng)
    assert memo.yes == set(real.tolist())
    assert memo.no == set(union.tolist()) - memo.yes
    memo = permanent_rr(real, union, Memoization(), 1, 1, rng)
    assert memo.yes == set(union.tolist()) and not memo.no


def test_permanent_keeps_existing_answers(rng):
    memo = Memoization(yes={1}, no={2})
    out = permanent_rr([2], [1, 2, 3], memo, 1, 0, rng)
    assert 1 in out.yes and 2 in out.no  # memoized answers survive even if "wrong"
    assert memo == Memoization(yes={1}, no={2})  # input untouched


def test_permanent_rates(rng):
    n = 10**5
    union = np.arange(1, 2 * n + 1)
    real = union[:n]
    memo = permanent_rr(real, union, Memoization(), 15 / 16, 1 / 16, rng)
    yes = np.isin(union, np.array(sorted(memo.yes)))
    assert abs(yes[:n].mean() - 15 / 16) < 0.01
    assert abs(yes[n:].mean() - 1 / 16) < 0.01


def test_instantaneous_corners(rng):
    memo = Memoization(yes={1, 3}, no={2, 4})
    np.testing.assert_array_equal(instantaneous_rr(memo, [1, 2, 3, 4], 1, 0, rng), [1, 3])
    np.testing.assert_array_equal(instantaneous_rr(memo, [1, 2, 3, 4], 1, 1, rng), [1, 2, 3, 4])


def test_instantaneous_memo_gap(rng):
    with pytest.raises(MemoGap):
        instantaneous_rr(Memoization(yes={1}), [1, 2], 1, 1, rng)


def test_instantaneous_rates_over_repeated_calls(rng):
    memo = Memoization(yes={1}, no={2})
    hits = np.zeros(2)
    for _ in range(10**4):
        s = instantaneous_rr(memo, [1, 2], 0.8, 0.3, rng)
        hits += [1 in s, 2 in s]
    rates = hits / 10**4
    assert rates == pytest.approx([0.8, 0.3], abs=0.01)


def test_cpp5_gives_whole_union(rng):
    union = np.arange(1, 50)
    out, memo = perturb_index_set([3, 4], union, Memoization(), CPP_PRESETS["CPP5"], rng)
    np.testing.assert_array_equal(out, union)


def test_inclusion_rates_match_p5_p6(rng):
    p = CPP_PRESETS["CPP3"]
    n = 10**5
    union = np.arange(1, 2 * n + 1)
    out, _ = perturb_index_set(union[:n], union, Memoization(), p, rng)
    inc = np.isin(union, out)
    assert abs(inc[:n].mean() - p.p5) < 0.01
    assert abs(inc[n:].mean() - p.p6) < 0.01


@given(st.sets(st.integers(1, 60)), st.sets(st.integers(1, 60)), probs, probs, st.integers(0, 2**32))
def test_perturbed_set_within_union_and_memo_consistent(real, extra, p1, p2, seed):
    union = sorted(real | extra)
    rng = np.random.default_rng(seed)
    out, memo = perturb_index_set(sorted(real), union, Memoization(), ProbabilityParams(p1, p2, 0.9, 0.1), rng)
    assert set(out.tolist()) <= set(union)
    assert memo.yes | memo.no == set(union)
    assert not memo.yes & memo.no


# -- memo files ---------------------------------------------------------------

def test_memo_roundtrip(tmp_path):
    memo = Memoization(yes={5, 1, 9}, no={2, 700}, period_id=3)
    path = tmp_path / "c1.memo"
    save_memo(memo, path)
    assert load_memo(path) == memo


def test_memo_overlap_is_corrupt():
    with pytest.raises(CorruptMemo):
        Memoization(yes={1, 2}, no={2})


@pytest.mark.parametrize("damage", ["magic", "truncate", "unsorted", "overlap"])
def test_memo_file_corruption(tmp_path, damage):
    path = tmp_path / "m.memo"
    save_memo(Memoization(yes={1, 2}, no={3}, period_id=1), path)
    raw = bytearray(path.read_bytes())
    if damage == "magic":
        raw[0:8] = b"XXXXXXXX"
    elif damage == "truncate":
        raw = raw[:-3]
    elif damage == "unsorted":
        raw[-24:-8] = np.array([2, 1], dtype="<u8").tobytes()
    else:
        raw[-8:] = np.array([2], dtype="<u8").tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptMemo):
        load_memo(path)


def test_memo_new_period_discards_old(tmp_path):
    path = tmp_path / "m.memo"
    save_memo(Memoization(yes={1}, period_id=1), path)
    assert load_or_new_memo(path, 1).yes == {1}
    fresh = load_or_new_memo(path, 2)
    assert fresh.period_id == 2 and not fresh.yes
    assert load_or_new_memo(tmp_path / "missing.memo", 0) == Memoization()
