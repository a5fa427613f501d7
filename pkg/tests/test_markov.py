import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ammi import brute
from ammi.markov import (
    PROB_MAX,
    PROB_MIN,
    BitVector,
    MarkovParams,
    cross_entropy,
    dump_table,
    entropy,
    forward,
    lift,
    load_table,
    marginals,
    pack_bits,
    sample,
    unpack_bits,
    viterbi,
)

LN2 = math.log(2.0)


@st.composite
def markov_pair(draw, max_m=8, max_order=3):
    m = draw(st.integers(1, max_m))
    o = draw(st.integers(0, max_order))
    o2 = draw(st.integers(o, max_order))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return MarkovParams.random(m, o, rng), MarkovParams.random(m, o2, rng)


# -- MarkovParams -------------------------------------------------------------


def test_table_is_clamped():
    p = MarkovParams(np.array([[0.0], [1.0], [0.3]]), 0)
    np.testing.assert_array_equal(p.table[:, 0], [PROB_MIN, PROB_MAX, 0.3])


def test_table_shape_must_match_order():
    with pytest.raises(ValueError):
        MarkovParams(np.full((4, 3), 0.5), 1)
    with pytest.raises(ValueError):
        MarkovParams(np.full(4, 0.5), 0)
    with pytest.raises(ValueError):
        MarkovParams(np.array([[np.nan]]), 0)


def test_logits_round_trip():
    rng = np.random.default_rng(0)
    p = MarkovParams.random(5, 2, rng)
    q = MarkovParams.from_logits(p.logits, 2)
    np.testing.assert_allclose(q.table, p.table, rtol=1e-12)


# -- forward ------------------------------------------------------------------


def test_forward_fair_coin_order_one():
    pi = forward(MarkovParams.uniform(4, 1)).pi
    np.testing.assert_array_equal(pi[0], [1.0, 0.0])
    np.testing.assert_allclose(pi[1:], 0.5)


def test_forward_base_case_forces_leading_zeros():
    rng = np.random.default_rng(3)
    pi = forward(MarkovParams.random(2, 2, rng)).pi
    np.testing.assert_array_equal(pi[0], [1.0, 0.0, 0.0, 0.0])
    # context at position 2 is (z_0, z_1) with z_0 = 0: only integers 0 and 1
    assert pi[1, 2] == 0.0 and pi[1, 3] == 0.0
    assert pi[1, 0] + pi[1, 1] == pytest.approx(1.0, abs=1e-12)


def test_forward_matches_enumeration_order_two_m8():
    p = MarkovParams.random(8, 2, np.random.default_rng(8))
    np.testing.assert_allclose(forward(p).pi, brute.context_marginals(p), rtol=0, atol=1e-10)


@given(markov_pair())
@settings(max_examples=60, deadline=None)
def test_forward_rows_sum_to_one(pair):
    pi = forward(pair[0]).pi
    assert np.all(pi >= 0)
    np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-9)


# -- marginals ----------------------------------------------------------------


def test_marginals_independent_bits():
    mu = marginals(MarkovParams(np.array([[0.9], [0.2], [0.7]]), 0), 0).mu
    np.testing.assert_allclose(mu[:, 1], [0.9, 0.2, 0.7])
    np.testing.assert_allclose(mu[:, 0], [0.1, 0.8, 0.3])


@pytest.mark.parametrize("m", [3, 5, 9])
def test_marginals_fair_bits_windows(m):
    mu = marginals(MarkovParams.uniform(m, 0), 2).mu
    np.testing.assert_allclose(mu[2:], 1 / 8)
    # position 1: only windows (0, 0, z_1) are feasible
    np.testing.assert_allclose(mu[0], [0.5, 0.5, 0, 0, 0, 0, 0, 0])


def test_marginals_match_enumeration_order_one_m6():
    p = MarkovParams.random(6, 1, np.random.default_rng(6))
    np.testing.assert_allclose(marginals(p, 3).mu, brute.window_marginals(p, 3), rtol=0, atol=1e-10)


def test_marginals_reject_lower_order():
    with pytest.raises(ValueError):
        marginals(MarkovParams.uniform(4, 2), 1)


@given(markov_pair())
@settings(max_examples=60, deadline=None)
def test_marginals_rows_and_infeasible_windows(pair):
    p, q = pair
    mu = marginals(p, q.o).mu
    np.testing.assert_allclose(mu.sum(axis=1), 1.0, atol=1e-9)
    k = q.o + 1
    for i in range(p.m):
        lead = k - 1 - i  # number of window bits before position 1
        if lead > 0:
            infeasible = (np.arange(1 << k) >> (k - lead)) != 0
            assert np.all(mu[i, infeasible] == 0.0)


@given(markov_pair(max_order=3))
@settings(max_examples=40, deadline=None)
def test_marginals_consistent_across_orders(pair):
    p, q = pair
    hi = marginals(p, q.o).mu
    lo = marginals(p, p.o).mu
    # sum out the oldest q.o - p.o window bits
    folded = hi.reshape(p.m, -1, 1 << (p.o + 1)).sum(axis=1)
    np.testing.assert_allclose(folded, lo, atol=1e-12)


# -- cross entropy and entropy -------------------------------------------------


def test_uniform_cross_entropy_three_bits():
    u = MarkovParams.uniform(3)
    assert cross_entropy(u, u) == pytest.approx(3 * LN2, rel=1e-12)
    assert cross_entropy(u, u) == pytest.approx(2.079442, abs=1e-6)


def test_deterministic_self_cross_entropy_is_negligible():
    p = MarkovParams(np.ones((16, 1)), 0)
    eps = PROB_MIN
    bound = 16 * abs(math.log(1 - eps)) + 16 * eps * abs(math.log(eps))
    assert 0 <= cross_entropy(p, p) <= bound


def test_entropy_uniform_sixteen_bits():
    assert entropy(MarkovParams.uniform(16)) == pytest.approx(11.090355, abs=1e-6)


def test_cross_entropy_frozen_reference():
    rng = np.random.default_rng(9)
    p, q = MarkovParams.random(9, 1, rng), MarkovParams.random(9, 3, rng)
    # enumeration over 512 codes, recorded once
    assert cross_entropy(p, q) == pytest.approx(7.019656325142492, rel=1e-12)


def test_entropy_frozen_reference():
    p = MarkovParams.random(10, 2, np.random.default_rng(10))
    assert entropy(p) == pytest.approx(4.759468990562284, rel=1e-12)


def test_cross_entropy_order_one_two_m8_matches_enumeration():
    rng = np.random.default_rng(81)
    p, q = MarkovParams.random(8, 1, rng), MarkovParams.random(8, 2, rng)
    assert cross_entropy(p, q) == pytest.approx(brute.cross_entropy(p, q), rel=1e-8)


def test_cross_entropy_rejects_bad_inputs():
    with pytest.raises(ValueError):
        cross_entropy(MarkovParams.uniform(3), MarkovParams.uniform(4))
    with pytest.raises(ValueError):
        cross_entropy(MarkovParams.uniform(3, 2), MarkovParams.uniform(3, 1))


@given(markov_pair(max_m=10))
@settings(max_examples=80, deadline=None)
def test_dp_matches_enumeration(pair):
    p, q = pair
    assert cross_entropy(p, q) == pytest.approx(brute.cross_entropy(p, q), rel=1e-8)
    assert entropy(q) == pytest.approx(brute.entropy(q), rel=1e-8)


@given(markov_pair(max_m=10))
@settings(max_examples=80, deadline=None)
def test_gibbs_inequality_and_entropy_range(pair):
    p, q = pair
    h = entropy(p)
    assert cross_entropy(p, q) >= h - 1e-10
    assert -1e-12 <= h <= p.m * LN2 + 1e-12
    assert cross_entropy(p, lift(p, q.o)) == pytest.approx(h, abs=1e-10)


# -- viterbi ------------------------------------------------------------------


def test_viterbi_independent_bits():
    code, lp = viterbi(MarkovParams(np.array([[0.9], [0.2], [0.7]]), 0))
    np.testing.assert_array_equal(code.bits, [1, 0, 1])
    assert lp == pytest.approx(math.log(0.9 * 0.8 * 0.7), rel=1e-12)
    assert lp == pytest.approx(-0.685179, abs=1e-6)


@pytest.mark.parametrize("o", [0, 1, 3])
def test_viterbi_total_tie_gives_zeros(o):
    code, lp = viterbi(MarkovParams.uniform(7, o))
    np.testing.assert_array_equal(code.bits, np.zeros(7))
    assert lp == pytest.approx(7 * math.log(0.5))


def test_viterbi_frozen_reference_order_one_m6():
    code, lp = viterbi(MarkovParams.random(6, 1, np.random.default_rng(6)))
    np.testing.assert_array_equal(code.bits, [1, 0, 1, 0, 1, 1])
    assert lp == pytest.approx(-2.1182239962499994, rel=1e-12)


@given(markov_pair(max_m=10))
@settings(max_examples=80, deadline=None)
def test_viterbi_matches_enumeration(pair):
    q = pair[1]
    code, lp = viterbi(q)
    ref, ref_lp = brute.argmax(q)
    np.testing.assert_array_equal(code.bits, ref)
    assert lp == pytest.approx(ref_lp, rel=1e-12)
    assert brute.prob(q, code.bits) == pytest.approx(math.exp(lp), rel=1e-12)


# -- sampling -----------------------------------------------------------------


def test_sample_deterministic_table():
    code = sample(MarkovParams(np.ones((12, 2)), 1), seed=0)
    np.testing.assert_array_equal(code.bits, np.ones(12))


def test_sample_fair_bits_mean():
    draws = sample(MarkovParams.uniform(8), seed=1, size=100_000)
    np.testing.assert_allclose(draws.mean(axis=0), 0.5, atol=0.01)


def test_sample_matches_enumerated_distribution():
    p = MarkovParams.random(6, 1, np.random.default_rng(60))
    draws = sample(p, seed=2, size=100_000)
    idx = draws @ (1 << np.arange(5, -1, -1))  # z_1 most significant, as in all_codes
    freq = np.bincount(idx, minlength=64) / len(idx)
    ref = np.exp(brute.log_prob_all(p))
    assert 0.5 * np.abs(freq - ref).sum() <= 0.02


def test_sample_is_seeded():
    p = MarkovParams.random(10, 2, np.random.default_rng(0))
    np.testing.assert_array_equal(sample(p, 5, size=50), sample(p, 5, size=50))


# -- BitVector and dumps ------------------------------------------------------


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200))
def test_bitvector_round_trips(bits):
    bv = BitVector(np.array(bits, dtype=np.uint8))
    assert bv.m == len(bits)
    assert BitVector.from_packed(bv.packed, bv.m) == bv
    assert BitVector.from_hex(bv.hex(), bv.m) == bv
    np.testing.assert_array_equal(unpack_bits(pack_bits(bv.bits[None]), bv.m)[0], bv.bits)


def test_bitvector_rejects_non_binary():
    with pytest.raises(ValueError):
        BitVector(np.array([0, 2, 1]))


def test_dump_round_trip():
    p = MarkovParams.random(5, 2, np.random.default_rng(1))
    text = dump_table(p)
    assert text.splitlines()[0] == "# m=5 o=2"
    assert len(text.splitlines()) == 1 + 5 * 4
    np.testing.assert_array_equal(load_table(text).table, p.table)
