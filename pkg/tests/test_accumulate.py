import math
import sys
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import exact_sum, exact_sum_rounded
from xtune.accumulate import AccumulationOverflow, correctly_rounded_sum, sum_stack

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_cancellation_and_empty():
    assert correctly_rounded_sum([1e16, 1.0, -1e16]).value == 1.0
    r = correctly_rounded_sum([])
    assert r.value == 0.0 and r.exact_hit


def test_mixed_exponents_match_rational_oracle():
    rng = np.random.default_rng(2024)
    vals = rng.standard_normal(1000) * 10.0 ** rng.integers(-300, 300, 1000)
    assert correctly_rounded_sum(vals).value == exact_sum_rounded(vals)


@given(st.lists(finite, max_size=40))
def test_matches_rational_oracle(vals):
    exact = exact_sum(vals)
    try:
        oracle = float(exact)   # correctly rounded; raises when rounding overflows
    except OverflowError:
        with pytest.raises(AccumulationOverflow):
            correctly_rounded_sum(vals)
        return
    r = correctly_rounded_sum(vals)
    assert r.value == oracle
    assert r.exact_hit == (exact == oracle)


@given(st.lists(finite, min_size=1, max_size=30), st.randoms(use_true_random=False))
def test_permutation_invariant(vals, rnd):
    shuffled = list(vals)
    rnd.shuffle(shuffled)
    try:
        a = correctly_rounded_sum(vals).value
    except AccumulationOverflow:
        return
    assert math.copysign(1, a) * a == correctly_rounded_sum(shuffled).value * math.copysign(1, a)


def test_ties_round_to_even():
    # 1 + 2^-53 is exactly halfway between 1 and its successor: rounds to 1
    assert correctly_rounded_sum([1.0, 2.0 ** -53]).value == 1.0
    # 1 + 3*2^-53 is halfway between 1+2^-52 and 1+2^-51: rounds to the even one
    assert correctly_rounded_sum([1.0, 2.0 ** -52, 2.0 ** -53]).value == 1.0 + 2.0 ** -51
    r = correctly_rounded_sum([1.0, 2.0 ** -53, 2.0 ** -1074])
    assert r.value == 1.0 + 2.0 ** -52 and not r.exact_hit


def test_subnormals_and_extremes():
    tiny = 5e-324
    assert correctly_rounded_sum([tiny] * 7).value == 7 * tiny
    big = sys.float_info.max
    assert correctly_rounded_sum([big, -big, big]).value == big
    with pytest.raises(AccumulationOverflow):
        correctly_rounded_sum([big, big])
    # below the halfway point to 2^1024 the sum still rounds to the largest double
    assert correctly_rounded_sum([big, 2.0 ** 969]).value == big
    with pytest.raises(AccumulationOverflow):
        correctly_rounded_sum([big, 2.0 ** 970])
    with pytest.raises(ValueError):
        correctly_rounded_sum([1.0, math.inf])


def test_sum_stack_elementwise():
    rng = np.random.default_rng(5)
    terms = rng.standard_normal((6, 4, 5)) * 10.0 ** rng.integers(-20, 20, (6, 4, 5))
    out = sum_stack(terms)
    assert out.shape == (4, 5)
    for i in range(4):
        for j in range(5):
            assert out[i, j] == exact_sum_rounded(terms[:, i, j])
    assert np.array_equal(sum_stack(terms[::-1]), out)
