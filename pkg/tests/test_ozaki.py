import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import exact_matmul_rounded
from xtune.matrices import gen_identity_mix, gen_random_scaled
from xtune.ozaki import (COL_SPLIT, ROW_SPLIT, DegradedAccuracyWarning, SplitConfig, accurate_matmul,
                         bits_per_slice, count_splits, split_matrix)


def _sum_in_order(splits):
    total = np.zeros_like(splits[0])
    for s in splits:
        total = total + s
    return total


def test_bits_per_slice():
    assert bits_per_slice(1) == 26
    assert bits_per_slice(2) == 26
    assert bits_per_slice(50) == 23
    assert bits_per_slice(1024) == 21
    with pytest.raises(ValueError):
        bits_per_slice(0)


def test_equal_powers_of_two_take_one_slice():
    m = np.full((3, 3), 2.0 ** -7)
    s = split_matrix(m)
    assert len(s) == 1 and s.remainder_zero
    assert count_splits(s) == (0, 1, 1)


def test_two_by_two_with_tiny_entry():
    a = np.array([[1.0, 2.0 ** -40], [1.0, 1.0]])
    s = split_matrix(a, ROW_SPLIT)
    assert len(s) == 2 and s.remainder_zero
    assert np.array_equal(_sum_in_order(s.splits), a)
    exact = [[sum(Fraction(float(sp[i, j])) for sp in s.splits) for j in range(2)] for i in range(2)]
    assert exact == [[Fraction(float(v)) for v in row] for row in a]


def test_generator_one_later_slices_are_sparse():
    a = gen_random_scaled(50, 0.0, 30, seed=11)
    s = split_matrix(a)
    sparse, dense, total = count_splits(s)
    assert total > 1 and sparse >= 1 and sparse + dense == total
    later = [np.count_nonzero(x == 0) / x.size for x in s.splits[1:]]
    assert max(later) > 0.8


@pytest.mark.parametrize("n,flag", [(5, False), (6, True)])
def test_identity_classification_follows_threshold(n, flag):
    # zero fraction of the identity is (n^2 - n)/n^2: 0.8 at n=5, above 0.8 from n=6
    s = split_matrix(np.eye(n))
    assert count_splits(s) == ((1, 0, 1) if flag else (0, 1, 1))


def test_rejects_non_finite_and_bad_side():
    with pytest.raises(ValueError):
        split_matrix(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        split_matrix(np.eye(2), side="diagonal")


def _pairwise_products_exact(sa, sb):
    for ap in sa.splits:
        for bq in sb.splits:
            fast = ap @ bq
            assert np.array_equal(fast, exact_matmul_rounded(ap, bq))
            # the binary64 dot product is exact, not merely correctly rounded
            fa = [[Fraction(float(v)) for v in row] for row in ap]
            fb = [[Fraction(float(v)) for v in row] for row in bq]
            for i in range(ap.shape[0]):
                for j in range(bq.shape[1]):
                    assert Fraction(float(fast[i, j])) == sum(fa[i][t] * fb[t][j] for t in range(len(fb)))


@given(st.integers(2, 9), st.integers(1, 30), st.floats(0, 0.9), st.integers(0, 2**31))
def test_split_exactness_property(n, phi, sp, seed):
    a = gen_random_scaled(n, sp, phi, seed)
    for side in (ROW_SPLIT, COL_SPLIT):
        s = split_matrix(a, side, SplitConfig(max_splits=64))
        assert s.remainder_zero
        assert np.array_equal(_sum_in_order(s.splits), a)
        # highest-order bits first: magnitudes shrink slice by slice
        mags = [np.abs(x).max() for x in s.splits]
        assert all(m1 >= m2 for m1, m2 in zip(mags, mags[1:]))


@given(st.integers(2, 6), st.integers(1, 30), st.integers(0, 2**31))
def test_pairwise_products_are_exact(n, phi, seed):
    a = gen_random_scaled(n, 0.2, phi, seed)
    b = gen_random_scaled(n, 0.2, phi, seed + 1)
    cfg = SplitConfig(max_splits=64)
    _pairwise_products_exact(split_matrix(a, ROW_SPLIT, cfg),
                             split_matrix(b, COL_SPLIT, cfg, inner_dim=n))


def test_identity_times_b_is_b():
    b = gen_random_scaled(15, 0.3, 30, seed=2)
    assert np.array_equal(accurate_matmul(np.eye(15), b), b)


def test_matches_rational_oracle_and_beats_plain_gemm():
    a = gen_random_scaled(20, 0.0, 30, seed=21)
    b = gen_random_scaled(20, 0.0, 30, seed=22)
    with warnings.catch_warnings():
        warnings.simplefilter("error", DegradedAccuracyWarning)
        c = accurate_matmul(a, b, SplitConfig(max_splits=64))
    oracle = exact_matmul_rounded(a, b)
    assert np.array_equal(c, oracle)
    assert np.count_nonzero(a @ b != oracle) > 0


def test_identity_mix_matches_oracle():
    a = gen_identity_mix(25, 0.9, seed=3)
    b = gen_identity_mix(25, 0.9, seed=4)
    assert np.array_equal(accurate_matmul(a, b), exact_matmul_rounded(a, b))


def test_sparsity_flags_never_change_values():
    a = gen_random_scaled(30, 0.5, 30, seed=8)
    b = gen_random_scaled(30, 0.5, 30, seed=9)
    ref = accurate_matmul(a, b, SplitConfig(sparse_threshold=0.0))
    assert np.array_equal(ref, accurate_matmul(a, b, SplitConfig(sparse_threshold=1.0)))


def test_split_cap_reports_degraded_accuracy():
    a = gen_random_scaled(10, 0.0, 30, seed=1)
    s = split_matrix(a, cfg=SplitConfig(max_splits=2))
    assert len(s) == 2 and not s.remainder_zero
    assert np.array_equal(_sum_in_order(s.splits), a)
    with pytest.warns(DegradedAccuracyWarning):
        accurate_matmul(a, a, SplitConfig(max_splits=2))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        accurate_matmul(np.ones((2, 3)), np.ones((2, 3)))
