import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xtune.kernels import (DENSE_SCHEME, EXECUTABLE, SPARSE_SCHEME, VARIANTS, BlockConfig,
                           UnsupportedVariant, dense_gemm, run_variant, spmm_crs, spmm_crs_blocked,
                           spmm_ell, spmm_ell_blocked, spmv_crs, spmv_ell, variant)
from xtune.matrices import crs_to_ell, dense_to_crs, gen_identity_mix, gen_random_scaled
from xtune.ozaki import COL_SPLIT, ROW_SPLIT, accurate_product, split_matrix


def _ordered_matvec(a, x):
    # dense reference with the same ascending-column term order as the sparse kernels
    y = np.zeros(a.shape[0])
    for i in range(a.shape[0]):
        s = 0.0
        for j in np.flatnonzero(a[i]):
            s += a[i, j] * x[j]
        y[i] = s
    return y


def _splits(a, b):
    return split_matrix(a, ROW_SPLIT), split_matrix(b, COL_SPLIT, inner_dim=a.shape[1])


def test_variant_table():
    assert sorted(VARIANTS) == list(range(1, 15))
    assert EXECUTABLE == tuple(range(1, 10))
    assert all(not VARIANTS[v].executable for v in range(10, 15))
    assert DENSE_SCHEME[0] == 1 and 4 in SPARSE_SCHEME and 1 not in SPARSE_SCHEME
    assert variant(5).scheme == "spmm-blocked" and variant(9).format == "ELL"
    with pytest.raises(ValueError):
        variant(15)


def test_identity_kernels():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(7)
    b = rng.standard_normal((7, 4))
    eye = dense_to_crs(np.eye(7))
    assert np.array_equal(spmv_crs(eye, x), x)
    assert np.array_equal(spmv_ell(crs_to_ell(eye), x), x)
    assert np.array_equal(dense_gemm(np.eye(7), b), b)


def test_empty_row_gives_zero():
    a = np.array([[1.0, 2.0], [0.0, 0.0]])
    y = spmv_crs(dense_to_crs(a), np.array([3.0, 4.0]))
    assert y.tolist() == [11.0, 0.0]


@given(st.integers(1, 12), st.integers(1, 12), st.floats(0, 0.95), st.integers(0, 2**31),
       st.integers(1, 4))
def test_sparse_kernels_agree_bitwise(n, m, sp, seed, threads):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, m))
    a[rng.random((n, m)) < sp] = 0.0
    x = rng.standard_normal(m)
    b = rng.standard_normal((m, 5))
    c = dense_to_crs(a)
    e = crs_to_ell(c)
    y = spmv_crs(c, x, threads)
    assert np.array_equal(y, _ordered_matvec(a, x))
    assert np.array_equal(spmv_ell(e, x, threads), y)
    ref = spmm_crs(c, b)
    assert np.array_equal(spmm_ell(e, b, threads), ref)
    for w in (1, 2, 5):
        assert np.array_equal(spmm_crs_blocked(c, b, BlockConfig(w), threads), ref)
        assert np.array_equal(spmm_ell_blocked(e, b, BlockConfig(w), threads), ref)
    for j in range(5):
        assert np.array_equal(ref[:, j], spmv_crs(c, b[:, j]))


def test_block_width_bounds():
    c = dense_to_crs(np.eye(3))
    with pytest.raises(ValueError):
        spmm_crs_blocked(c, np.ones((3, 4)), BlockConfig(0))
    with pytest.raises(ValueError):
        spmm_crs_blocked(c, np.ones((3, 4)), BlockConfig(5))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv_crs(dense_to_crs(np.eye(3)), np.ones(4))
    with pytest.raises(ValueError):
        dense_gemm(np.ones((2, 3)), np.ones((2, 2)))


def test_gpu_variant_unsupported():
    sa, sb = _splits(np.eye(4), np.eye(4))
    for v in range(10, 15):
        with pytest.raises(UnsupportedVariant):
            run_variant(v, sa, sb)


def test_dense_and_crs_variants_agree_on_identity_mix():
    a = gen_identity_mix(100, 0.95, seed=1)
    b = gen_identity_mix(100, 0.95, seed=2)
    sa, sb = _splits(a, b)
    r1 = run_variant(1, sa, sb)
    r4 = run_variant(4, sa, sb)
    assert np.array_equal(r1.result, r4.result)
    assert r1.elapsed_seconds > 0 and r4.elapsed_seconds > 0


def test_block_widths_agree():
    a = gen_random_scaled(100, 0.9, 20, seed=3)
    b = gen_random_scaled(100, 0.0, 20, seed=4)
    sa, sb = _splits(a, b)
    outs = [run_variant(5, sa, sb, BlockConfig(w)).result for w in (1, 50, 100)]
    assert all(np.array_equal(o, outs[0]) for o in outs)


@pytest.mark.parametrize("gen", ["scaled", "mix"])
def test_all_variants_match_reference_path(gen):
    if gen == "scaled":
        a = gen_random_scaled(60, 0.6, 30, seed=5)
        b = gen_random_scaled(60, 0.6, 30, seed=6)
    else:
        a = gen_identity_mix(60, 0.92, seed=5)
        b = gen_identity_mix(60, 0.92, seed=6)
    sa, sb = _splits(a, b)
    ref = accurate_product(sa, sb)
    for v in EXECUTABLE:
        for threads in (1, 3):
            assert np.array_equal(run_variant(v, sa, sb, threads=threads).result, ref), (v, threads)


def test_rectangular_product():
    a = gen_random_scaled(12, 0.5, 10, seed=1)
    b = gen_random_scaled(12, 0.5, 10, seed=2, cols=30)
    sa, sb = _splits(a, b)
    ref = accurate_product(sa, sb)
    assert ref.shape == (12, 30)
    for v in EXECUTABLE:
        assert np.array_equal(run_variant(v, sa, sb, BlockConfig(7)).result, ref)


def test_threads_from_environment(monkeypatch):
    from xtune.kernels import default_threads
    monkeypatch.setenv("XTUNE_THREADS", "3")
    assert default_threads() == 3
