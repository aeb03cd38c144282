import numpy as np
import pytest

from xtune.matrices import dense_to_crs, gen_random_scaled
from xtune.mmio import (MMDuplicateError, MMHeaderError, MMIndexError, mm_read, mm_write, read_vector,
                        write_vector)
from xtune.piccg import p3d_generate


def _write(tmp_path, text):
    p = tmp_path / "m.mtx"
    p.write_text(text)
    return p


def test_read_identity(tmp_path):
    p = _write(tmp_path, "%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1\n2 2 1\n")
    m = mm_read(p)
    assert m.nnz == 2 and np.array_equal(m.to_dense(), np.eye(2))


def test_symmetric_expansion(tmp_path):
    p = _write(tmp_path, "%%MatrixMarket matrix coordinate real symmetric\n3 3 4\n"
                         "1 1 2\n2 1 -1\n3 2 -1\n3 3 2\n")
    m = mm_read(p)
    assert m.nnz == 2 * 2 + 2
    assert m.is_symmetric()


@pytest.mark.parametrize("text,exc", [
    ("%%MatrixMarket matrix array real general\n1 1\n1\n", MMHeaderError),
    ("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n", MMHeaderError),
    ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n", MMHeaderError),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n", MMIndexError),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n0 1 1\n", MMIndexError),
    ("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 2 1\n", MMIndexError),
    ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n1 1 2\n", MMDuplicateError),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1\n", MMHeaderError),
])
def test_malformed_inputs_have_distinct_errors(tmp_path, text, exc):
    with pytest.raises(exc):
        mm_read(_write(tmp_path, text))


def test_general_round_trip_bitwise(tmp_path):
    a = gen_random_scaled(30, 0.5, 30, seed=4)
    p = tmp_path / "a.mtx"
    mm_write(p, dense_to_crs(a))
    assert np.array_equal(mm_read(p).to_dense(), a)


def test_p3d_symmetric_round_trip_bitwise(tmp_path):
    prob = p3d_generate(16, 1.0, 1e-3)
    p = tmp_path / "p3d.mtx"
    mm_write(p, prob.a, symmetric=True, comment="layered\nproblem")
    back = mm_read(p)
    assert np.array_equal(back.row_ptr, prob.a.row_ptr)
    assert np.array_equal(back.col_idx, prob.a.col_idx)
    assert np.array_equal(back.vals, prob.a.vals)


def test_symmetric_write_rejects_asymmetric(tmp_path):
    with pytest.raises(ValueError):
        mm_write(tmp_path / "x.mtx", dense_to_crs(np.triu(np.ones((3, 3)))), symmetric=True)


def test_vector_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal(50) * 1e-300
    write_vector(tmp_path / "x.txt", x)
    assert np.array_equal(read_vector(tmp_path / "x.txt"), x)
