import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codedqr.densela import as_matrix, back_substitute, bmgs_qr, cgs_panel, mgs_qr
from codedqr.errors import BadDimensions, BlockMismatch, RankDeficient, SingularTriangular


def rand(m, k, seed):
    return np.random.default_rng(seed).random((m, k))


@pytest.mark.parametrize("qr", [mgs_qr, cgs_panel])
def test_identity(qr):
    Q, R = qr(np.eye(4))
    assert np.array_equal(Q, np.eye(4))
    assert np.array_equal(R, np.eye(4))


@pytest.mark.parametrize("qr", [mgs_qr, cgs_panel])
def test_pythagorean_column(qr):
    Q, R = qr([[3.0], [4.0]])
    assert np.allclose(Q, [[0.6], [0.8]], atol=1e-15)
    assert np.allclose(R, [[5.0]], atol=1e-15)


def test_mgs_random_8x8_seed7():
    A = rand(8, 8, 7)
    Q, R = mgs_qr(A)
    assert np.linalg.norm(A - Q @ R) <= 1e-12
    assert np.linalg.norm(Q.T @ Q - np.eye(8)) <= 1e-12
    # Gram oracle: A^T A = R^T R
    assert np.allclose(A.T @ A, R.T @ R, rtol=1e-12, atol=1e-12)


def test_cgs_diag():
    Q, R = cgs_panel(np.diag([2.0, 3.0]))
    assert np.array_equal(Q, np.eye(2))
    assert np.array_equal(R, np.diag([2.0, 3.0]))


def test_cgs_matches_mgs_16x4():
    A = rand(16, 4, 1)
    Qc, _ = cgs_panel(A)
    Qm, _ = mgs_qr(A)
    # both enforce r_ii > 0, so no sign fix-up is needed
    assert np.max(np.abs(Qc - Qm)) <= 1e-10


def test_bmgs_single_panel_equals_cgs():
    A = rand(10, 5, 2)
    Qb, Rb = bmgs_qr(A, 5, panel="cgs")
    Qc, Rc = cgs_panel(A)
    assert np.array_equal(Qb, Qc)
    assert np.array_equal(Rb, Rc)


def test_bmgs_identity_b2():
    Q, R = bmgs_qr(np.eye(6), 2)
    assert np.array_equal(Q, np.eye(6))
    assert np.array_equal(R, np.eye(6))


def test_bmgs_random_12x12_b3():
    A = rand(12, 12, 3)
    Q, R = bmgs_qr(A, 3)
    assert np.linalg.norm(Q @ R - A) <= 1e-11


def test_bmgs_block_mismatch():
    with pytest.raises(BlockMismatch):
        bmgs_qr(np.eye(6), 4)


def test_rank_deficient():
    A = np.ones((4, 2))
    for qr in (mgs_qr, cgs_panel):
        with pytest.raises(RankDeficient):
            qr(A)
    with pytest.raises(RankDeficient):
        bmgs_qr(np.ones((4, 4)), 2)


def test_input_validation():
    with pytest.raises(BadDimensions):
        mgs_qr(np.ones((2, 3)))
    with pytest.raises(BadDimensions):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(BadDimensions):
        as_matrix(np.ones((2, 2, 2)))


def test_back_substitute_examples():
    y = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(back_substitute(np.eye(3), y), y)
    x = back_substitute([[2.0, 1.0], [0.0, 4.0]], [5.0, 8.0])
    assert np.allclose(x, [1.5, 2.0], atol=1e-15)


def test_back_substitute_random_and_matrix_rhs():
    rng = np.random.default_rng(4)
    R = np.triu(rng.random((10, 10))) + 10 * np.eye(10)
    y = rng.random(10)
    x = back_substitute(R, y)
    assert np.linalg.norm(R @ x - y) <= 1e-12 * np.linalg.norm(y)
    Y = rng.random((10, 3))
    X = back_substitute(R, Y)
    assert X.shape == (10, 3)
    assert np.allclose(R @ X, Y, atol=1e-12)


def test_back_substitute_singular():
    with pytest.raises(SingularTriangular):
        back_substitute([[1.0, 1.0], [0.0, 0.0]], [1.0, 1.0])


def test_variants_agree_32x32():
    A = rand(32, 32, 5) + 4 * np.eye(32)
    Qm, _ = mgs_qr(A)
    for Q, _ in (cgs_panel(A), bmgs_qr(A, 8), bmgs_qr(A, 4, panel="cgs")):
        assert np.max(np.abs(Q - Qm)) <= 1e-8


def test_deterministic():
    A = rand(20, 20, 6)
    a = bmgs_qr(A, 5)
    b = bmgs_qr(A.copy(), 5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 16), extra=st.integers(0, 8), seed=st.integers(0, 2**32 - 1),
       which=st.sampled_from(["mgs", "cgs", "bmgs"]))
def test_qr_properties(k, extra, seed, which):
    A = rand(k + extra, k, seed) + np.eye(k + extra, k)
    if which == "mgs":
        Q, R = mgs_qr(A)
    elif which == "cgs":
        Q, R = cgs_panel(A)
    else:
        block = max(b for b in range(1, k + 1) if k % b == 0 and b <= 4)
        Q, R = bmgs_qr(A, block)
    assert np.all(np.tril(R, -1) == 0.0)
    assert np.all(np.diag(R) > 0)
    assert np.linalg.norm(Q.T @ Q - np.eye(k)) <= 1e-10 * k
    assert np.linalg.norm(A - Q @ R) <= 1e-12 * max(1.0, np.linalg.norm(A))
