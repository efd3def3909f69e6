"""Sequential dense kernels: Gram-Schmidt QR variants and triangular solve.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every QR routine
here is pivot-free and rejects rank-deficient input instead of repairing it.
"""
import numpy as np

from .errors import BadDimensions, BlockMismatch, RankDeficient, SingularTriangular

RANK_TOL = 1e-12


def as_matrix(data, name="matrix"):
    """Return `data` as a C-contiguous 2-D float64 array, rejecting NaN/Inf."""
    arr = np.array(data, dtype=np.float64, order="C", copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise BadDimensions(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise BadDimensions(f"{name} contains NaN or Inf entries")
    return arr


def _check_tall(A):
    m, k = A.shape
    if m < k:
        raise BadDimensions(f"need rows >= cols, got {m}x{k}")
    if k == 0:
        raise BadDimensions("matrix has no columns")


def _mgs_rows(Ut, R, offset, tol):
    # Ut holds the columns of the panel as rows; updated in place into Q^T.
    k = Ut.shape[0]
    for i in range(k):
        rii = np.sqrt(Ut[i] @ Ut[i])
        if not rii > tol:
            raise RankDeficient(f"r[{offset + i},{offset + i}] = {rii:.3e} <= {tol:.3e}")
        Ut[i] /= rii
        R[offset + i, offset + i] = rii
        if i + 1 < k:
            proj = Ut[i + 1:] @ Ut[i]
            R[offset + i, offset + i + 1:offset + k] = proj
            Ut[i + 1:] -= np.outer(proj, Ut[i])


def _cgs_rows(Ut, R, offset, tol):
    # One reduction per column: v = U[:, i:]^T u_i, then scale by r_ii.
    k = Ut.shape[0]
    for i in range(k):
        v = Ut[i:] @ Ut[i]
        rii = np.sqrt(v[0]) if v[0] > 0 else 0.0
        if not rii > tol:
            raise RankDeficient(f"r[{offset + i},{offset + i}] = {rii:.3e} <= {tol:.3e}")
        v = v / rii
        R[offset + i, offset + i:offset + k] = v
        Ut[i] /= rii
        if i + 1 < k:
            Ut[i + 1:] -= np.outer(v[1:], Ut[i])


_PANELS = {"mgs": _mgs_rows, "cgs": _cgs_rows}


def mgs_qr(A):
    """Thin QR factorization by modified Gram-Schmidt.

    Parameters
    ----------
    A : array_like, shape (m, k) with m >= k
        Full column rank input.

    Returns
    -------
    Q : ndarray, shape (m, k)
    R : ndarray, shape (k, k)
        Upper triangular with a positive diagonal.

    Raises
    ------
    RankDeficient
        If some ``r_ii`` falls below ``RANK_TOL * ||A||_F``.
    """
    A = as_matrix(A, "A")
    _check_tall(A)
    k = A.shape[1]
    R = np.zeros((k, k))
    Ut = np.ascontiguousarray(A.T)
    _mgs_rows(Ut, R, 0, RANK_TOL * np.linalg.norm(A))
    return np.ascontiguousarray(Ut.T), R


def cgs_panel(A):
    """Panel QR with a single inner-product reduction per column.

    Same contract as :func:`mgs_qr`. Each step computes all inner products of
    the current column with the remaining ones at once, which is the pattern a
    1-D distributed panel uses to issue one all-reduce per column.
    """
    A = as_matrix(A, "A")
    _check_tall(A)
    k = A.shape[1]
    R = np.zeros((k, k))
    Ut = np.ascontiguousarray(A.T)
    _cgs_rows(Ut, R, 0, RANK_TOL * np.linalg.norm(A))
    return np.ascontiguousarray(Ut.T), R


def bmgs_qr(A, block, panel="mgs"):
    """Block modified Gram-Schmidt QR.

    Columns are processed in panels of width `block`; each panel is
    factorized with `panel` ("mgs" or "cgs") and then projected out of all
    columns to its right.
    """
    A = as_matrix(A, "A")
    _check_tall(A)
    k = A.shape[1]
    block = int(block)
    if block < 1 or k % block:
        raise BlockMismatch(f"block size {block} does not divide {k} columns")
    if panel not in _PANELS:
        raise ValueError(f"unknown panel kernel {panel!r}")
    factor = _PANELS[panel]
    tol = RANK_TOL * np.linalg.norm(A)
    R = np.zeros((k, k))
    Ut = np.ascontiguousarray(A.T)
    for s in range(0, k, block):
        e = s + block
        factor(Ut[s:e], R, s, tol)
        if e < k:
            rbar = Ut[e:] @ Ut[s:e].T  # (k - e) x block
            R[s:e, e:] = rbar.T
            Ut[e:] -= rbar @ Ut[s:e]
    return np.ascontiguousarray(Ut.T), R


def back_substitute(R, y):
    """Solve ``R x = y`` for upper-triangular `R`.

    `y` may be a vector or a matrix with one right-hand side per column; the
    result has the same shape as `y`.
    """
    R = as_matrix(R, "R")
    k = R.shape[0]
    if R.shape[1] != k:
        raise BadDimensions(f"R must be square, got {R.shape}")
    y_arr = np.asarray(y, dtype=np.float64)
    shape = y_arr.shape
    Y = y_arr.reshape(k, -1) if y_arr.size else y_arr.reshape(k, 0)
    if Y.shape[0] != k:
        raise BadDimensions(f"right-hand side has {Y.shape[0]} rows, expected {k}")
    diag = np.abs(np.diag(R))
    tol = RANK_TOL * np.linalg.norm(R)
    bad = np.flatnonzero(~(diag > tol))
    if bad.size:
        i = int(bad[0])
        raise SingularTriangular(f"|r[{i},{i}]| = {diag[i]:.3e} <= {tol:.3e}")
    X = np.zeros_like(Y, dtype=np.float64)
    for i in range(k - 1, -1, -1):
        X[i] = (Y[i] - R[i, i + 1:] @ X[i + 1:]) / R[i, i]
    return X.reshape(shape)
