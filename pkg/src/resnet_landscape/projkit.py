"""Rank-revealing dense-matrix utilities.

Orthogonal projectors, pseudoinverse, Kronecker product and column-major
vectorization.  Every routine works in double precision and rejects
non-finite input.  Projectors are built from a thin SVD, keeping the left
singular vectors whose singular value exceeds ``rank_tol``; the default
cutoff is ``max(rows, cols) * eps * sigma_max``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError

__all__ = [
    "Projector",
    "as_matrix",
    "default_rank_tol",
    "numerical_rank",
    "col_projector",
    "null_projector",
    "pinv",
    "kron",
    "vec",
    "unvec",
    "fro_norm",
    "joint_rank_tol",
    "block_projection_identity_check",
]

EPS = np.finfo(np.float64).eps


def as_matrix(M, name="M"):
    """Return ``M`` as a finite 2-D float64 array.

    1-D input is treated as a column vector.  Empty dimensions are
    rejected.
    """
    A = np.asarray(M, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={A.ndim}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return A


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector together with the rank bookkeeping behind it.

    ``source_rank`` is the numerical rank of the matrix the projector was
    generated from; ``dim`` is the dimension of the projector's range
    (equal to ``source_rank`` for column-space projectors and to
    ``rows - source_rank`` for null-space projectors).
    """

    matrix: np.ndarray
    source_rank: int
    tolerance: float
    dim: int

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.matrix
        return self.matrix.astype(dtype)

    def __matmul__(self, other):
        return self.matrix @ np.asarray(other)

    def __rmatmul__(self, other):
        return np.asarray(other) @ self.matrix

    @property
    def shape(self):
        return self.matrix.shape


def default_rank_tol(M):
    s_max = np.linalg.norm(M, 2) if M.size else 0.0
    return max(M.shape) * EPS * s_max


def _range_basis(M, rank_tol):
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if rank_tol is None:
        rank_tol = max(M.shape) * EPS * (s[0] if s.size else 0.0)
    elif rank_tol <= 0:
        raise InvalidInputError(f"rank_tol must be positive, got {rank_tol}")
    r = int(np.count_nonzero(s > rank_tol))
    return U[:, :r], r, float(rank_tol)


def numerical_rank(M, rank_tol=None):
    """Number of singular values of ``M`` above ``rank_tol``."""
    M = as_matrix(M)
    _, r, _ = _range_basis(M, rank_tol)
    return r


def _outer_projector(Ur, m):
    if Ur.shape[1] == 0:
        return np.zeros((m, m))
    P = Ur @ Ur.T
    return 0.5 * (P + P.T)


def col_projector(M, rank_tol=None):
    """Orthogonal projector onto the numerical column space of ``M``.

    Parameters
    ----------
    M : array_like, shape (m, n)
    rank_tol : float, optional
        Singular values at or below this value are treated as zero.

    Returns
    -------
    Projector
        ``P`` of shape (m, m) with ``P @ M == M`` up to rounding.
    """
    M = as_matrix(M)
    Ur, r, tol = _range_basis(M, rank_tol)
    return Projector(_outer_projector(Ur, M.shape[0]), r, tol, r)


def null_projector(M, rank_tol=None):
    """Orthogonal projector onto the null space of ``M.T``, i.e. ``I - P[M]``."""
    M = as_matrix(M)
    m = M.shape[0]
    Ur, r, tol = _range_basis(M, rank_tol)
    P = np.eye(m) - _outer_projector(Ur, m)
    return Projector(0.5 * (P + P.T), r, tol, m - r)


def pinv(M, rank_tol=None):
    """Moore-Penrose pseudoinverse through a truncated SVD."""
    M = as_matrix(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if rank_tol is None:
        rank_tol = max(M.shape) * EPS * (s[0] if s.size else 0.0)
    elif rank_tol <= 0:
        raise InvalidInputError(f"rank_tol must be positive, got {rank_tol}")
    keep = s > rank_tol
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def kron(A, B):
    """Kronecker product ``A (x) B`` of shape (rA*rB, cA*cB)."""
    return np.kron(as_matrix(A, "A"), as_matrix(B, "B"))


def vec(M):
    """Column-major stacking of ``M`` into a column vector of length rows*cols."""
    M = as_matrix(M)
    return M.reshape(-1, 1, order="F")


def unvec(v, rows, cols):
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != rows * cols:
        raise ShapeError(f"cannot reshape length {v.size} into ({rows}, {cols})")
    return v.reshape(rows, cols, order="F")


def fro_norm(M):
    return float(np.linalg.norm(np.asarray(M, dtype=np.float64)))


def joint_rank_tol(*mats):
    """Absolute rank cutoff shared by projectors built from blocks of ``[X Z ...]``.

    Using one cutoff scaled by the whole block keeps ``P_N[X] Z`` from
    promoting rounding noise to rank when ``Z`` lies in ``col(X)``.
    """
    full = np.hstack([as_matrix(M) for M in mats])
    return max(max(full.shape) * EPS * np.linalg.norm(full, 2), np.finfo(np.float64).tiny)


def block_projection_identity_check(X, Z, rank_tol=None):
    """Residual ``||P[[X Z]] - (P[X] + P[P_N[X] Z])||_F``.

    The two sides agree exactly in exact arithmetic; callers compare the
    returned residual against a small tolerance.
    """
    X = as_matrix(X, "X")
    Z = as_matrix(Z, "Z")
    if X.shape[0] != Z.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but Z has {Z.shape[0]}")
    if rank_tol is None:
        rank_tol = joint_rank_tol(X, Z)
    lhs = col_projector(np.hstack([X, Z]), rank_tol).matrix
    PN = null_projector(X, rank_tol).matrix
    rhs = col_projector(X, rank_tol).matrix + col_projector(PN @ Z, rank_tol).matrix
    return fro_norm(lhs - rhs)
