"""Global minimum values of basis-function models.

For the squared loss the minima over linear predictors ``R x`` and
``R1 x + R2 z`` have closed forms in terms of orthogonal projectors:

    L*_x  = (1/m) ||P_N[X] Y||_F^2
    L*_xz = L*_x - (1/m) ||P[P_N[X] Z] Y||_F^2

For any other convex loss the same infimum is approached with gradient
descent plus Armijo backtracking on the (convex) linear-model objective.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ShapeError
from .kernels import LinearObjective
from .losses import LossKind
from .optim import armijo_descent
from .projkit import as_matrix, col_projector, fro_norm, joint_rank_tol, null_projector

__all__ = [
    "OracleResult",
    "LinearModelFit",
    "sq_oracle_x",
    "sq_oracle_xz",
    "improvement_alt_form",
    "is_non_negligible",
    "convex_oracle_xz",
]

CONVEX_MAX_ITER = 200_000


@dataclass(frozen=True)
class OracleResult:
    l_star_x: float
    l_star_xz: float
    improvement: float
    residual_y: np.ndarray  # P_N[X] Y
    captured: np.ndarray  # P[P_N[X] Z] Y


@dataclass(frozen=True)
class LinearModelFit:
    R1: np.ndarray
    R2: np.ndarray
    objective: float
    grad_norm: float = 0.0
    iterations: int = 0


def _rows_match(*mats):
    m = {M.shape[0] for M in mats}
    if len(m) != 1:
        raise ShapeError(f"row counts differ: {[M.shape for M in mats]}")


def _as_features(Z, m):
    if Z is None:
        return np.zeros((m, 0))
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 2 and Z.shape[1] == 0:
        return Z
    return as_matrix(Z, "Z")


def sq_oracle_x(X, Y):
    """``min_R (1/m) ||X R - Y||_F^2`` through the null-space projector of ``X``."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    _rows_match(X, Y)
    PN = null_projector(X)
    return fro_norm(PN @ Y) ** 2 / X.shape[0]


def _projections(X, Z, Y):
    tol = joint_rank_tol(X, Z) if Z.shape[1] else joint_rank_tol(X)
    PN = null_projector(X, tol).matrix
    residual = PN @ Y
    if Z.shape[1] == 0:
        return PN, residual, np.zeros_like(Y), tol
    Pz = col_projector(PN @ Z, tol).matrix
    return PN, residual, Pz, tol


def sq_oracle_xz(X, Z, Y):
    """Closed-form minima over the bases ``{x}`` and ``{x, z}`` for the squared loss.

    ``Z`` may have zero columns, in which case the improvement is zero.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    Z = _as_features(Z, X.shape[0])
    _rows_match(X, Z, Y)
    m = X.shape[0]
    PN, residual, Pz, _ = _projections(X, Z, Y)
    captured = Pz @ Y if Z.shape[1] else np.zeros_like(Y)
    l_x = fro_norm(residual) ** 2 / m
    improvement = fro_norm(captured) ** 2 / m
    return OracleResult(l_x, l_x - improvement, improvement, residual, captured)


def improvement_alt_form(X, Z, Y):
    """Improvement term written as ``(1/m) ||P[P_N[X] Z] P_N[X] Y||_F^2``."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    Z = _as_features(Z, X.shape[0])
    _rows_match(X, Z, Y)
    if Z.shape[1] == 0:
        return 0.0
    _, residual, Pz, _ = _projections(X, Z, Y)
    return fro_norm(Pz @ residual) ** 2 / X.shape[0]


def is_non_negligible(result):
    """Whether the residual representation measurably lowers the minimum."""
    return result.improvement > 1e-8 * max(1.0, result.l_star_x)


def convex_oracle_xz(data, Z, kind, tol=1e-8, init=None, max_iter=CONVEX_MAX_ITER):
    """Minimise ``(1/m) sum_i l(R1 x_i + R2 z_i, y_i)`` over ``(R1, R2)``.

    Parameters
    ----------
    data : DataSet
    Z : array_like, shape (m, d_z) or None
        Fixed residual features; zero columns reduce the problem to the
        basis ``{x}`` alone.
    kind : LossKind or str
    tol : float
        Gradient-norm stopping tolerance.
    init : tuple of arrays, optional
        Starting ``(R1, R2)``; zeros by default.

    Raises
    ------
    ConvergenceError
        When ``max_iter`` iterations do not reach ``tol``.  The best
        :class:`LinearModelFit` is attached as ``best``; an unreachable
        tolerance usually means the infimum is not attained.
    """
    kind = LossKind.parse(kind)
    X = data.X
    Z = _as_features(Z, X.shape[0])
    _rows_match(X, Z, data.Y)
    d_x, d_z, d_y = X.shape[1], Z.shape[1], data.Y.shape[1]
    Phi = np.hstack([X, Z])
    obj = LinearObjective(Phi, data.Y, kind)
    if init is None:
        r0 = np.zeros(d_y * (d_x + d_z))
    else:
        R0 = np.hstack([np.asarray(init[0], dtype=np.float64), np.asarray(init[1], dtype=np.float64).reshape(d_y, d_z)])
        r0 = R0.reshape(-1, order="F")
    r, f, gnorm, it, status = armijo_descent(obj, r0, tol, max_iter, method="lbfgs")
    R = r.reshape(d_y, d_x + d_z, order="F")
    fit = LinearModelFit(R[:, :d_x].copy(), R[:, d_x:].copy(), float(f), float(gnorm), it)
    if status != "converged":
        raise ConvergenceError(
            f"convex solver stopped after {it} iterations with gradient norm {gnorm:.3e} > {tol:.1e}",
            best=fit,
        )
    return fit
