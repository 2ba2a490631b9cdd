"""Full-batch descent with Armijo backtracking.

Two search directions are available: the negative gradient, and an
L-BFGS direction built from the last few accepted steps.  Either way
every accepted step satisfies the Armijo condition
``f(x + t d) <= f(x) + ARMIJO_SLOPE * t * g.d`` with ``t`` halved from its
initial value, so the loss sequence is non-increasing.

Objectives from :mod:`resnet_landscape.kernels` running on the numba
backend are minimised by a compiled copy of the same loop; the Python
loop below is the reference and the numpy-backend path.
"""

import numpy as np

from .errors import InvalidInputError, NumericalError

__all__ = ["armijo_descent", "ARMIJO_SHRINK", "ARMIJO_SLOPE", "METHODS"]

ARMIJO_SHRINK = 0.5
ARMIJO_SLOPE = 1e-4
METHODS = ("gd", "lbfgs")

# halvings before a line search is declared stalled (t ~ 1e-18 from t = 1)
_MAX_HALVINGS = 60
# Once f is at its rounding floor the Armijo right-hand side rounds to f and
# zero-progress steps pass the test; this many in a row count as stalled.
_MAX_FLAT_STEPS = 20


def _two_loop(g, S, Yv, rho):
    q = g.copy()
    alpha = np.empty(len(S))
    for i in range(len(S) - 1, -1, -1):
        alpha[i] = rho[i] * (S[i] @ q)
        q -= alpha[i] * Yv[i]
    q *= (S[-1] @ Yv[-1]) / (Yv[-1] @ Yv[-1])
    for i in range(len(S)):
        b = rho[i] * (Yv[i] @ q)
        q += (alpha[i] - b) * S[i]
    return -q


def armijo_descent(
    objective,
    x0,
    grad_tol,
    max_iter,
    method="gd",
    step0=1.0,
    warm_start=False,
    memory=10,
    on_step=None,
):
    """Minimise ``objective`` until ``||grad|| <= grad_tol`` or ``max_iter`` steps.

    Parameters
    ----------
    objective : object
        Provides ``value(x)`` and ``value_grad(x) -> (f, g)``.
    method : {"gd", "lbfgs"}
    step0 : float
        First trial step of every line search.
    warm_start : bool
        For ``gd`` only: start each line search at twice the previous
        accepted step instead of ``step0``.
    on_step : callable, optional
        ``on_step(iteration, f, grad_norm)``, called for the start point and
        after every accepted step.

    Returns
    -------
    x, f, grad_norm, iterations, status
        ``status`` is ``"converged"``, ``"max_iter"`` or ``"stalled"`` (no
        step along a descent direction lowers ``f`` in floating point, or
        the last ``_MAX_FLAT_STEPS`` accepted steps all left ``f`` unchanged).
    """
    if method not in METHODS:
        raise InvalidInputError(f"unknown descent method {method!r}")
    if getattr(objective, "use_jit", False) and hasattr(objective, "nb_args"):
        return _compiled(objective, x0, grad_tol, max_iter, method, step0, warm_start, memory, on_step)
    x = np.array(x0, dtype=np.float64)
    f, g = objective.value_grad(x)
    gnorm = float(np.linalg.norm(g))
    if not np.isfinite(f) or not np.isfinite(gnorm):
        raise NumericalError("objective is not finite at the starting point")
    if on_step is not None:
        on_step(0, f, gnorm)
    S, Yv, rho = [], [], []
    last_step = step0
    it = 0
    flat = 0
    while gnorm > grad_tol:
        if it >= max_iter:
            return x, f, gnorm, it, "max_iter"
        d = _two_loop(g, S, Yv, rho) if (method == "lbfgs" and S) else -g
        slope = float(g @ d)
        if slope >= 0.0:
            S, Yv, rho = [], [], []
            d = -g
            slope = -gnorm * gnorm
        t = min(2.0 * last_step, 1e12) if (warm_start and method == "gd") else step0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            x_new = x + t * d
            f_new = objective.value(x_new)
            if f_new <= f + ARMIJO_SLOPE * t * slope:
                accepted = True
                break
            t *= ARMIJO_SHRINK
        if not accepted:
            if S:
                # stale curvature pairs; retry from the plain gradient
                S, Yv, rho = [], [], []
                continue
            return x, f, gnorm, it, "stalled"
        f_new, g_new = objective.value_grad(x_new)
        if not np.isfinite(f_new):
            raise NumericalError(f"objective became non-finite at iteration {it + 1}")
        flat = 0 if f_new < f else flat + 1
        if method == "lbfgs":
            s = x_new - x
            y = g_new - g
            sy = float(s @ y)
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                S.append(s)
                Yv.append(y)
                rho.append(1.0 / sy)
                if len(S) > memory:
                    S.pop(0)
                    Yv.pop(0)
                    rho.pop(0)
        it += 1
        last_step = t
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        if on_step is not None:
            on_step(it, f, gnorm)
        if flat >= _MAX_FLAT_STEPS and gnorm > grad_tol:
            return x, f, gnorm, it, "stalled"
    return x, f, gnorm, it, "converged"


_STATUS = ("converged", "max_iter", "stalled")


def _compiled(objective, x0, grad_tol, max_iter, method, step0, warm_start, memory, on_step):
    from .kernels import jit_descent

    x, f, gnorm, it, code, fs, gs = jit_descent(
        objective, x0, grad_tol, max_iter, method == "lbfgs", memory, step0, warm_start,
        ARMIJO_SHRINK, ARMIJO_SLOPE, _MAX_HALVINGS, _MAX_FLAT_STEPS,
    )
    if code == 3:
        if it == 0 and not np.isfinite(fs[0]):
            raise NumericalError("objective is not finite at the starting point")
        raise NumericalError(f"objective became non-finite at iteration {it + 1}")
    if on_step is not None:
        for k in range(it + 1):
            on_step(k, float(fs[k]), float(gs[k]))
    return x, f, gnorm, it, _STATUS[code]
