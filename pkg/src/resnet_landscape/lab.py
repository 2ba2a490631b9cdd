"""Training to approximate local minima and checking what holds there.

The trainer is full-batch descent with Armijo backtracking from a unit
step; the search direction is L-BFGS by default (plain negative gradient
on request), so the loss trace is monotone either way.  A converged point
is then probed: random perturbations on a ladder of radii, optionally a
finite-difference Hessian.  Points that
pass are reported as certified local minima; everything else is reported
as is, never silently dropped.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstructionInfeasibleError,
    ConvergenceError,
    InvalidInputError,
    PreconditionError,
)
from .kernels import ResNetObjective
from .losses import LossKind, batch_loss, validate_targets
from .model import (
    DataSet,
    ParamLayout,
    ResNetParams,
    check_output_dim_assumption,
    init_params,
    predict_batch,
    residual_batch,
)
from .optim import armijo_descent
from .oracle import convex_oracle_xz, sq_oracle_x, sq_oracle_xz
from .projkit import fro_norm

__all__ = [
    "Verdict",
    "CertificationConfig",
    "CertificationResult",
    "TrainReport",
    "DeadReluPoint",
    "make_rng",
    "train",
    "certify_point",
    "certify_local_min",
    "lemma2_residuals",
    "verify_theorem",
    "oracle_value",
    "build_dead_relu_counterexample",
    "plain_net_objective",
    "null_space_perturb_check",
]


class Verdict(str, enum.Enum):
    CERTIFIED = "certified_local_min"
    UNCERTIFIED = "saddle_or_uncertified"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class CertificationConfig:
    n_directions: int = 64
    radii: tuple = (1e-2, 1e-3, 1e-4)
    hessian_check: bool = True
    hessian_dim_cap: int = 2000

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        if not radii or any(r <= 0 for r in radii):
            raise InvalidInputError("certification radii must be positive")
        if any(b >= a for a, b in zip(radii, radii[1:])):
            raise InvalidInputError("certification radii must be strictly decreasing")
        if self.n_directions < 1:
            raise InvalidInputError("n_directions must be >= 1")


@dataclass(frozen=True)
class CertificationResult:
    verdict: Verdict
    max_decrease: float  # largest f(x0) - f(x0 + r d) at the smallest radius
    decrease_by_radius: tuple
    min_hessian_eig: float = None  # None when the Hessian check was skipped

    @property
    def certified(self):
        return self.verdict is Verdict.CERTIFIED


@dataclass
class TrainReport:
    final_loss: float
    grad_norm: float
    iterations: int
    certification: Verdict
    lemma2_z_residual: float
    lemma2_x_residual: float
    oracle_gap: float
    l_star_x: float
    l_star_xz: float
    converged: bool
    monotone: bool
    status: str = "converged"  # descent outcome: converged, max_iter or stalled
    max_decrease: float = float("nan")
    min_hessian_eig: float = float("nan")
    trace: list = field(default_factory=list)


def make_rng(seed, stream=0):
    """PCG64 generator for ``(seed, stream)``; independent streams per purpose."""
    ss = np.random.SeedSequence(int(seed))
    if stream:
        ss = ss.spawn(stream + 1)[stream]
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

def _fd_hessian(value_grad, x0, h=1e-5):
    n = x0.size
    Hm = np.empty((n, n))
    x = x0.copy()
    for i in range(n):
        x[i] = x0[i] + h
        gp = value_grad(x)[1]
        x[i] = x0[i] - h
        gm = value_grad(x)[1]
        x[i] = x0[i]
        Hm[:, i] = (gp - gm) / (2.0 * h)
    return 0.5 * (Hm + Hm.T)


def _fd_hessian_values(fun, x0, h=1e-4):
    n = x0.size
    f0 = fun(x0)
    Hm = np.empty((n, n))
    E = np.eye(n) * h
    for i in range(n):
        for j in range(i, n):
            fpp = fun(x0 + E[i] + E[j])
            fpm = fun(x0 + E[i] - E[j])
            fmp = fun(x0 - E[i] + E[j])
            fmm = fun(x0 - E[i] - E[j])
            Hm[i, j] = Hm[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
    del f0
    return Hm


def certify_point(fun, x0, cert, rng, value_grad=None):
    """Sampling-based local-minimum test for a scalar function of a flat vector.

    For every radius, ``n_directions`` random unit directions are tried in
    both signs.  The point is certified iff no trial at the smallest
    radius lowers ``fun`` by more than ``1e-12 * (1 + |f(x0)|)`` and, when
    the Hessian check applies, the smallest eigenvalue of a
    finite-difference Hessian is at least ``-1e-6``.  ``value_grad``
    (returning ``(f, grad)``) makes the Hessian cheaper and more accurate.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    f0 = float(fun(x0))
    n = x0.size
    decreases = []
    for r in cert.radii:
        worst = -np.inf
        for _ in range(cert.n_directions):
            d = rng.standard_normal(n)
            d /= np.linalg.norm(d)
            worst = max(worst, f0 - fun(x0 + r * d), f0 - fun(x0 - r * d))
        decreases.append(float(worst))
    max_dec = decreases[-1]
    ok = max_dec <= 1e-12 * (1.0 + abs(f0))
    min_eig = None
    if cert.hessian_check and n <= cert.hessian_dim_cap:
        if value_grad is not None:
            Hm = _fd_hessian(value_grad, x0)
        else:
            Hm = _fd_hessian_values(fun, x0)
        min_eig = float(np.linalg.eigvalsh(Hm)[0])
        ok = ok and min_eig >= -1e-6
    verdict = Verdict.CERTIFIED if ok else Verdict.UNCERTIFIED
    return CertificationResult(verdict, max_dec, tuple(decreases), min_eig)


def certify_local_min(data, params, config, kind, cert=None, seed=0):
    """Certify ``params`` as a local minimum of the empirical ResNet objective."""
    cert = cert or CertificationConfig()
    layout = ParamLayout(data.d_x, data.d_y, config)
    obj = ResNetObjective(data, layout, kind)
    return certify_point(obj.value, layout.pack(params), cert, make_rng(seed, 2), obj.value_grad)


# ---------------------------------------------------------------------------
# stationarity conditions and oracle gaps
# ---------------------------------------------------------------------------

def _loss_rows(data, params, config, kind):
    Y = validate_targets(kind, data.Y)
    Z = residual_batch(data.X, params.theta, config)
    H = predict_batch(data.X, params, config)
    values, D = batch_loss(kind, H, Y)
    return float(np.mean(values)), D, Z


def lemma2_residuals(data, params, config, kind):
    """Frobenius norms of ``(1/m) sum_i z_i D_i`` and ``(1/m) sum_i x_i D_i``."""
    _, D, Z = _loss_rows(data, params, config, kind)
    m = data.m
    return fro_norm(Z.T @ D / m), fro_norm(data.X.T @ D / m)


def oracle_value(data, params, config, kind, tol=1e-10):
    """``L*`` over the basis ``{x, z(x, theta)}`` at the current theta.

    Squared loss uses the projector closed form.  Other losses run the
    convex solver twice, from zero and from ``(W, W V)``, and keep the
    lower value, so the result never exceeds the current loss.
    """
    kind = LossKind.parse(kind)
    Z = residual_batch(data.X, params.theta, config)
    if kind is LossKind.SQUARED:
        return sq_oracle_xz(data.X, Z, data.Y).l_star_xz
    best = np.inf
    for init in (None, (params.W, params.W @ params.V)):
        try:
            fit = convex_oracle_xz(data, Z, kind, tol=tol, init=init)
        except ConvergenceError as exc:
            fit = exc.best
        best = min(best, fit.objective)
    return best


def verify_theorem(data, params, config, kind):
    """``L(W, V, theta) - L*_{x, z(x, theta)}``: never negative, zero at local minima."""
    loss = _loss_rows(data, params, config, kind)[0]
    return loss - oracle_value(data, params, config, kind)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(
    data,
    config,
    kind,
    seed,
    grad_tol=1e-6,
    max_iter=200_000,
    method="lbfgs",
    init=None,
    cert=None,
    certify=True,
    trace_stride=1,
):
    """Train a ResNet with Armijo descent and assess the end point.

    Parameters
    ----------
    grad_tol : float
        Stop once the full gradient norm is at most this.  Values much below
        ``1e-7 * (1 + L)`` are not reachable: the Armijo test compares loss
        values and the attainable decrease drops below their rounding.
    method : {"lbfgs", "gd"}
        Search direction.
    init : ResNetParams, optional
        Starting point; a seeded He initialisation otherwise.
    certify : bool
        Probe converged end points with :func:`certify_point`.

    Returns
    -------
    params : ResNetParams
    report : TrainReport
    """
    kind = LossKind.parse(kind)
    check_output_dim_assumption(data.d_x, data.d_y, config.out_dim)
    layout = ParamLayout(data.d_x, data.d_y, config)
    obj = ResNetObjective(data, layout, kind)
    if init is None:
        init = init_params(data.d_x, data.d_y, config, make_rng(seed, 1))
    x0 = layout.pack(init)

    trace = []
    last = [np.inf, True]

    def on_step(it, f, gnorm):
        if f > last[0]:
            last[1] = False
        last[0] = f
        if it % trace_stride == 0:
            trace.append((it, f, gnorm))

    x, f, gnorm, iters, status = armijo_descent(obj, x0, grad_tol, max_iter, method=method, on_step=on_step)
    converged = status == "converged"
    if not trace or trace[-1][0] != iters:
        trace.append((iters, f, gnorm))
    params = layout.unpack(x)

    if kind is LossKind.SQUARED:
        Z = residual_batch(data.X, params.theta, config)
        orc = sq_oracle_xz(data.X, Z, data.Y)
        l_x, l_xz = orc.l_star_x, orc.l_star_xz
    else:
        l_x = _linear_only_value(data, kind)
        l_xz = oracle_value(data, params, config, kind)
    z_res, x_res = lemma2_residuals(data, params, config, kind)

    verdict = Verdict.BUDGET_EXHAUSTED
    max_dec = min_eig = float("nan")
    if converged and certify:
        res = certify_point(obj.value, x, cert or CertificationConfig(), make_rng(seed, 2), obj.value_grad)
        verdict = res.verdict
        max_dec = res.max_decrease
        min_eig = float("nan") if res.min_hessian_eig is None else res.min_hessian_eig
    elif converged:
        verdict = Verdict.UNCERTIFIED

    report = TrainReport(
        final_loss=float(f),
        grad_norm=float(gnorm),
        iterations=iters,
        certification=verdict,
        lemma2_z_residual=z_res,
        lemma2_x_residual=x_res,
        oracle_gap=float(f) - l_xz,
        l_star_x=l_x,
        l_star_xz=l_xz,
        converged=converged,
        monotone=last[1],
        status=status,
        max_decrease=max_dec,
        min_hessian_eig=min_eig,
        trace=trace,
    )
    return params, report


def _linear_only_value(data, kind, tol=1e-10):
    if LossKind.parse(kind) is LossKind.SQUARED:
        return sq_oracle_x(data.X, data.Y)
    try:
        return convex_oracle_xz(data, None, kind, tol=tol).objective
    except ConvergenceError as exc:
        return exc.best.objective


# ---------------------------------------------------------------------------
# plain-network counterexample
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeadReluPoint:
    W1: np.ndarray
    W2: np.ndarray
    local_value: float
    oracle_value: float
    c: float
    safe_radius: float  # c / max_i ||x_i||; the loss is constant on this ball

    @property
    def separation(self):
        return self.local_value - self.oracle_value


def plain_net_objective(data, d_hidden):
    """Squared-loss objective of ``W2 relu(W1 x)`` over the flat vector ``[vec(W1), vec(W2)]``."""
    X, Y = data.X, data.Y
    d_x, d_y = data.d_x, data.d_y
    n1 = d_hidden * d_x

    def fun(flat):
        W1 = flat[:n1].reshape(d_hidden, d_x, order="F")
        W2 = flat[n1:].reshape(d_y, d_hidden, order="F")
        H = np.maximum(X @ W1.T, 0.0) @ W2.T
        return float(np.mean(np.sum((H - Y) ** 2, axis=1)))

    return fun


def _dead_direction(X, rng, budget):
    """Unit ``w`` with ``w . x_i < 0`` for all rows, or None."""
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        return None
    candidates = [-(X / norms[:, None]).mean(axis=0)]
    for _ in range(budget):
        candidates.append(rng.standard_normal(X.shape[1]))
    for w in candidates:
        nw = np.linalg.norm(w)
        if nw == 0.0:
            continue
        w = w / nw
        s = X @ w
        if np.all(s < 0):
            return w
        if np.all(s > 0):
            return -w
    return None


def build_dead_relu_counterexample(data, c, seed, d_hidden=None, budget=10_000):
    """One-hidden-layer ReLU net whose hidden units are dead on every input.

    Every row of ``W1`` is a sign-aligned direction scaled so that all
    pre-activations are at most ``-2c``; the network then outputs zero on
    a ball of radius ``c / max_i ||x_i||`` around ``(W1, W2)``.

    Raises
    ------
    ConstructionInfeasibleError
        When the inputs do not lie in an open half-space, or when the zero
        predictor is no worse than the best linear predictor.
    """
    if c <= 0:
        raise InvalidInputError("c must be positive")
    X, Y = data.X, data.Y
    d_hidden = d_hidden or data.d_x
    local = float(np.mean(np.sum(Y * Y, axis=1)))
    best_linear = sq_oracle_x(X, Y)
    if local <= best_linear + 1e-12 * (1.0 + best_linear):
        raise ConstructionInfeasibleError(
            f"zero output loss {local:.6g} does not exceed the linear minimum {best_linear:.6g}"
        )
    rng = make_rng(seed, 3)
    rows = []
    for _ in range(d_hidden):
        w = _dead_direction(X, rng, budget)
        if w is None:
            raise ConstructionInfeasibleError("no direction makes every pre-activation negative")
        delta = -float(np.max(X @ w))
        rows.append(w * (2.0 * c / delta))
    W1 = np.vstack(rows)
    W2 = rng.standard_normal((data.d_y, d_hidden))
    radius = c / float(np.max(np.linalg.norm(X, axis=1)))
    return DeadReluPoint(W1, W2, local, best_linear, float(c), radius)


# ---------------------------------------------------------------------------
# null-space invariance
# ---------------------------------------------------------------------------

def null_space_perturb_check(data, params, config, kind, trials=10, seed=0, v_scale=0.1):
    """Largest loss change under ``V -> V + u v^T`` with ``W u = 0`` and ``||u|| = 1``.

    Requires ``rank(W) < d_y``.
    """
    W = params.W
    s = np.linalg.svd(W, compute_uv=False)
    tol = max(W.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.count_nonzero(s > tol))
    if rank >= params.d_y:
        raise PreconditionError(f"rank(W) = {rank} is not below d_y = {params.d_y}")
    _, _, Vt = np.linalg.svd(W)
    null_basis = Vt[rank:]
    if null_basis.shape[0] == 0:
        raise PreconditionError("Null(W) is numerically trivial")
    rng = make_rng(seed, 4)
    base = _loss_rows(data, params, config, kind)[0]
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(null_basis.shape[0]) @ null_basis
        u /= np.linalg.norm(u)
        v = v_scale * rng.standard_normal(params.d_z)
        moved = ResNetParams(W, params.V + np.outer(u, v), params.theta)
        worst = max(worst, abs(_loss_rows(data, moved, config, kind)[0] - base))
    return worst
