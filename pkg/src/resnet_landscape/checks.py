"""Acceptance property suite.

Each check is a seeded, self-contained numerical experiment with a pinned
tolerance and a wall-clock budget.  ``run_checks`` prints one PASS/FAIL
line per check; the same functions back ``resnet-landscape check`` and
``tests/test_acceptance.py``.
"""

import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .data import replicated_dataset
from .errors import ConstructionInfeasibleError, ConvergenceError
from .lab import (
    CertificationConfig,
    Verdict,
    build_dead_relu_counterexample,
    certify_point,
    make_rng,
    null_space_perturb_check,
    plain_net_objective,
    train,
)
from .losses import LossKind, batch_loss, empirical_objective, validate_targets
from .model import (
    DataSet,
    ResNetParams,
    StackConfig,
    dh_dV,
    dh_dW,
    grad_loss_params,
    init_params,
    predict,
    predict_batch,
    residual_batch,
)
from .oracle import convex_oracle_xz, improvement_alt_form, sq_oracle_xz
from .projkit import block_projection_identity_check, col_projector, fro_norm, joint_rank_tol, null_projector

__all__ = ["CheckResult", "CHECKS", "CHECK_COLUMNS", "run_checks", "EQUALITY_ARCHS", "equality_configs"]

CHECK_COLUMNS = ("criterion", "name", "passed", "elapsed_s", "budget_s", "detail")


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    elapsed: float
    budget: float
    detail: str
    metrics: dict = field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        budget = f"{self.budget:.0f}s" if math.isfinite(self.budget) else "no limit"
        return f"[{tag}] criterion {self.number:2d} {self.name}: {self.detail} ({self.elapsed:.1f}s / {budget})"

    def as_row(self):
        return {
            "criterion": self.number, "name": self.name, "passed": self.passed,
            "elapsed_s": self.elapsed, "budget_s": self.budget, "detail": self.detail,
        }


def _rel(a, b, floor=1e-300):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(np.asarray(b)), np.linalg.norm(np.asarray(a)), floor))


# ---------------------------------------------------------------------------
# 1. projection algebra
# ---------------------------------------------------------------------------

def _random_xzy(rng, m_max=32, d_max=16):
    m = int(rng.integers(2, m_max + 1))
    d_x = int(rng.integers(1, d_max + 1))
    d_z = int(rng.integers(1, d_max + 1))
    d_y = int(rng.integers(1, 5))
    X = rng.standard_normal((m, d_x))
    mode = rng.integers(0, 4)
    if mode == 0:  # Z inside col(X)
        Z = X @ rng.standard_normal((d_x, d_z))
    elif mode == 1 and d_z > 1:  # repeated columns in Z
        Z = rng.standard_normal((m, d_z))
        Z[:, -1] = Z[:, 0]
    elif mode == 2 and d_x > 1:  # rank-deficient X
        X[:, -1] = 2.0 * X[:, 0]
        Z = rng.standard_normal((m, d_z))
    else:
        Z = rng.standard_normal((m, d_z))
    return X, Z, rng.standard_normal((m, d_y))


def check_projection_algebra(n=1000, seed=1):
    rng = make_rng(seed)
    worst = dict(proj=0.0, block=0.0, trace=0.0, forms=0.0)
    for _ in range(n):
        X, Z, Y = _random_xzy(rng)
        tol = joint_rank_tol(X, Z)
        NX = null_projector(X).matrix
        NXZ = NX @ Z
        for P in (col_projector(X).matrix, NX, col_projector(Z).matrix, col_projector(NXZ, tol).matrix,
                  col_projector(np.hstack([X, Z])).matrix):
            worst["proj"] = max(worst["proj"], fro_norm(P @ P - P), fro_norm(P - P.T))
        worst["block"] = max(worst["block"], block_projection_identity_check(X, Z))
        PZ = col_projector(NXZ, tol).matrix
        lhs = np.trace((NX @ Y).T @ PZ @ Y)
        worst["trace"] = max(worst["trace"], abs(lhs - fro_norm(PZ @ Y) ** 2))
        worst["forms"] = max(worst["forms"], abs(improvement_alt_form(X, Z, Y) - sq_oracle_xz(X, Z, Y).improvement))
    ok = worst["proj"] < 1e-10 and worst["block"] < 1e-9 and worst["trace"] < 1e-9 and worst["forms"] < 1e-9
    detail = (f"n={n} max projector defect {worst['proj']:.1e} (<1e-10), block {worst['block']:.1e}, "
              f"trace {worst['trace']:.1e}, forms {worst['forms']:.1e} (<1e-9)")
    return ok, detail, worst


# ---------------------------------------------------------------------------
# 2. oracle equivalence
# ---------------------------------------------------------------------------

def _normal_equation_min(X, Z, Y):
    """Least squares on [X Z] through the pseudoinverse of the normal matrix (not the SVD projector)."""
    A = np.hstack([X, Z])
    R = np.linalg.pinv(A.T @ A, rcond=1e-13, hermitian=True) @ (A.T @ Y)
    return float(np.sum((A @ R - Y) ** 2)) / X.shape[0]


def check_oracle_equivalence(n=500, seed=2):
    rng = make_rng(seed)
    worst_closed = worst_convex = 0.0
    for _ in range(n):
        m = int(rng.integers(4, 33))
        d_x = int(rng.integers(1, min(16, m - 2) + 1))
        d_z = int(rng.integers(1, min(16, m - d_x - 1) + 1))
        X = rng.standard_normal((m, d_x))
        Z = rng.standard_normal((m, d_z))
        Y = rng.standard_normal((m, int(rng.integers(1, 4))))
        closed = sq_oracle_xz(X, Z, Y).l_star_xz
        direct = _normal_equation_min(X, Z, Y)
        scale = max(abs(direct), 1e-300)
        worst_closed = max(worst_closed, abs(closed - direct) / scale)
        try:
            fit = convex_oracle_xz(DataSet(X, Y), Z, LossKind.SQUARED)
        except ConvergenceError as exc:
            fit = exc.best
        worst_convex = max(worst_convex, abs(fit.objective - closed))
    ok = worst_closed <= 1e-9 and worst_convex <= 1e-6
    detail = f"n={n} closed vs normal-equation rel {worst_closed:.1e} (<=1e-9), convex vs closed {worst_convex:.1e} (<=1e-6)"
    return ok, detail, {"closed": worst_closed, "convex": worst_convex}


# ---------------------------------------------------------------------------
# 3. gradient checks
# ---------------------------------------------------------------------------

_SMOOTH = ("tanh", "sigmoid")


def _fd_jac(fun, x0, h=1e-6):
    f0 = np.atleast_1d(fun(x0))
    J = np.empty((f0.size, x0.size))
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        J[:, i] = (np.atleast_1d(fun(x0 + e)) - np.atleast_1d(fun(x0 - e))) / (2 * h)
    return J


def _targets(kind, rng, m, d_y):
    if kind is LossKind.SQUARED:
        return rng.standard_normal((m, d_y))
    if kind is LossKind.LOGISTIC_BINARY:
        return rng.integers(0, 2, (m, 1)).astype(float)
    if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        return np.eye(d_y)[rng.integers(0, d_y, m)]
    return np.where(rng.random((m, d_y)) < 0.5, -1.0, 1.0)


def check_gradients(points=100, seed=3):
    from .model import ParamLayout

    rng = make_rng(seed)
    worst = dict(dW=0.0, dV=0.0, grad=0.0)
    for kind in LossKind:
        for p in range(points):
            d_x = int(rng.integers(2, 5))
            d_y = 1 if kind is LossKind.LOGISTIC_BINARY else int(rng.integers(1, d_x + 1))
            if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
                d_y = max(d_y, 2)
            depth = int(rng.integers(0, 3))
            skip = bool(rng.integers(0, 2)) and depth > 0
            w = int(rng.integers(d_y, 5))
            widths = (w,) * depth
            bias_unit = bool(rng.integers(0, 2))
            cfg = StackConfig(depth, widths, _SMOOTH[p % 2], use_skip=skip,
                              append_bias_unit=bias_unit, d_z=None if depth else w + bias_unit)
            params = init_params(d_x, d_y, cfg, rng)
            m = int(rng.integers(1, 7))
            X = rng.standard_normal((m, d_x))
            data = DataSet(X, _targets(kind, rng, m, d_y))
            x = X[0]
            Jw = _fd_jac(lambda v: predict(x, ResNetParams(v.reshape(d_y, d_x, order="F"), params.V, params.theta), cfg),
                         params.W.reshape(-1, order="F"))
            Jv = _fd_jac(lambda v: predict(x, ResNetParams(params.W, v.reshape(d_x, -1, order="F"), params.theta), cfg),
                         params.V.reshape(-1, order="F"))
            worst["dW"] = max(worst["dW"], _rel(dh_dW(x, params, cfg), Jw))
            if np.linalg.norm(Jv) > 1e-12:
                worst["dV"] = max(worst["dV"], _rel(dh_dV(x, params, cfg), Jv))
            layout = ParamLayout(d_x, d_y, cfg)
            flat = layout.pack(params)
            Y = validate_targets(kind, data.Y)

            def loss(v):
                H = predict_batch(X, layout.unpack(v), cfg)
                return float(np.mean(batch_loss(kind, H, Y)[0]))

            g = layout.pack(grad_loss_params(data, params, cfg, kind))
            fd = _fd_jac(loss, flat)[0]
            if max(np.linalg.norm(g), np.linalg.norm(fd)) > 1e-8:
                worst["grad"] = max(worst["grad"], _rel(g, fd))
    ok = all(v <= 1e-5 for v in worst.values())
    detail = (f"{points} points x {len(LossKind)} kinds, max rel error dh/dW {worst['dW']:.1e}, "
              f"dh/dV {worst['dV']:.1e}, full gradient {worst['grad']:.1e} (<=1e-5)")
    return ok, detail, worst


# ---------------------------------------------------------------------------
# 4. everywhere lower bound
# ---------------------------------------------------------------------------

def _architectures(rng, count):
    archs = []
    acts = ("relu", "tanh", "sigmoid", "identity")
    for i in range(count):
        d_x = int(rng.integers(1, 7))
        d_y = int(rng.integers(1, d_x + 1))
        depth = int(rng.integers(0, 5))
        skip = depth > 0 and bool(rng.integers(0, 2))
        if skip:
            widths = (int(rng.integers(d_y, 8)),) * depth
        else:
            widths = tuple(int(rng.integers(1, 8)) for _ in range(depth))
            if depth:
                widths = widths[:-1] + (max(widths[-1], d_y),)
        bias_unit = bool(rng.integers(0, 2))
        cfg = StackConfig(depth, widths, acts[i % 4], use_skip=skip, append_bias_unit=bias_unit,
                          d_z=None if depth else int(rng.integers(d_y, 8)) + bias_unit)
        archs.append((d_x, d_y, cfg))
    return archs


def check_lower_bound(draws=1000, n_arch=25, seed=4):
    rng = make_rng(seed)
    archs = _architectures(rng, n_arch)
    worst = np.inf
    for k in range(draws):
        d_x, d_y, cfg = archs[k % n_arch]
        m = int(rng.integers(1, 41))
        X = rng.standard_normal((m, d_x))
        Y = rng.standard_normal((m, d_y))
        params = init_params(d_x, d_y, cfg, rng)
        scale = float(np.exp(rng.uniform(-2, 2)))  # also far from the init scale
        params = ResNetParams(scale * params.W, scale * params.V, tuple(scale * t for t in params.theta))
        L = empirical_objective(DataSet(X, Y), params, cfg, LossKind.SQUARED)
        Lxz = sq_oracle_xz(X, residual_batch(X, params.theta, cfg), Y).l_star_xz
        worst = min(worst, L - Lxz)
    ok = worst >= -1e-9
    return ok, f"{draws} draws over {n_arch} architectures, min L - L*_xz = {worst:.2e} (>= -1e-9)", {"min_gap": worst}


# ---------------------------------------------------------------------------
# 5./6. equality at certified local minima
# ---------------------------------------------------------------------------

# (groups, replicas, d_x, d_y, widths, use_skip); m = groups * replicas <= 64
EQUALITY_ARCHS = (
    (12, 3, 3, 2, (6, 6), False),
    (10, 4, 4, 1, (5, 5, 5), False),
    (8, 4, 3, 3, (8, 8), True),
    (16, 3, 4, 2, (8, 8), False),
    (12, 4, 3, 2, (6, 6, 6, 6), True),
    (8, 3, 2, 1, (6,), False),
    (10, 5, 5, 3, (8, 8, 8), False),
    (14, 4, 4, 2, (10,), False),
    (6, 4, 3, 3, (6, 6, 6), True),
    (16, 4, 3, 1, (7, 7), True),
)


def equality_configs(kind):
    """The 20 (architecture x activation) cells of the equality protocol for ``kind``."""
    kind = LossKind.parse(kind)
    cells = []
    for i, (groups, replicas, d_x, d_y, widths, skip) in enumerate(EQUALITY_ARCHS):
        if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
            d_y = max(d_y, 2)  # one class makes the loss identically zero
        for act in ("relu", "tanh"):
            cells.append((i, groups, replicas, d_x, d_y, StackConfig(len(widths), widths, act, use_skip=skip)))
    return cells


def _equality_protocol(kind, rel_tol, restarts=5, seed=5, grad_tol=1e-6, max_iter=20_000):
    kind = LossKind.parse(kind)
    runs = []
    for c, (i, groups, replicas, d_x, d_y, cfg) in enumerate(equality_configs(kind)):
        teacher = StackConfig(1, (d_x,), "tanh")
        data = replicated_dataset(groups, replicas, d_x, d_y, teacher, kind, make_rng(seed * 1000 + i), noise=0.5)
        y_norm = fro_norm(data.Y)
        for r in range(restarts):
            _, rep = train(data, cfg, kind, seed=seed * 100_000 + 100 * c + r, grad_tol=grad_tol, max_iter=max_iter)
            certified = rep.certification is Verdict.CERTIFIED
            gap_ok = abs(rep.oracle_gap) <= rel_tol * max(1.0, rep.l_star_x)
            lemma_ok = max(rep.lemma2_z_residual, rep.lemma2_x_residual) <= 1e-5 * (1.0 + y_norm)
            runs.append(dict(cell=c, restart=r, certified=certified, gap=rep.oracle_gap, l_star_x=rep.l_star_x,
                             gap_ok=gap_ok, lemma_ok=lemma_ok, verdict=rep.certification.value,
                             lemma=max(rep.lemma2_z_residual, rep.lemma2_x_residual), bound=1e-5 * (1.0 + y_norm)))
    cert = [r for r in runs if r["certified"]]
    violations = [r for r in cert if not (r["gap_ok"] and r["lemma_ok"])]
    frac = len(cert) / len(runs)
    ok = frac >= 0.5 and not violations
    max_gap = max((abs(r["gap"]) / max(1.0, r["l_star_x"]) for r in cert), default=float("nan"))
    max_lemma = max((r["lemma"] / r["bound"] for r in cert), default=float("nan"))
    uncertified = len(runs) - len(cert)
    detail = (f"{len(runs)} runs, {len(cert)} certified ({frac:.0%}, need >= 50%), {uncertified} uncertified reported; "
              f"max |gap|/max(1,L*_x) {max_gap:.1e} (<= {rel_tol:g}), max stationarity residual / bound {max_lemma:.2f} (<= 1); "
              f"violations {len(violations)}")
    return ok, detail, {"runs": runs, "certified_fraction": frac, "violations": violations}


def check_equality_squared():
    return _equality_protocol(LossKind.SQUARED, 1e-4)


def check_equality_softmax():
    return _equality_protocol(LossKind.SOFTMAX_CROSS_ENTROPY, 1e-3)


# ---------------------------------------------------------------------------
# 7. counterexample separation
# ---------------------------------------------------------------------------

def _certify_dead_point(data, pt, hidden, seed):
    flat = np.concatenate([pt.W1.reshape(-1, order="F"), pt.W2.reshape(-1, order="F")])
    cert = CertificationConfig(n_directions=64, radii=(0.1 * pt.safe_radius,), hessian_check=False)
    return certify_point(plain_net_objective(data, hidden), flat, cert, make_rng(seed, 2))


def check_counterexample(n=10, seed=7):
    rng = make_rng(seed)
    hand = DataSet(np.array([[1.0]]), np.array([[1.0]]))
    pt = build_dead_relu_counterexample(hand, 0.5, seed, d_hidden=1)
    hand_ok = abs(pt.separation - 1.0) <= 1e-12 and _certify_dead_point(hand, pt, 1, seed).certified
    seps = []
    all_cert = True
    tries = 0
    while len(seps) < n and tries < 10 * n:
        tries += 1
        m = int(rng.integers(3, 30))
        d_x = int(rng.integers(1, 5))
        d_y = int(rng.integers(1, 4))
        X = rng.standard_normal((m, d_x))
        X[:, 0] = np.abs(X[:, 0]) + 0.1  # inputs in an open half-space
        data = DataSet(X, rng.standard_normal((m, d_y)))
        try:
            pt = build_dead_relu_counterexample(data, float(rng.uniform(0.1, 2.0)), seed + tries)
        except ConstructionInfeasibleError:
            continue
        seps.append(pt.separation)
        all_cert &= _certify_dead_point(data, pt, data.d_x, seed + tries).certified
    ok = hand_ok and len(seps) >= n and min(seps) > 0 and all_cert
    detail = (f"hand instance separation {'1.0' if hand_ok else 'WRONG'}; {len(seps)} random datasets, "
              f"min separation {min(seps) if seps else float('nan'):.3g} (> 0), all certified at 0.1*c/max|x|: {all_cert}")
    return ok, detail, {"separations": seps}


# ---------------------------------------------------------------------------
# 8. linear-activation nullity
# ---------------------------------------------------------------------------

def check_linear_nullity(n=100, seed=8):
    rng = make_rng(seed)
    worst_identity = 0.0
    min_nonlinear = np.inf
    positive = 0
    for _ in range(n):
        d_x = int(rng.integers(1, 6))
        m = int(rng.integers(d_x + 1, 33))
        depth = int(rng.integers(1, 4))
        skip = bool(rng.integers(0, 2))
        w = int(rng.integers(1, 7))
        widths = (w,) * depth if skip else tuple(int(rng.integers(1, 7)) for _ in range(depth))
        X = rng.standard_normal((m, d_x))
        Y = rng.standard_normal((m, int(rng.integers(1, 3))))
        y2 = fro_norm(Y) ** 2
        init_seed = int(rng.integers(2**32))
        for act in ("identity", "relu", "tanh"):
            cfg = StackConfig(depth, widths, act, use_skip=skip)
            theta = init_params(d_x, 1, cfg, make_rng(init_seed)).theta
            imp = sq_oracle_xz(X, residual_batch(X, theta, cfg), Y).improvement
            if act == "identity":
                worst_identity = max(worst_identity, imp / y2)
            else:
                min_nonlinear = min(min_nonlinear, imp)
                positive += imp > 1e-8 * y2
    ok = worst_identity < 1e-9 and min_nonlinear >= 0 and positive >= 1
    detail = (f"{n} configs: max identity improvement/|Y|^2 {worst_identity:.1e} (<1e-9); nonlinear min improvement "
              f"{min_nonlinear:.2e} (>=0), strictly positive in {positive}/{2 * n}")
    return ok, detail, {"identity": worst_identity, "positive": positive}


# ---------------------------------------------------------------------------
# 9. null-space invariance
# ---------------------------------------------------------------------------

def check_null_space(n=100, seed=9):
    rng = make_rng(seed)
    worst = 0.0
    for k in range(n):
        d_y = int(rng.integers(2, 5))
        d_x = int(rng.integers(d_y, 7))
        w = int(rng.integers(d_y, 6))
        cfg = StackConfig(2, (w, w), ("relu", "tanh")[k % 2], use_skip=bool(k % 3 == 0))
        params = init_params(d_x, d_y, cfg, rng)
        r = int(rng.integers(0, d_y))
        W = rng.standard_normal((d_y, r)) @ rng.standard_normal((r, d_x)) if r else np.zeros((d_y, d_x))
        params = ResNetParams(W, params.V, params.theta)
        m = int(rng.integers(1, 30))
        data = DataSet(rng.standard_normal((m, d_x)), rng.standard_normal((m, d_y)))
        L = empirical_objective(data, params, cfg, LossKind.SQUARED)
        dev = null_space_perturb_check(data, params, cfg, LossKind.SQUARED, trials=10, seed=k)
        worst = max(worst, dev / (1.0 + abs(L)))
    ok = worst <= 1e-12
    return ok, f"{n} rank-deficient draws, max |dL|/(1+|L|) {worst:.1e} (<= 1e-12)", {"worst": worst}


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------

DETERMINISM_CONFIG = """\
seed = 20240611
loss = squared
data.source = replicated
data.groups = 8
data.replicas = 3
data.d_x = 3
data.d_y = 2
data.noise = 0.5
model.depth = 2
model.widths = 5, 5
model.activation = tanh
train.restarts = 3
"""


def check_determinism():
    from .cli import cmd_train_verify
    from .config import load_config

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "exp.cfg")
        with open(path, "w") as fh:
            fh.write(DETERMINISM_CONFIG)
        blobs = []
        for run in ("a", "b"):
            out = os.path.join(tmp, run)
            cmd_train_verify(load_config(path), out)
            files = {}
            for root, _, names in os.walk(out):
                for name in names:
                    if name == "timing.csv":
                        continue
                    full = os.path.join(root, name)
                    with open(full, "rb") as fh:
                        files[os.path.relpath(full, out)] = fh.read()
            blobs.append(files)
    same = blobs[0] == blobs[1] and "runs.csv" in blobs[0]
    return same, f"two runs produced {len(blobs[0])} result files, byte-identical: {same}", {}


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

CHECKS = (
    (1, "projection algebra", check_projection_algebra, 10.0),
    (2, "oracle equivalence", check_oracle_equivalence, 60.0),
    (3, "derivative checks", check_gradients, 60.0),
    (4, "everywhere lower bound", check_lower_bound, 120.0),
    (5, "equality at minima, squared loss", check_equality_squared, 600.0),
    (6, "equality at minima, softmax cross-entropy", check_equality_softmax, 600.0),
    (7, "dead-ReLU counterexample", check_counterexample, 60.0),
    (8, "linear-activation nullity", check_linear_nullity, 60.0),
    (9, "null-space invariance", check_null_space, 10.0),
    (10, "determinism", check_determinism, float("inf")),
)


def run_check(number):
    for num, name, fn, budget in CHECKS:
        if num == number:
            t0 = time.perf_counter()
            ok, detail, metrics = fn()
            elapsed = time.perf_counter() - t0
            within = elapsed < budget
            if not within:
                detail += f"; over the {budget:.0f}s budget"
            return CheckResult(num, name, bool(ok and within), elapsed, budget, detail, metrics)
    raise KeyError(f"no criterion {number}")


def run_checks(only=None, stream="stdout"):
    """Run the selected criteria, printing each result line to ``stream`` (``None`` for silence)."""
    if stream == "stdout":
        stream = sys.stdout
    results = []
    for num, _, _, _ in CHECKS:
        if only and num not in only:
            continue
        res = run_check(num)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
        results.append(res)
    return results
