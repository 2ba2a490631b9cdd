import os
import subprocess
import sys

import numpy as np
import pytest

from resnet_landscape.kernels import HAVE_NUMBA, LinearObjective, ResNetObjective, backend_name, jit_enabled
from resnet_landscape.losses import LossKind
from resnet_landscape.model import DataSet, ParamLayout, StackConfig, init_params
from resnet_landscape.optim import armijo_descent

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not importable")

STACKS = [
    StackConfig(0, d_z=2),
    StackConfig(1, (3,), "relu"),
    StackConfig(2, (4, 3), "tanh", append_bias_unit=True),
    StackConfig(3, (3, 3, 3), "sigmoid", use_skip=True),
    StackConfig(2, (2, 2), "identity", use_skip=True, append_bias_unit=True),
]


def _targets(kind, rng, m, d_y):
    if kind is LossKind.SQUARED:
        return rng.standard_normal((m, d_y))
    if kind is LossKind.LOGISTIC_BINARY:
        return rng.integers(0, 2, (m, 1)).astype(float)
    if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        return np.eye(d_y)[rng.integers(0, d_y, m)]
    return rng.choice([-1.0, 1.0], (m, d_y))


@needs_numba
@pytest.mark.parametrize("kind", list(LossKind))
@pytest.mark.parametrize("cfg", STACKS, ids=lambda c: f"d{c.depth}{c.activation.value}{'s' if c.use_skip else ''}")
def test_resnet_backends_agree(rng, kind, cfg):
    d_y = 1 if kind is LossKind.LOGISTIC_BINARY else 2
    data = DataSet(rng.standard_normal((7, 3)), _targets(kind, rng, 7, d_y))
    layout = ParamLayout(3, d_y, cfg)
    flat = layout.pack(init_params(3, d_y, cfg, rng))
    fast = ResNetObjective(data, layout, kind, use_jit=True)
    ref = ResNetObjective(data, layout, kind, use_jit=False)
    f1, g1 = fast.value_grad(flat)
    f2, g2 = ref.value_grad(flat)
    assert f1 == pytest.approx(f2, rel=1e-13, abs=1e-15)
    np.testing.assert_allclose(g1, g2, rtol=1e-11, atol=1e-14)
    assert fast.value(flat) == pytest.approx(f2, rel=1e-13, abs=1e-15)


@needs_numba
@pytest.mark.parametrize("kind", list(LossKind))
def test_linear_backends_agree(rng, kind):
    d_y = 1 if kind is LossKind.LOGISTIC_BINARY else 3
    Phi = rng.standard_normal((9, 4))
    Y = _targets(kind, rng, 9, d_y)
    r = rng.standard_normal(4 * d_y)
    f1, g1 = LinearObjective(Phi, Y, kind, use_jit=True).value_grad(r)
    f2, g2 = LinearObjective(Phi, Y, kind, use_jit=False).value_grad(r)
    assert f1 == pytest.approx(f2, rel=1e-13)
    np.testing.assert_allclose(g1, g2, rtol=1e-11, atol=1e-14)


@needs_numba
@pytest.mark.parametrize("method", ["gd", "lbfgs"])
def test_compiled_descent_tracks_python_loop(rng, method):
    cfg = StackConfig(1, (3,), "tanh")
    data = DataSet(rng.standard_normal((10, 3)), rng.standard_normal((10, 2)))
    layout = ParamLayout(3, 2, cfg)
    x0 = layout.pack(init_params(3, 2, cfg, rng))
    runs = []
    for use_jit in (True, False):
        trace = []
        out = armijo_descent(
            ResNetObjective(data, layout, "squared", use_jit=use_jit), x0, 1e-12, 25,
            method=method, on_step=lambda i, f, g: trace.append(f),
        )
        runs.append((out, trace))
    (x1, f1, _, it1, s1), t1 = runs[0]
    (x2, f2, _, it2, s2), t2 = runs[1]
    assert (it1, s1) == (it2, s2) == (25, "max_iter")
    # same iterates up to rounding differences between the two backends
    np.testing.assert_allclose(t1, t2, rtol=1e-8)
    np.testing.assert_allclose(x1, x2, rtol=1e-6, atol=1e-8)


@needs_numba
def test_compiled_linear_descent_matches_closed_form(rng):
    Phi = rng.standard_normal((30, 4))
    Y = rng.standard_normal((30, 2))
    x, f, g, it, status = armijo_descent(LinearObjective(Phi, Y, "squared", use_jit=True), np.zeros(8), 1e-9, 10_000, method="lbfgs")
    R = np.linalg.lstsq(Phi, Y, rcond=None)[0].T
    assert status == "converged"
    np.testing.assert_allclose(x, R.ravel(order="F"), atol=1e-8)


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv("RESNET_LANDSCAPE_DISABLE_JIT", "1")
    assert not jit_enabled()
    assert backend_name() == "numpy"
    assert not LinearObjective(np.eye(2), np.eye(2), "squared").use_jit
    monkeypatch.setenv("RESNET_LANDSCAPE_DISABLE_JIT", "0")
    assert jit_enabled() == HAVE_NUMBA


def test_numpy_fallback_end_to_end():
    # fresh interpreter so nothing compiled is reused
    code = (
        "import numpy as np\n"
        "from resnet_landscape.kernels import backend_name\n"
        "from resnet_landscape.lab import train\n"
        "from resnet_landscape.model import DataSet, StackConfig\n"
        "from resnet_landscape.oracle import convex_oracle_xz, sq_oracle_x\n"
        "r = np.random.default_rng(0)\n"
        "X = r.standard_normal((12, 3)); Y = r.standard_normal((12, 2))\n"
        "_, rep = train(DataSet(X, Y), StackConfig(0, d_z=2), 'squared', seed=1)\n"
        "assert backend_name() == 'numpy'\n"
        "assert abs(rep.final_loss - sq_oracle_x(X, Y)) <= 1e-6, rep\n"
        "fit = convex_oracle_xz(DataSet(X, Y), None, 'squared')\n"
        "assert abs(fit.objective - sq_oracle_x(X, Y)) <= 1e-6\n"
        "print('ok')\n"
    )
    env = dict(os.environ, RESNET_LANDSCAPE_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=300)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "ok"
