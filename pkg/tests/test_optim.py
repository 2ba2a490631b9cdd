import numpy as np
import pytest

from resnet_landscape.errors import InvalidInputError, NumericalError
from resnet_landscape.optim import ARMIJO_SHRINK, ARMIJO_SLOPE, armijo_descent


class Quadratic:
    def __init__(self, A, b):
        self.A, self.b = A, b

    def value(self, x):
        return float(0.5 * x @ self.A @ x - self.b @ x)

    def value_grad(self, x):
        return self.value(x), self.A @ x - self.b


class Rosenbrock:
    def value(self, x):
        return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    def value_grad(self, x):
        g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        return self.value(x), g


def test_constants():
    assert ARMIJO_SHRINK == 0.5
    assert ARMIJO_SLOPE == 1e-4


@pytest.mark.parametrize("method", ["gd", "lbfgs"])
def test_quadratic_minimiser(rng, method):
    M = rng.standard_normal((5, 5))
    A = M @ M.T + np.eye(5)
    b = rng.standard_normal(5)
    # 1e-7 sits above the rounding floor of an O(1) objective
    x, f, g, it, status = armijo_descent(Quadratic(A, b), np.zeros(5), 1e-7, 100_000, method=method)
    assert status == "converged" and g <= 1e-7
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-7)


@pytest.mark.parametrize("method", ["gd", "lbfgs"])
def test_trace_is_monotone(method):
    fs = []
    armijo_descent(Rosenbrock(), np.array([-1.2, 1.0]), 1e-8, 5000, method=method, on_step=lambda i, f, g: fs.append(f))
    assert all(b <= a for a, b in zip(fs, fs[1:]))


def test_lbfgs_beats_gd_on_rosenbrock():
    x0 = np.array([-1.2, 1.0])
    *_, it_l, st_l = armijo_descent(Rosenbrock(), x0, 1e-8, 50_000, method="lbfgs")
    *_, it_g, _ = armijo_descent(Rosenbrock(), x0, 1e-8, 50_000, method="gd")
    assert st_l == "converged"
    assert it_l < it_g


def test_zero_iterations_at_stationary_point():
    A = np.eye(3)
    b = np.array([1.0, 2.0, 3.0])
    calls = []
    x, f, g, it, status = armijo_descent(Quadratic(A, b), b.copy(), 1e-12, 10, on_step=lambda *a: calls.append(a))
    assert (it, status, g) == (0, "converged", 0.0)
    assert calls == [(0, f, 0.0)]


def test_max_iter_status():
    *_, it, status = armijo_descent(Rosenbrock(), np.array([-1.2, 1.0]), 1e-12, 3)
    assert (it, status) == (3, "max_iter")


def test_stalls_at_rounding_floor():
    # |x|^4 scaled so the loss underflows its rounding long before the gradient is small
    class Quartic:
        def value(self, x):
            return float(1.0 + np.sum(x**4))

        def value_grad(self, x):
            return self.value(x), 4 * x**3

    *_, status = armijo_descent(Quartic(), np.array([1e-2]), 1e-30, 10**6)
    assert status == "stalled"


def test_invalid_method_and_non_finite_start():
    q = Quadratic(np.eye(1), np.zeros(1))
    with pytest.raises(InvalidInputError):
        armijo_descent(q, np.ones(1), 1e-6, 10, method="newton")

    class Bad:
        def value(self, x):
            return np.nan

        def value_grad(self, x):
            return np.nan, np.zeros_like(x)

    with pytest.raises(NumericalError):
        armijo_descent(Bad(), np.ones(2), 1e-6, 10)
