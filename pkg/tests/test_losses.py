import numpy as np
import pytest
from hypothesis import given, strategies as st

from resnet_landscape.errors import InvalidInputError, ShapeError
from resnet_landscape.losses import (
    LossKind,
    batch_loss,
    convexity_probe,
    empirical_objective,
    loss_eval,
    validate_targets,
)
from resnet_landscape.model import DataSet, ResNetParams, StackConfig


def _target(kind, rng, d_y):
    if kind is LossKind.SQUARED:
        return rng.standard_normal(d_y)
    if kind is LossKind.LOGISTIC_BINARY:
        return np.array([float(rng.integers(0, 2))])
    if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        return np.eye(d_y)[rng.integers(0, d_y)]
    return rng.choice([-1.0, 1.0], d_y)


def _dim(kind):
    return 1 if kind is LossKind.LOGISTIC_BINARY else 3


def test_squared_examples():
    e = loss_eval("squared", [1.0, -2.0], [1.0, -2.0])
    assert e.value == 0.0
    np.testing.assert_array_equal(e.D, [[0.0, 0.0]])
    e = loss_eval("squared", [1.0, 0.0], [0.0, 0.0])
    assert e.value == 1.0
    np.testing.assert_array_equal(e.D, [[2.0, 0.0]])


def test_closed_form_values():
    # logistic: softplus(h) - y h; softmax: logsumexp - <y, h>; hinge piecewise
    assert loss_eval("logistic_binary", [0.0], [1.0]).value == pytest.approx(np.log(2.0))
    assert loss_eval("softmax_cross_entropy", [0.0, 0.0], [1.0, 0.0]).value == pytest.approx(np.log(2.0))
    assert loss_eval("smoothed_hinge", [0.5], [1.0]).value == pytest.approx(0.125)
    assert loss_eval("smoothed_hinge", [-1.0], [1.0]).value == pytest.approx(1.5)
    assert loss_eval("smoothed_hinge", [2.0], [1.0]).value == 0.0


def test_logistic_is_stable_for_large_margins():
    e = loss_eval("logistic_binary", [800.0], [0.0])
    assert e.value == pytest.approx(800.0)
    np.testing.assert_allclose(e.D, [[1.0]])


def test_invalid_targets():
    with pytest.raises(InvalidInputError):
        validate_targets("logistic_binary", [[0.5]])
    with pytest.raises(InvalidInputError):
        validate_targets("softmax_cross_entropy", [[1.0, 1.0]])
    with pytest.raises(InvalidInputError):
        validate_targets("smoothed_hinge", [[0.0]])
    with pytest.raises(InvalidInputError):
        LossKind.parse("cubic")
    with pytest.raises(ShapeError):
        loss_eval("squared", [1.0, 2.0], [1.0])


@pytest.mark.parametrize("kind", list(LossKind))
def test_gradient_matches_fd(rng, kind):
    d_y = _dim(kind)
    for _ in range(20):
        y = _target(kind, rng, d_y)
        h = 2.0 * rng.standard_normal(d_y)
        D = loss_eval(kind, h, y).D[0]
        fd = np.empty(d_y)
        for j in range(d_y):
            e = np.zeros(d_y)
            e[j] = 1e-6
            fd[j] = (loss_eval(kind, h + e, y).value - loss_eval(kind, h - e, y).value) / 2e-6
        np.testing.assert_allclose(D, fd, rtol=1e-6, atol=1e-8)


def test_empirical_objective_hand_instance():
    cfg = StackConfig(0, d_z=1)
    data = DataSet([[1.0], [0.0]], [[0.0], [1.0]])
    params = ResNetParams([[0.0]], [[0.0]], ())
    assert empirical_objective(data, params, cfg, "squared") == 0.5


def test_empirical_objective_single_example_matches_loss():
    cfg = StackConfig(0, d_z=1)
    params = ResNetParams([[0.3]], [[0.0]], ())
    data = DataSet([[2.0]], [[1.0]])
    assert empirical_objective(data, params, cfg, "logistic_binary") == loss_eval("logistic_binary", [0.6], [1.0]).value


@pytest.mark.parametrize("kind", list(LossKind))
def test_convexity_probe_edges(rng, kind):
    d_y = _dim(kind)
    y = _target(kind, rng, d_y)
    h1, h2 = rng.standard_normal(d_y), rng.standard_normal(d_y)
    assert convexity_probe(kind, y, h1, h2, 0.0) == 0.0
    assert convexity_probe(kind, y, h1, h2, 1.0) == 0.0
    assert convexity_probe(kind, y, h1, h1, 0.3) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("kind", list(LossKind))
def test_convexity_probe_random(rng, kind):
    d_y = _dim(kind)
    worst = max(
        convexity_probe(kind, _target(kind, rng, d_y), 3 * rng.standard_normal(d_y), 3 * rng.standard_normal(d_y), rng.uniform())
        for _ in range(1000)
    )
    assert worst <= 1e-10


@given(st.sampled_from(list(LossKind)), st.integers(0, 2**31 - 1))
def test_batch_matches_single(kind, seed):
    r = np.random.default_rng(seed)
    d_y = _dim(kind)
    Y = np.array([_target(kind, r, d_y) for _ in range(4)])
    H = r.standard_normal((4, d_y))
    values, D = batch_loss(kind, H, Y)
    for i in range(4):
        e = loss_eval(kind, H[i], Y[i])
        assert values[i] == pytest.approx(e.value, rel=1e-14, abs=1e-15)
        np.testing.assert_allclose(D[i], e.D[0], atol=1e-15)
    assert np.all(values >= 0.0)
