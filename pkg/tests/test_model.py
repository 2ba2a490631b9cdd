import numpy as np
import pytest
from hypothesis import given, strategies as st

from resnet_landscape.errors import ConfigurationError, InvalidStateError, NumericalError, ShapeError
from resnet_landscape.losses import LossKind, empirical_objective
from resnet_landscape.model import (
    DataSet,
    ParamLayout,
    ResNetParams,
    StackConfig,
    augment_bias,
    check_output_dim_assumption,
    dh_dV,
    dh_dW,
    grad_loss_params,
    init_params,
    loss_and_grad,
    plain_relu_net_predict,
    predict,
    predict_batch,
    residual_batch,
    residual_forward,
    strip_bias,
)
from resnet_landscape.projkit import vec


def _fd_jacobian(fun, x0, h=1e-6):
    cols = []
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        cols.append((fun(x0 + e) - fun(x0 - e)) / (2 * h))
    return np.column_stack(cols)


def test_depth0_residual_is_zero():
    cfg = StackConfig(0, d_z=3)
    np.testing.assert_array_equal(residual_forward([1.0, 2.0], (), cfg), np.zeros(3))


def test_identity_layer_residual():
    A = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    cfg = StackConfig(1, (3,), "identity")
    np.testing.assert_allclose(residual_forward([2.0, 1.0], (A,), cfg), A @ [2.0, 1.0])


def test_relu_layer_residual():
    cfg = StackConfig(1, (2,), "relu")
    np.testing.assert_array_equal(residual_forward([-1.0, 2.0], (np.eye(2),), cfg), [0.0, 2.0])


def test_bias_unit_appended():
    cfg = StackConfig(1, (2,), "identity", append_bias_unit=True)
    np.testing.assert_array_equal(residual_forward([1.0, 2.0], (np.eye(2),), cfg), [1.0, 2.0, 1.0])


def test_predict_hand_examples():
    cfg0 = StackConfig(0, d_z=1)
    p0 = ResNetParams([[2.0]], [[7.0]], ())
    np.testing.assert_allclose(predict([5.0], p0, cfg0), [10.0])
    cfg1 = StackConfig(1, (1,), "identity")
    p1 = ResNetParams([[1.0]], [[1.0]], (np.array([[1.0]]),))
    np.testing.assert_allclose(predict([3.0], p1, cfg1), [6.0])


def test_zero_v_gives_linear_model(rng):
    cfg = StackConfig(2, (4, 4), "tanh")
    p = init_params(3, 2, cfg, rng)
    p = ResNetParams(p.W, np.zeros_like(p.V), p.theta)
    X = rng.standard_normal((5, 3))
    np.testing.assert_allclose(predict_batch(X, p, cfg), X @ p.W.T, atol=1e-15)


def test_skip_stack_forward_matches_hand_loop(rng):
    cfg = StackConfig(2, (3, 3), "relu", use_skip=True)
    p = init_params(2, 1, cfg, rng)
    x = rng.standard_normal(2)
    A0, A1, A2 = p.theta
    u = A0 @ x
    u = u + A1 @ np.maximum(u, 0.0)
    u = u + A2 @ np.maximum(u, 0.0)
    np.testing.assert_allclose(residual_forward(x, p.theta, cfg), u, atol=1e-14)


def test_stack_config_errors():
    with pytest.raises(ConfigurationError):
        StackConfig(2, (3,))
    with pytest.raises(ConfigurationError):
        StackConfig(0)
    with pytest.raises(ConfigurationError):
        StackConfig(2, (3, 4), use_skip=True)
    with pytest.raises(ConfigurationError):
        StackConfig(1, (3,), activation="softsign")


def test_shape_errors(rng):
    cfg = StackConfig(1, (3,), "relu")
    p = init_params(2, 1, cfg, rng)
    with pytest.raises(ShapeError):
        predict([1.0, 2.0, 3.0], p, cfg)
    with pytest.raises(ShapeError):
        ResNetParams(np.ones((1, 2)), np.ones((3, 3)), ())
    with pytest.raises(ShapeError):
        DataSet(np.ones((3, 2)), np.ones((2, 1)))


def test_output_dim_gate():
    check_output_dim_assumption(3, 2, 2)
    with pytest.raises(ConfigurationError, match="A1"):
        check_output_dim_assumption(3, 3, 2)


def test_dh_dw_zero_residual_and_fd(rng):
    cfg = StackConfig(2, (4, 3), "tanh")
    p = init_params(3, 2, cfg, rng)
    x = rng.standard_normal(3)
    J = dh_dW(x, p, cfg)
    fd = _fd_jacobian(lambda w: predict(x, ResNetParams(w.reshape(2, 3, order="F"), p.V, p.theta), cfg), vec(p.W).ravel())
    np.testing.assert_allclose(J, fd, atol=1e-8)


def test_dh_dv_depth0_is_zero(rng):
    cfg = StackConfig(0, d_z=2)
    p = init_params(3, 2, cfg, rng)
    np.testing.assert_array_equal(dh_dV(rng.standard_normal(3), p, cfg), np.zeros((2, 6)))


def test_dh_dv_fd(rng):
    cfg = StackConfig(1, (4,), "tanh")
    p = init_params(3, 2, cfg, rng)
    x = rng.standard_normal(3)
    J = dh_dV(x, p, cfg)
    fd = _fd_jacobian(lambda v: predict(x, ResNetParams(p.W, v.reshape(3, 4, order="F"), p.theta), cfg), vec(p.V).ravel())
    np.testing.assert_allclose(J, fd, atol=1e-8)


@pytest.mark.parametrize("kind", list(LossKind))
@pytest.mark.parametrize("skip", [False, True])
def test_full_gradient_matches_fd(rng, kind, skip):
    cfg = StackConfig(2, (3, 3), "tanh", use_skip=skip)
    m, d_x, d_y = 6, 3, 1 if kind is LossKind.LOGISTIC_BINARY else 2
    X = rng.standard_normal((m, d_x))
    Y = {
        LossKind.SQUARED: rng.standard_normal((m, d_y)),
        LossKind.LOGISTIC_BINARY: rng.integers(0, 2, (m, 1)).astype(float),
        LossKind.SOFTMAX_CROSS_ENTROPY: np.eye(d_y)[rng.integers(0, d_y, m)],
        LossKind.SMOOTHED_HINGE: rng.choice([-1.0, 1.0], (m, d_y)),
    }[kind]
    data = DataSet(X, Y)
    layout = ParamLayout(d_x, d_y, cfg)
    flat = layout.pack(init_params(d_x, d_y, cfg, rng))
    g = layout.pack(grad_loss_params(data, layout.unpack(flat), cfg, kind))
    fd = _fd_jacobian(lambda v: np.array([empirical_objective(data, layout.unpack(v), cfg, kind)]), flat)[0]
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_v_gradient_is_wt_d_z(rng):
    # dL/dV = (1/m) W^T D^T Z in the column-major layout
    cfg = StackConfig(1, (3,), "tanh")
    X = rng.standard_normal((5, 3))
    Y = rng.standard_normal((5, 2))
    data = DataSet(X, Y)
    p = init_params(3, 2, cfg, rng)
    Z = residual_batch(X, p.theta, cfg)
    D = 2.0 * (predict_batch(X, p, cfg) - Y)
    np.testing.assert_allclose(grad_loss_params(data, p, cfg, "squared").V, p.W.T @ D.T @ Z / 5, atol=1e-14)


def test_perfect_fit_has_zero_gradient(rng):
    cfg = StackConfig(1, (3,), "relu")
    p = init_params(3, 2, cfg, rng)
    X = rng.standard_normal((4, 3))
    data = DataSet(X, predict_batch(X, p, cfg))
    loss, g = loss_and_grad(data, p, cfg, "squared")
    assert loss == 0.0
    for M in (g.W, g.V, *g.theta):
        np.testing.assert_array_equal(M, 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises():
    cfg = StackConfig(0, d_z=1)
    p = ResNetParams([[1e200]], [[0.0]], ())
    with pytest.raises(NumericalError):
        loss_and_grad(DataSet([[1e200]], [[0.0]]), p, cfg, "squared")


def test_plain_relu_net_examples():
    assert plain_relu_net_predict([3.0, 1.0], [[1.0, -1.0]], [[2.0]]) == pytest.approx([4.0])
    np.testing.assert_array_equal(plain_relu_net_predict([1.0, 2.0], -np.eye(2), np.eye(2)), [0.0, 0.0])
    np.testing.assert_array_equal(plain_relu_net_predict([1.0, 2.0], np.eye(2), np.eye(2)), [1.0, 2.0])


def test_bias_augmentation_round_trip():
    d = DataSet([[2.0]], [[1.0]])
    a = augment_bias(d)
    np.testing.assert_array_equal(a.X, [[2.0, 1.0]])
    np.testing.assert_array_equal(strip_bias(a).X, d.X)
    with pytest.raises(InvalidStateError):
        augment_bias(a)
    with pytest.raises(InvalidStateError):
        strip_bias(d)


def test_layout_round_trip(rng):
    cfg = StackConfig(3, (2, 2, 2), "relu", use_skip=True, append_bias_unit=True)
    layout = ParamLayout(4, 2, cfg)
    p = init_params(4, 2, cfg, rng)
    q = layout.unpack(layout.pack(p))
    for a, b in zip((p.W, p.V, *p.theta), (q.W, q.V, *q.theta)):
        np.testing.assert_array_equal(a, b)
    assert layout.size == 2 * 4 + 4 * 3 + 2 * 4 + 3 * 4


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
def test_prediction_is_linear_in_w(seed, a):
    r = np.random.default_rng(seed)
    cfg = StackConfig(2, (3, 3), "tanh")
    p = init_params(3, 2, cfg, r)
    W2 = r.standard_normal(p.W.shape)
    X = r.standard_normal((4, 3))
    combo = predict_batch(X, ResNetParams(p.W + a * W2, p.V, p.theta), cfg)
    parts = predict_batch(X, p, cfg) + a * predict_batch(X, ResNetParams(W2, p.V, p.theta), cfg)
    np.testing.assert_allclose(combo, parts, atol=1e-10)


@given(st.integers(0, 2**31 - 1))
def test_null_space_direction_leaves_output_unchanged(seed):
    r = np.random.default_rng(seed)
    cfg = StackConfig(1, (3,), "relu")
    p = init_params(3, 2, cfg, r)
    W = np.outer(r.standard_normal(2), r.standard_normal(3))  # rank 1
    u = np.linalg.svd(W)[2][-1]
    v = r.standard_normal(3)
    X = r.standard_normal((5, 3))
    base = predict_batch(X, ResNetParams(W, p.V, p.theta), cfg)
    moved = predict_batch(X, ResNetParams(W, p.V + np.outer(u, v), p.theta), cfg)
    np.testing.assert_allclose(moved, base, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.booleans())
def test_identity_stack_stays_in_column_space_of_x(seed, skip):
    from resnet_landscape.projkit import null_projector

    r = np.random.default_rng(seed)
    cfg = StackConfig(2, (4, 4), "identity", use_skip=skip)
    X = r.standard_normal((12, 3))
    Z = residual_batch(X, init_params(3, 2, cfg, r).theta, cfg)
    assert np.linalg.norm(null_projector(X).matrix @ Z) < 1e-9 * np.linalg.norm(Z)
