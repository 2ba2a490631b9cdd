"""ResNet predictor ``h(x) = W (x + V z(x, theta))`` and its derivatives.

The residual stack ``z(x, theta)`` comes in two flavours selected by
``StackConfig.use_skip``:

* plain composition, ``a_0 = x``, ``a_l = act(A_l a_{l-1})``, ``z = a_H``;
  theta is ``[A_1, ..., A_H]`` with ``A_l`` of shape ``(w_l, w_{l-1})``;
* pre-activation residual blocks, ``z_0 = E x``,
  ``z_l = z_{l-1} + A_l act(z_{l-1})``, ``z = z_H``; theta is
  ``[E, A_1, ..., A_H]`` and all widths must be equal.

With ``append_bias_unit`` a constant 1 is appended to ``z``.  A depth-0
stack outputs zeros of length ``d_z``.

Every flattened parameter vector uses column-major ``vec`` blocks in the
order ``W, V, theta...``; Jacobians with respect to ``vec(W)`` and
``vec(V)`` use the same ordering.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidInputError, InvalidStateError, NumericalError, ShapeError
from .losses import batch_loss, validate_targets
from .projkit import as_matrix, kron

__all__ = [
    "Activation",
    "StackConfig",
    "ResNetParams",
    "DataSet",
    "ParamLayout",
    "init_params",
    "residual_forward",
    "residual_batch",
    "predict",
    "predict_batch",
    "dh_dW",
    "dh_dV",
    "loss_and_grad",
    "grad_loss_params",
    "plain_relu_net_predict",
    "augment_bias",
    "strip_bias",
    "check_output_dim_assumption",
]


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    @property
    def code(self):
        return ("relu", "tanh", "sigmoid", "identity").index(self.value)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigurationError(f"unknown activation {value!r}") from None


def activate(kind, U):
    """Return ``(act(U), act'(U))``; the ReLU derivative at 0 is 0."""
    if kind is Activation.RELU:
        return np.maximum(U, 0.0), (U > 0.0).astype(np.float64)
    if kind is Activation.TANH:
        T = np.tanh(U)
        return T, 1.0 - T * T
    if kind is Activation.SIGMOID:
        e = np.exp(-np.abs(U))
        S = np.where(U >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return S, S * (1.0 - S)
    return U.copy(), np.ones_like(U)


@dataclass(frozen=True)
class StackConfig:
    """Architecture of the residual function ``z(x, theta)``.

    ``d_z`` is only needed for depth-0 stacks, where it fixes the length of
    the zero output; for deeper stacks it is derived from ``widths``.
    """

    depth: int
    widths: tuple = ()
    activation: Activation = Activation.RELU
    use_skip: bool = False
    append_bias_unit: bool = False
    d_z: int = None

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activation", Activation.parse(self.activation))
        if self.depth < 0:
            raise ConfigurationError(f"depth must be >= 0, got {self.depth}")
        if len(self.widths) != self.depth:
            raise ConfigurationError(
                f"widths has {len(self.widths)} entries but depth is {self.depth}"
            )
        if any(w < 1 for w in self.widths):
            raise ConfigurationError(f"widths must be positive, got {self.widths}")
        if self.use_skip and len(set(self.widths)) > 1:
            raise ConfigurationError("residual blocks need equal widths")
        if self.depth == 0:
            if self.d_z is None or self.d_z < 1 + int(self.append_bias_unit):
                raise ConfigurationError(
                    "a depth-0 stack needs an explicit d_z >= 1 (>= 2 with a bias unit)"
                )
        elif self.d_z is not None and self.d_z != self.widths[-1] + int(self.append_bias_unit):
            raise ConfigurationError(
                f"d_z={self.d_z} disagrees with last width {self.widths[-1]}"
                + (" plus bias unit" if self.append_bias_unit else "")
            )

    @property
    def out_dim(self):
        """Length of ``z(x, theta)``, i.e. ``d_z``."""
        if self.depth == 0:
            return self.d_z
        return self.widths[-1] + int(self.append_bias_unit)

    @property
    def core_dim(self):
        return self.out_dim - int(self.append_bias_unit)

    def theta_shapes(self, d_x):
        if self.depth == 0:
            return []
        if self.use_skip:
            w = self.widths[0]
            return [(w, d_x)] + [(w, w)] * self.depth
        dims = (d_x,) + self.widths
        return [(dims[i + 1], dims[i]) for i in range(self.depth)]


@dataclass(frozen=True)
class ResNetParams:
    W: np.ndarray
    V: np.ndarray
    theta: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "W", as_matrix(self.W, "W"))
        object.__setattr__(self, "V", as_matrix(self.V, "V"))
        object.__setattr__(self, "theta", tuple(as_matrix(A, "theta") for A in self.theta))
        if self.W.shape[1] != self.V.shape[0]:
            raise ShapeError(f"W is {self.W.shape} but V is {self.V.shape}")

    @property
    def d_y(self):
        return self.W.shape[0]

    @property
    def d_x(self):
        return self.W.shape[1]

    @property
    def d_z(self):
        return self.V.shape[1]


@dataclass(frozen=True)
class DataSet:
    X: np.ndarray
    Y: np.ndarray
    bias_augmented: bool = False

    def __post_init__(self):
        X = as_matrix(self.X, "X")
        Y = as_matrix(self.Y, "Y")
        if X.shape[0] != Y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if self.bias_augmented and not np.all(X[:, -1] == 1.0):
            raise InvalidInputError("bias_augmented set but last column of X is not all ones")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def d_x(self):
        return self.X.shape[1]

    @property
    def d_y(self):
        return self.Y.shape[1]


def check_output_dim_assumption(d_x, d_y, d_z):
    """Reject configurations violating ``d_y <= min(d_x, d_z)``."""
    if d_y > min(d_x, d_z):
        raise ConfigurationError(
            f"Assumption A1 requires d_y <= min(d_x, d_z); got d_y={d_y}, d_x={d_x}, d_z={d_z}"
        )


class ParamLayout:
    """Packing of ``(W, V, theta)`` into one flat vector of column-major blocks."""

    def __init__(self, d_x, d_y, config):
        self.d_x = d_x
        self.d_y = d_y
        self.config = config
        self.shapes = [(d_y, d_x), (d_x, config.out_dim)] + config.theta_shapes(d_x)
        sizes = [r * c for r, c in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.size = int(self.offsets[-1])

    def pack(self, params):
        mats = [params.W, params.V, *params.theta]
        if [M.shape for M in mats] != self.shapes:
            raise ShapeError(f"parameter shapes {[M.shape for M in mats]} != layout {self.shapes}")
        return np.concatenate([M.reshape(-1, order="F") for M in mats])

    def unpack(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ShapeError(f"flat vector has shape {flat.shape}, expected ({self.size},)")
        mats = [
            flat[self.offsets[i]:self.offsets[i + 1]].reshape(shape, order="F")
            for i, shape in enumerate(self.shapes)
        ]
        return ResNetParams(mats[0], mats[1], tuple(mats[2:]))

    def blocks(self, flat):
        """Views of ``flat`` reshaped per parameter block (no validation, no copies)."""
        return [
            flat[self.offsets[i]:self.offsets[i + 1]].reshape(shape, order="F")
            for i, shape in enumerate(self.shapes)
        ]


def init_params(d_x, d_y, config, rng):
    """Gaussian initialisation with standard deviation ``sqrt(2 / fan_in)``."""
    shapes = [(d_y, d_x), (d_x, config.out_dim)] + config.theta_shapes(d_x)
    mats = [rng.standard_normal(s) * np.sqrt(2.0 / s[1]) for s in shapes]
    return ResNetParams(mats[0], mats[1], tuple(mats[2:]))


def _check_theta(theta, d_x, config):
    shapes = [A.shape for A in theta]
    expected = config.theta_shapes(d_x)
    if shapes != expected:
        raise ShapeError(f"theta shapes {shapes} do not match stack layout {expected}")


def _stack_forward(X, theta, config):
    """Batch forward pass; returns ``Z`` (m, d_z) and the cache for backprop."""
    m = X.shape[0]
    act = config.activation
    cache = []
    if config.depth == 0:
        core = np.zeros((m, config.core_dim))
    elif config.use_skip:
        core = X @ theta[0].T
        for A in theta[1:]:
            S, dS = activate(act, core)
            cache.append((S, dS))
            core = core + S @ A.T
    else:
        a = X
        for A in theta:
            S, dS = activate(act, a @ A.T)
            cache.append((a, dS))
            a = S
        core = a
    if config.append_bias_unit:
        return np.hstack([core, np.ones((m, 1))]), cache
    return core, cache


def _stack_backward(X, theta, config, cache, GZ):
    """Gradients of ``sum(GZ * Z)`` with respect to each theta block."""
    if config.depth == 0:
        return []
    g = GZ[:, :config.core_dim]
    grads = [None] * len(theta)
    if config.use_skip:
        for l in range(config.depth, 0, -1):
            S, dS = cache[l - 1]
            A = theta[l]
            grads[l] = g.T @ S
            g = g + (g @ A) * dS
        grads[0] = g.T @ X
    else:
        for l in range(config.depth - 1, -1, -1):
            a_prev, dS = cache[l]
            gU = g * dS
            grads[l] = gU.T @ a_prev
            g = gU @ theta[l]
    return grads


def residual_batch(X, theta, config):
    """``Z(X, theta)``: row ``i`` is ``z(x_i, theta)``."""
    X = as_matrix(X, "X")
    _check_theta(theta, X.shape[1], config)
    return _stack_forward(X, theta, config)[0]


def residual_forward(x, theta, config):
    """``z(x, theta)`` for a single input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return residual_batch(x, [as_matrix(A) for A in theta], config)[0]


def _check_params(params, d_x, config):
    if params.d_x != d_x:
        raise ShapeError(f"W expects d_x={params.d_x}, inputs have {d_x}")
    if params.d_z != config.out_dim:
        raise ShapeError(f"V has {params.d_z} columns but the stack outputs {config.out_dim}")
    _check_theta(params.theta, d_x, config)


def predict_batch(X, params, config):
    """Rows ``h(x_i) = W (x_i + V z_i)`` for every row of ``X``."""
    X = as_matrix(X, "X")
    _check_params(params, X.shape[1], config)
    Z, _ = _stack_forward(X, params.theta, config)
    return (X + Z @ params.V.T) @ params.W.T


def predict(x, params, config):
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return predict_batch(x, params, config)[0]


def dh_dW(x, params, config):
    """Jacobian of ``h`` with respect to ``vec(W)``: ``(x + V z)^T kron I_{d_y}``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z = residual_forward(x, params.theta, config)
    _check_params(params, x.size, config)
    return kron((x + params.V @ z)[None, :], np.eye(params.d_y))


def dh_dV(x, params, config):
    """Jacobian of ``h`` with respect to ``vec(V)``: ``z^T kron W``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z = residual_forward(x, params.theta, config)
    _check_params(params, x.size, config)
    return kron(z[None, :], params.W)


def loss_and_grad(data, params, config, kind):
    """Empirical objective and its gradient, as ``(loss, ResNetParams)``.

    With ``D`` the stacked per-example loss gradients,
    ``dL/dW = (1/m) D^T (X + Z V^T)`` and ``dL/dV = (1/m) W^T D^T Z``; the
    latter is the transpose of the ``z D W`` ordering, which is what the
    column-major ``vec(V)`` layout requires.
    """
    X = data.X
    Y = validate_targets(kind, data.Y)
    _check_params(params, X.shape[1], config)
    if params.d_y != Y.shape[1]:
        raise ShapeError(f"W has {params.d_y} rows but targets have {Y.shape[1]} columns")
    m = X.shape[0]
    W, V = params.W, params.V
    Z, cache = _stack_forward(X, params.theta, config)
    Xt = X + Z @ V.T
    H = Xt @ W.T
    values, D = batch_loss(kind, H, Y)
    loss = float(np.mean(values))
    if not np.isfinite(loss):
        raise NumericalError("loss is not finite")
    D = D / m
    gW = D.T @ Xt
    GXt = D @ W
    gV = GXt.T @ Z
    gtheta = _stack_backward(X, params.theta, config, cache, GXt @ V)
    return loss, ResNetParams(gW, gV, tuple(gtheta))


def grad_loss_params(data, params, config, kind):
    """Gradient of the empirical objective with respect to ``(W, V, theta)``."""
    return loss_and_grad(data, params, config, kind)[1]


def plain_relu_net_predict(x, W1, W2):
    """One-hidden-layer ReLU network ``W2 max(0, W1 x)``."""
    W1 = as_matrix(W1, "W1")
    W2 = as_matrix(W2, "W2")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if W1.shape[1] != x.size or W2.shape[1] != W1.shape[0]:
        raise ShapeError(f"incompatible shapes W1 {W1.shape}, W2 {W2.shape}, x ({x.size},)")
    return W2 @ np.maximum(W1 @ x, 0.0)


def augment_bias(data):
    """Append a constant-one feature to every input."""
    if data.bias_augmented:
        raise InvalidStateError("dataset is already bias-augmented")
    X = np.hstack([data.X, np.ones((data.m, 1))])
    return DataSet(X, data.Y, bias_augmented=True)


def strip_bias(data):
    if not data.bias_augmented:
        raise InvalidStateError("dataset is not bias-augmented")
    return DataSet(data.X[:, :-1], data.Y, bias_augmented=False)
