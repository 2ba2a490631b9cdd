"""Convex differentiable per-example losses and the empirical objective.

Each loss maps an output row ``h`` and a target row ``y`` to a scalar and
to its gradient ``D = dl/dh`` (a row of length ``d_y``).  The batch
functions work on ``(m, d_y)`` arrays and return per-example values and
the stacked ``D`` rows.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError

__all__ = [
    "LossKind",
    "LossEval",
    "loss_eval",
    "batch_loss",
    "validate_targets",
    "empirical_objective",
    "convexity_probe",
]


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    LOGISTIC_BINARY = "logistic_binary"
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"
    SMOOTHED_HINGE = "smoothed_hinge"

    @property
    def code(self):
        return _CODES[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise InvalidInputError(f"unknown loss kind {value!r}; expected one of {names}") from None


_CODES = {
    LossKind.SQUARED: 0,
    LossKind.LOGISTIC_BINARY: 1,
    LossKind.SOFTMAX_CROSS_ENTROPY: 2,
    LossKind.SMOOTHED_HINGE: 3,
}


@dataclass(frozen=True)
class LossEval:
    value: float
    D: np.ndarray  # shape (1, d_y)


def validate_targets(kind, Y):
    """Raise :class:`InvalidInputError` unless ``Y`` is a valid encoding for ``kind``."""
    kind = LossKind.parse(kind)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[None, :]
    if not np.all(np.isfinite(Y)):
        raise InvalidInputError("targets contain non-finite entries")
    if kind is LossKind.LOGISTIC_BINARY:
        if Y.shape[1] != 1:
            raise InvalidInputError(f"logistic_binary needs d_y = 1, got {Y.shape[1]}")
        if not np.all((Y == 0.0) | (Y == 1.0)):
            raise InvalidInputError("logistic_binary targets must be 0 or 1")
    elif kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        if not (np.all((Y == 0.0) | (Y == 1.0)) and np.all(Y.sum(axis=1) == 1.0)):
            raise InvalidInputError("softmax_cross_entropy targets must be one-hot rows")
    elif kind is LossKind.SMOOTHED_HINGE:
        if not np.all(np.abs(Y) == 1.0):
            raise InvalidInputError("smoothed_hinge targets must be -1 or +1")
    return Y


def _softplus(t):
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sigmoid(t):
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def batch_loss(kind, H, Y):
    """Per-example losses and gradients for already-validated targets.

    Returns
    -------
    values : ndarray, shape (m,)
    D : ndarray, shape (m, d_y)
    """
    kind = LossKind.parse(kind)
    if kind is LossKind.SQUARED:
        R = H - Y
        return np.sum(R * R, axis=1), 2.0 * R
    if kind is LossKind.LOGISTIC_BINARY:
        values = _softplus(H) - Y * H
        return values[:, 0], _sigmoid(H) - Y
    if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        shift = H.max(axis=1, keepdims=True)
        E = np.exp(H - shift)
        S = E.sum(axis=1, keepdims=True)
        lse = shift[:, 0] + np.log(S[:, 0])
        return lse - np.sum(Y * H, axis=1), E / S - Y
    # smoothed hinge, per coordinate on the margin t = y*h
    T = Y * H
    phi = np.where(T >= 1.0, 0.0, np.where(T >= 0.0, 0.5 * (1.0 - T) ** 2, 0.5 - T))
    dphi = np.where(T >= 1.0, 0.0, np.where(T >= 0.0, T - 1.0, -1.0))
    return phi.sum(axis=1), Y * dphi


def loss_eval(kind, h, y):
    """Loss value and gradient row for a single example."""
    h = np.asarray(h, dtype=np.float64).reshape(1, -1)
    y = validate_targets(kind, np.asarray(y, dtype=np.float64).reshape(1, -1))
    if h.shape != y.shape:
        raise ShapeError(f"h has shape {h.shape[1:]} but y has {y.shape[1:]}")
    if not np.all(np.isfinite(h)):
        raise InvalidInputError("h contains non-finite entries")
    values, D = batch_loss(kind, h, y)
    return LossEval(float(values[0]), D)


def empirical_objective(data, params, config, kind):
    """Training-error average ``(1/m) sum_i l(h(x_i), y_i)``."""
    from .model import predict_batch

    Y = validate_targets(kind, data.Y)
    H = predict_batch(data.X, params, config)
    values, _ = batch_loss(kind, H, Y)
    return float(np.mean(values))


def convexity_probe(kind, y, h1, h2, t):
    """Jensen slack ``l(t h1 + (1-t) h2) - [t l(h1) + (1-t) l(h2)]``; never positive for convex losses."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    mid = loss_eval(kind, t * h1 + (1.0 - t) * h2, y).value
    return mid - (t * loss_eval(kind, h1, y).value + (1.0 - t) * loss_eval(kind, h2, y).value)
