"""Synthetic dataset generators and CSV ingestion."""

import csv

import numpy as np

from .errors import DataFormatError, InvalidInputError
from .losses import LossKind
from .model import DataSet, augment_bias, init_params, predict_batch

__all__ = [
    "teacher_dataset",
    "gaussian_dataset",
    "replicated_dataset",
    "encode_targets",
    "load_csv_dataset",
    "write_matrix_csv",
]


def encode_targets(kind, scores, rng=None, noise=0.0):
    """Turn real-valued teacher scores ``(m, d_y)`` into targets valid for ``kind``."""
    kind = LossKind.parse(kind)
    S = np.asarray(scores, dtype=np.float64)
    if rng is not None and noise > 0:
        S = S + noise * rng.standard_normal(S.shape)
    if kind is LossKind.SQUARED:
        return S
    if kind is LossKind.LOGISTIC_BINARY:
        return (S[:, :1] > 0).astype(np.float64)
    if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        return np.eye(S.shape[1])[np.argmax(S, axis=1)]
    return np.where(S >= 0, 1.0, -1.0)


def teacher_dataset(m, d_x, d_y, teacher_config, kind, rng, noise=0.1, bias=False):
    """Targets from a randomly drawn teacher ResNet plus Gaussian noise.

    With ``bias`` the inputs get a trailing ones column; ``d_x`` counts it.
    """
    raw_dx = d_x - 1 if bias else d_x
    X = rng.standard_normal((m, raw_dx))
    data = DataSet(X, np.zeros((m, d_y)))
    if bias:
        data = augment_bias(data)
    teacher = init_params(d_x, d_y, teacher_config, rng)
    scores = predict_batch(data.X, teacher, teacher_config)
    return DataSet(data.X, encode_targets(kind, scores, rng, noise), data.bias_augmented)


def gaussian_dataset(m, d_x, d_y, kind, rng, bias=False):
    """Gaussian inputs and targets unrelated to them (random labels for classifiers)."""
    raw_dx = d_x - 1 if bias else d_x
    X = rng.standard_normal((m, raw_dx))
    Y = encode_targets(kind, rng.standard_normal((m, d_y)))
    data = DataSet(X, Y)
    return augment_bias(data) if bias else data


def _conflicting_targets(kind, d_y, count):
    """``count`` target rows for one input that no predictor can fit jointly."""
    if kind is LossKind.SOFTMAX_CROSS_ENTROPY:
        return np.eye(d_y)[np.arange(count) % d_y]
    if kind is LossKind.LOGISTIC_BINARY:
        return (np.arange(count) % 2).astype(np.float64)[:, None]
    return np.where((np.arange(count) % 2)[:, None] == 0, 1.0, -1.0) * np.ones((1, d_y))


def replicated_dataset(groups, replicas, d_x, d_y, teacher_config, kind, rng, noise=0.5, bias=False):
    """Each of ``groups`` distinct inputs appears ``replicas`` times with differing targets.

    Squared loss: teacher scores plus independent noise per copy.
    Classification losses: the first copies of every group carry every
    class (both signs for the binary kinds) and the rest follow the noisy
    teacher.  Repeated inputs with conflicting targets keep the best
    achievable loss strictly positive and, because every class occurs at
    every input, attained at finite parameters.

    Rows are ordered group by group; ``m = groups * replicas``.
    """
    kind = LossKind.parse(kind)
    if groups < 1 or replicas < 1:
        raise InvalidInputError("groups and replicas must be >= 1")
    n_conflict = {LossKind.SQUARED: 0, LossKind.SOFTMAX_CROSS_ENTROPY: d_y}.get(kind, 2)
    if replicas < n_conflict:
        raise InvalidInputError(f"{kind.value} needs replicas >= {n_conflict}")
    raw_dx = d_x - 1 if bias else d_x
    X = np.repeat(rng.standard_normal((groups, raw_dx)), replicas, axis=0)
    data = DataSet(X, np.zeros((X.shape[0], d_y)))
    if bias:
        data = augment_bias(data)
    teacher = init_params(d_x, d_y, teacher_config, rng)
    scores = predict_batch(data.X, teacher, teacher_config)
    Y = encode_targets(kind, scores, rng, noise)
    if n_conflict:
        fixed = _conflicting_targets(kind, d_y, n_conflict)
        for g in range(groups):
            Y[g * replicas : g * replicas + n_conflict] = fixed
    return DataSet(data.X, Y, data.bias_augmented)


def _read_numeric(path, header):
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell in {row!r}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} columns, found {len(values)}")
            if not all(np.isfinite(values)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def load_csv_dataset(path_x, path_y, bias=False, header=False):
    """Read ``X`` and ``Y`` from rectangular numeric CSV files."""
    X = _read_numeric(path_x, header)
    Y = _read_numeric(path_y, header)
    if X.shape[0] != Y.shape[0]:
        raise DataFormatError(
            f"{path_x} has {X.shape[0]} data rows but {path_y} has {Y.shape[0]}; "
            f"first unmatched data row is {min(X.shape[0], Y.shape[0]) + 1}"
        )
    try:
        data = DataSet(X, Y)
    except InvalidInputError as exc:
        raise DataFormatError(str(exc)) from None
    return augment_bias(data) if bias else data


def write_matrix_csv(path, M):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(M):
            w.writerow([repr(float(v)) for v in row])
