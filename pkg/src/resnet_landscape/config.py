"""Experiment configuration: flat ``key = value`` files with dotted sections.

Example::

    # two-layer tanh stack on a planted-teacher dataset
    seed = 7
    loss = squared
    data.source = teacher
    data.m = 40
    data.d_x = 4
    data.d_y = 2
    model.depth = 2
    model.widths = 6, 6
    model.activation = tanh
    train.restarts = 5

Blank lines and ``#`` comments are ignored.  Numbers are decimal doubles
(integers where a count is expected); booleans are ``true``/``false``;
lists are comma separated.  ``sweep.<key> = a | b | c`` lines declare grid
axes for the ``sweep`` command; every other key must be one listed in
:data:`DEFAULTS` or :data:`REQUIRED`.

The output-dimension condition ``d_y <= min(d_x, d_z)`` is checked when a
config is loaded, before any computation.
"""

import hashlib
import itertools
from dataclasses import dataclass, replace

from .errors import ConfigurationError
from .lab import CertificationConfig
from .losses import LossKind
from .model import Activation, StackConfig, check_output_dim_assumption

__all__ = [
    "DEFAULTS",
    "REQUIRED",
    "SOURCES",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "config_from_mapping",
    "expand_sweep",
]

REQUIRED = ("seed",)

SOURCES = ("teacher", "gaussian", "replicated", "csv")

# Every accepted key with its default, as text (the file format).
DEFAULTS = {
    "loss": "squared",
    "out": "results",
    "data.source": "teacher",
    "data.m": "32",
    "data.groups": "8",
    "data.replicas": "4",
    "data.d_x": "4",
    "data.d_y": "2",
    "data.noise": "0.1",
    "data.bias": "false",
    "data.teacher_depth": "1",
    "data.teacher_width": "",
    "data.teacher_activation": "tanh",
    "data.x_path": "",
    "data.y_path": "",
    "data.header": "false",
    "model.depth": "2",
    "model.widths": "",
    "model.activation": "tanh",
    "model.skip": "false",
    "model.bias_unit": "false",
    "model.d_z": "",
    "train.grad_tol": "1e-6",
    "train.max_iter": "200000",
    "train.restarts": "5",
    "train.method": "lbfgs",
    "train.trace_stride": "1",
    "cert.n_directions": "64",
    "cert.radii": "1e-2, 1e-3, 1e-4",
    "cert.hessian": "true",
    "cert.hessian_dim_cap": "2000",
    "counterexample.c": "1.0",
    "counterexample.hidden": "",
}

_TRUE = ("true", "yes", "1", "on")
_FALSE = ("false", "no", "0", "off")


def parse_config_text(text, source="<config>"):
    """Parse config text into an ordered ``{key: raw_value}`` mapping."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        if not key.startswith("sweep.") and key not in DEFAULTS and key not in REQUIRED:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _int(values, key, minimum=None):
    raw = values[key]
    try:
        v = float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got {raw!r}") from None
    if v != int(v):
        raise ConfigurationError(f"{key}: expected an integer, got {raw!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigurationError(f"{key}: must be >= {minimum}, got {v}")
    return v


def _float(values, key, positive=False):
    raw = values[key]
    try:
        v = float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got {raw!r}") from None
    if positive and not v > 0:
        raise ConfigurationError(f"{key}: must be positive, got {raw!r}")
    return v


def _bool(values, key):
    raw = values[key].lower()
    if raw in _TRUE:
        return True
    if raw in _FALSE:
        return False
    raise ConfigurationError(f"{key}: expected true/false, got {values[key]!r}")


def _list(values, key, conv):
    raw = values[key]
    if not raw.strip():
        return ()
    try:
        return tuple(conv(p.strip()) for p in raw.split(","))
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse list {raw!r}") from None


def _choice(values, key, parse):
    try:
        return parse(values[key])
    except ValueError as exc:
        raise ConfigurationError(f"{key}: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings (see the module docstring for keys)."""

    seed: int
    loss: LossKind
    out: str
    source: str
    m: int
    groups: int
    replicas: int
    d_x: int
    d_y: int
    noise: float
    bias: bool
    teacher: StackConfig
    x_path: str
    y_path: str
    header: bool
    stack: StackConfig
    grad_tol: float
    max_iter: int
    restarts: int
    method: str
    trace_stride: int
    cert: CertificationConfig
    ce_c: float
    ce_hidden: int
    raw: tuple  # resolved (key, text) pairs, sorted; the hash input
    sweep: tuple = ()  # ((key, (value, ...)), ...) in file order

    @property
    def d_z(self):
        return self.stack.out_dim

    @property
    def config_hash(self):
        text = "".join(f"{k}={v}\n" for k, v in self.raw)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def canonical_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.raw)

    def with_overrides(self, **overrides):
        """New config with ``{dotted_key: text}`` overrides re-validated."""
        mapping = dict(self.raw)
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS and key not in REQUIRED:
                raise ConfigurationError(f"unknown key {key!r}")
            mapping[key] = str(v)
        return config_from_mapping(mapping, sweep=self.sweep)


def _stack(values, prefix_depth, prefix_widths, prefix_act, skip, bias_unit, d_z_key, default_width):
    depth = _int(values, prefix_depth, minimum=0)
    widths = _list(values, prefix_widths, int) if prefix_widths in values else ()
    if not widths and depth > 0:
        widths = (default_width,) * depth
    activation = _choice(values, prefix_act, Activation.parse)
    d_z = None
    if d_z_key is not None and values.get(d_z_key, "").strip():
        d_z = _int(values, d_z_key, minimum=1)
    if depth == 0 and d_z is None:
        d_z = default_width
    try:
        return StackConfig(depth, widths, activation, use_skip=skip, append_bias_unit=bias_unit, d_z=d_z)
    except ValueError as exc:
        raise ConfigurationError(f"model: {exc}") from None


def config_from_mapping(values, sweep=()):
    """Validate a ``{key: text}`` mapping (defaults filled in) into an :class:`ExperimentConfig`."""
    for key in REQUIRED:
        if key not in values or not str(values[key]).strip():
            raise ConfigurationError(f"missing required key {key!r} (no wall-clock seeding)")
    merged = dict(DEFAULTS)
    merged.update({k: str(v).strip() for k, v in values.items() if not k.startswith("sweep.")})
    seed = _int(merged, "seed", minimum=0)
    if seed >= 2**64:
        raise ConfigurationError("seed must fit in 64 bits")
    loss = _choice(merged, "loss", LossKind.parse)
    source = merged["data.source"]
    if source not in SOURCES:
        raise ConfigurationError(f"data.source must be one of {SOURCES}, got {source!r}")
    d_x = _int(merged, "data.d_x", minimum=1)
    d_y = _int(merged, "data.d_y", minimum=1)
    teacher_width = _int(merged, "data.teacher_width", minimum=1) if merged["data.teacher_width"] else d_x
    teacher = _stack(
        merged, "data.teacher_depth", "data.teacher_widths", "data.teacher_activation",
        False, False, None, teacher_width,
    )
    skip = _bool(merged, "model.skip")
    stack = _stack(
        merged, "model.depth", "model.widths", "model.activation",
        skip, _bool(merged, "model.bias_unit"), "model.d_z", d_x,
    )
    if source == "csv":
        for key in ("data.x_path", "data.y_path"):
            if not merged[key]:
                raise ConfigurationError(f"data.source = csv needs {key}")
    else:
        # CSV dimensions come from the files and are checked when they are read
        try:
            check_output_dim_assumption(d_x, d_y, stack.out_dim)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{exc} (data.d_x = {d_x}, data.d_y = {d_y}, d_z = {stack.out_dim})") from None
    try:
        cert = CertificationConfig(
            n_directions=_int(merged, "cert.n_directions", minimum=1),
            radii=_list(merged, "cert.radii", float),
            hessian_check=_bool(merged, "cert.hessian"),
            hessian_dim_cap=_int(merged, "cert.hessian_dim_cap", minimum=0),
        )
    except ValueError as exc:
        raise ConfigurationError(f"cert: {exc}") from None
    method = merged["train.method"]
    if method not in ("lbfgs", "gd"):
        raise ConfigurationError(f"train.method must be lbfgs or gd, got {method!r}")
    ce_hidden = _int(merged, "counterexample.hidden", minimum=1) if merged["counterexample.hidden"] else d_x
    if source == "replicated":
        groups = _int(merged, "data.groups", minimum=1)
        replicas = _int(merged, "data.replicas", minimum=1)
        m = groups * replicas
    else:
        groups = replicas = 0
        m = _int(merged, "data.m", minimum=1)
    canonical = {k: merged[k] for k in sorted(merged)}
    canonical["seed"] = str(seed)
    return ExperimentConfig(
        seed=seed,
        loss=loss,
        out=merged["out"],
        source=source,
        m=m,
        groups=groups,
        replicas=replicas,
        d_x=d_x,
        d_y=d_y,
        noise=_float(merged, "data.noise"),
        bias=_bool(merged, "data.bias"),
        teacher=teacher,
        x_path=merged["data.x_path"],
        y_path=merged["data.y_path"],
        header=_bool(merged, "data.header"),
        stack=stack,
        grad_tol=_float(merged, "train.grad_tol", positive=True),
        max_iter=_int(merged, "train.max_iter", minimum=0),
        restarts=_int(merged, "train.restarts", minimum=1),
        method=method,
        trace_stride=_int(merged, "train.trace_stride", minimum=1),
        cert=cert,
        ce_c=_float(merged, "counterexample.c", positive=True),
        ce_hidden=ce_hidden,
        raw=tuple(sorted(canonical.items())),
        sweep=tuple(sweep),
    )


def _sweep_axes(values):
    axes = []
    for key, raw in values.items():
        if not key.startswith("sweep."):
            continue
        target = key[len("sweep."):]
        if target not in DEFAULTS and target not in REQUIRED:
            raise ConfigurationError(f"{key}: cannot sweep unknown key {target!r}")
        options = tuple(v.strip() for v in raw.split("|"))
        if not options or any(not o for o in options):
            raise ConfigurationError(f"{key}: empty grid value in {raw!r}")
        axes.append((target, options))
    return tuple(axes)


def load_config(path, overrides=None):
    """Read, override (``{key: text}``) and validate a config file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError:
        raise
    values = parse_config_text(text, source=str(path))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = str(v)
    sweep = _sweep_axes(values)
    return config_from_mapping(values, sweep=sweep)


def expand_sweep(config):
    """Grid cells as ``[(cell_id, label, ExperimentConfig), ...]``; one cell when no axes exist."""
    if not config.sweep:
        return [(0, "", config)]
    keys = [k for k, _ in config.sweep]
    cells = []
    for i, combo in enumerate(itertools.product(*(opts for _, opts in config.sweep))):
        overrides = dict(zip(keys, combo))
        label = ";".join(f"{k}={v}" for k, v in overrides.items())
        mapping = dict(config.raw)
        mapping.update(overrides)
        cells.append((i, label, replace(config_from_mapping(mapping), sweep=())))
    return cells
