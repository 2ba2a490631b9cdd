import pytest

from resnet_landscape.config import (
    DEFAULTS,
    config_from_mapping,
    expand_sweep,
    load_config,
    parse_config_text,
)
from resnet_landscape.errors import ConfigurationError
from resnet_landscape.losses import LossKind


def test_parse_comments_and_values():
    v = parse_config_text("# header\nseed = 3  # trailing\n\nloss = softmax_cross_entropy\n")
    assert v == {"seed": "3", "loss": "softmax_cross_entropy"}


@pytest.mark.parametrize(
    "text, message",
    [
        ("seed = 1\nseed = 2\n", "duplicate"),
        ("seed = 1\nmodel.colour = red\n", "unknown key"),
        ("seed 1\n", "expected"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(ConfigurationError, match=message):
        parse_config_text(text)


def test_seed_is_required():
    with pytest.raises(ConfigurationError, match="seed"):
        config_from_mapping({})


def test_defaults_resolve():
    cfg = config_from_mapping({"seed": "1"})
    assert cfg.loss is LossKind.SQUARED
    assert cfg.grad_tol == 1e-6
    assert cfg.stack.depth == 2 and cfg.d_z == cfg.stack.widths[-1]
    assert len(cfg.raw) == len(DEFAULTS) + 1


def test_a1_rejected_at_load():
    with pytest.raises(ConfigurationError, match="A1"):
        config_from_mapping({"seed": "1", "data.d_x": "2", "data.d_y": "3"})
    with pytest.raises(ConfigurationError, match="A1"):
        config_from_mapping({"seed": "1", "data.d_y": "2", "model.depth": "1", "model.widths": "1"})


@pytest.mark.parametrize(
    "key, value",
    [("data.m", "-1"), ("train.grad_tol", "abc"), ("loss", "cubic"), ("model.activation", "swish"), ("data.bias", "maybe"), ("data.source", "web")],
)
def test_invalid_values(key, value):
    with pytest.raises(ConfigurationError):
        config_from_mapping({"seed": "1", key: value})


def test_hash_stability_and_sensitivity():
    a = config_from_mapping({"seed": "1", "data.m": "32"})
    b = config_from_mapping({"data.m": "32", "seed": "1"})
    assert a.config_hash == b.config_hash
    assert a.config_hash != config_from_mapping({"seed": "2"}).config_hash
    assert a.with_overrides(seed=2).config_hash == config_from_mapping({"seed": "2"}).config_hash


def test_load_with_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 4\ntrain.restarts = 2\n")
    cfg = load_config(p, {"seed": 9, "train.restarts": None})
    assert cfg.seed == 9 and cfg.restarts == 2


def test_sweep_expansion(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 1\nsweep.model.activation = identity | relu\nsweep.seed = 1 | 2 | 3\n")
    cells = expand_sweep(load_config(p))
    assert [c[0] for c in cells] == list(range(6))
    assert cells[0][1] == "model.activation=identity;seed=1"
    assert cells[5][2].seed == 3 and cells[5][2].stack.activation.value == "relu"
    assert all(c[2].sweep == () for c in cells)


def test_single_cell_without_sweep():
    cfg = config_from_mapping({"seed": "1"})
    assert expand_sweep(cfg) == [(0, "", cfg)]


def test_sweep_of_unknown_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 1\nsweep.nothing = 1 | 2\n")
    with pytest.raises(ConfigurationError):
        load_config(p)
