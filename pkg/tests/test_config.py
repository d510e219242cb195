import numpy as np
import pytest

from koopobs.config import (AnalysisSettings, ConfigError, load_config, load_config_text, parse_complex,
                            render_config)
from koopobs.models import MODELS, get_model

BASE = """
[system]
name = "toy"
f = ["x1", "x2", "-2*x1^2 - 2*x2^2 + 4*x3"]
h = ["x1^2 + x2^2 + x3"]
"""


@pytest.mark.parametrize("name", sorted(MODELS))
def test_render_load_render_is_stable(name):
    text = render_config(get_model(name))
    cfg = load_config_text(text)
    assert render_config(cfg.model, cfg.analysis, cfg.simulate) == text


@pytest.mark.parametrize("name", ["example2", "consensus-directed"])
def test_loaded_model_matches_builtin(name):
    m = get_model(name)
    cfg = load_config_text(render_config(m))
    np.testing.assert_allclose(cfg.model.kset.eigenvalues, m.kset.eigenvalues, atol=1e-15)
    np.testing.assert_allclose(cfg.model.kset.modes, m.kset.modes, atol=1e-15)
    assert [P.perm for P in cfg.model.symmetries] == [P.perm for P in m.symmetries]
    X = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    np.testing.assert_array_equal(cfg.model.system.measure_many(X), m.system.measure_many(X))


def test_minimal_config_defaults():
    cfg = load_config_text(BASE)
    assert cfg.model.kset is None and cfg.model.symmetries == ()
    assert cfg.analysis == AnalysisSettings()
    assert len(cfg.digest) == 64


def test_load_from_file(tmp_path):
    path = tmp_path / "toy.toml"
    path.write_text(BASE)
    assert load_config(path).model.name == "toy"


@pytest.mark.parametrize("extra, match", [
    ("[solver]\nkind = 1", "unknown key"),
    ("[analysis]\nseeed = 3", "seeed"),
    ("[symmetry]\nP = [2, 1]", "length 2"),
    ("[symmetry]\nP = [1, 2, 3]", "identity"),
    ("[[koopman]]\nlambda = 1\nmode = [1, 0, 0]", "eigenfunction"),
    ("[[koopman]]\nlambda = 1\npsi = \"x1\"\nmode = [1, 0]", "3 entries"),
    ("[[koopman]]\nlambda = \"one\"\npsi = \"x1\"\nmode = [1, 0, 0]", "complex"),
    ("[measurements]\ndefault = [\"x1\"]", "reserved"),
    ("[simulate]\nx0 = [1, 2]", "3 entries"),
    ("[analysis]\nsamples = \"many\"", "expected a number"),
])
def test_invalid_configs(extra, match):
    with pytest.raises(ConfigError, match=match):
        load_config_text(BASE + "\n" + extra + "\n")


@pytest.mark.parametrize("body, match", [
    ('[system]\nf = ["x1 +"]\nh = ["x1"]', "line 1"),
    ('[system]\nf = ["x1"]\nh = ["x2"]', "out of range"),
    ('[system]\nf = ["x1"]', "both f and h"),
    ('[system]\nn = 2\nf = ["x1"]\nh = ["x1"]', "n = 2"),
    ('system = 3 = 4', "malformed"),
    ('[measurements]\nalt = ["x1"]', "missing \\[system\\]"),
])
def test_invalid_systems(body, match):
    with pytest.raises(ConfigError, match=match):
        load_config_text(body)


@pytest.mark.parametrize("value, expected", [
    (2, 2 + 0j), (-1.5, -1.5 + 0j), ([0.5, -2], 0.5 - 2j), ("-1.5+0.866i", -1.5 + 0.866j), ("3i", 3j),
])
def test_parse_complex(value, expected):
    assert parse_complex(value, "x") == expected


@pytest.mark.parametrize("value", [True, "abc", [1, 2, 3], None])
def test_parse_complex_rejects(value):
    with pytest.raises(ConfigError):
        parse_complex(value, "x")


def test_multiple_permutations_and_initial_states():
    cfg = load_config_text(BASE + '\n[symmetry]\nP = [[2, 1, 3]]\n\n[simulate]\nx0 = [[1, 2, 1], [0, 0, 1]]\nt_final = 0.5\n')
    assert cfg.simulate.x0 == ((1.0, 2.0, 1.0), (0.0, 0.0, 1.0))
    assert cfg.model.x0 == (1.0, 2.0, 1.0) and cfg.simulate.t_final == 0.5
