"""Config parsing: collected errors, defaults, canonical rendering."""

import numpy as np
import pytest

from qtraj.config import (
    ConfigError,
    RunConfig,
    build_model,
    initial_state,
    parse_config,
)
from qtraj.hilbert import FockSpace, coherent_state, fock_state

MINIMAL = """
model.builder = thermal
model.dim = 8
model.rate = 1.0
model.nu = 0.5
run.base_seed = 42
"""


def test_minimal_config_resolves_defaults():
    cfg = parse_config(MINIMAL)
    assert isinstance(cfg, RunConfig)
    assert cfg.builder == "thermal"
    assert cfg["model.dim"] == 8
    assert cfg["run.kind"] == "nonlinear"
    assert cfg["run.M"] == 256
    assert cfg["run.dt"] == 1e-3
    assert cfg["run.initial"] == "fock:0"
    assert cfg.tasks == ("master_oracle",)
    assert cfg["output.dir"] == "out"
    assert cfg["model.p"] == 4


def test_all_errors_collected_at_once():
    text = """
model.builder = thermal
model.dim = 8
nonsense.key = 1
model.dim = 9
run.M = zero
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    errors = exc.value.errors
    joined = "\n".join(errors)
    assert "line 4: unknown key 'nonsense.key'" in joined
    assert "line 5: duplicate key 'model.dim' (first set on line 3)" in joined
    assert "line 6: cannot parse run.M value 'zero' as int" in joined
    assert "missing mandatory key 'run.base_seed'" in joined
    assert "missing key 'model.rate'" in joined
    assert "missing key 'model.nu'" in joined
    assert len(errors) >= 6


def test_builder_specific_keys_are_policed():
    text = """
model.builder = monitored
model.dim = 12
model.mass = 1.0
model.c = 0.5
model.alpha = 0.3
model.beta = 0.2
model.rate = 1.0
run.base_seed = 0
"""
    with pytest.raises(ConfigError, match="model.rate is not used"):
        parse_config(text)


def test_comments_and_blank_lines_ignored():
    text = MINIMAL + "\n# a comment line\nrun.M = 16  # trailing comment\n\n"
    cfg = parse_config(text)
    assert cfg["run.M"] == 16


def test_malformed_line():
    with pytest.raises(ConfigError, match="expected 'section.key = value'"):
        parse_config(MINIMAL + "\njust some words\n")


def test_semantic_checks():
    base = """
model.builder = thermal
model.dim = 1
model.rate = 1.0
model.nu = 0.5
run.base_seed = -3
run.dt = 0.0
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(base)
    joined = "\n".join(exc.value.errors)
    assert "model.dim must be >= 2" in joined
    assert "run.base_seed must be nonnegative" in joined
    assert "run.dt must be positive" in joined


def test_initial_state_forms():
    cfg = parse_config(MINIMAL + "run.initial = fock:3\n")
    np.testing.assert_array_equal(initial_state(cfg, FockSpace(8)), fock_state(FockSpace(8), 3))
    cfg2 = parse_config(MINIMAL + "run.initial = coherent:1.2+0.8j\n")
    np.testing.assert_array_equal(
        initial_state(cfg2, FockSpace(8)), coherent_state(FockSpace(8), 1.2 + 0.8j)
    )
    with pytest.raises(ConfigError, match="fock level must be in"):
        parse_config(MINIMAL + "run.initial = fock:8\n")
    with pytest.raises(ConfigError, match="not a complex number"):
        parse_config(MINIMAL + "run.initial = coherent:xyz\n")
    with pytest.raises(ConfigError, match="run.initial must be"):
        parse_config(MINIMAL + "run.initial = vacuum\n")


def test_task_list_validation():
    with pytest.raises(ConfigError, match="unknown task"):
        parse_config(MINIMAL + "run.tasks = master_oracle, warp\n")
    with pytest.raises(ConfigError, match="duplicate task"):
        parse_config(MINIMAL + "run.tasks = duality, duality\n")
    cfg = parse_config(MINIMAL + "run.tasks = duality, ensemble\n")
    assert cfg.tasks == ("duality", "ensemble")


def test_task_prerequisites():
    with pytest.raises(ConfigError, match="needs run.kind = both"):
        parse_config(MINIMAL + "run.tasks = equivalence\n")
    with pytest.raises(ConfigError, match="normalized"):
        parse_config(MINIMAL + "run.kind = linear\nrun.tasks = stationary\n")
    with pytest.raises(ConfigError, match="monitored only"):
        parse_config(MINIMAL + "run.tasks = ehrenfest\n")
    # satisfied prerequisites parse cleanly
    parse_config(MINIMAL + "run.kind = both\nrun.tasks = equivalence\n")


def test_build_model_from_config():
    cfg = parse_config(MINIMAL)
    model = build_model(cfg)
    assert model.dim == 8
    assert model.meta["builder"] == "thermal"
    assert model.meta["rate"] == 1.0

    kerr_text = """
model.builder = kerr
model.dim = 8
model.alpha4 = 0.5+0.1j
model.beta2 = 1.0
run.base_seed = 0
"""
    kerr = build_model(parse_config(kerr_text))
    assert kerr.meta["builder"] == "kerr"
    assert kerr.meta["alpha"][3] == 0.5 + 0.1j
    assert kerr.n_channels == 1

    mon_text = """
model.builder = monitored
model.dim = 12
model.mass = 1.0
model.c = 0.5
model.alpha = 0.3
model.beta = 0.2
run.base_seed = 0
"""
    mon = build_model(parse_config(mon_text))
    assert mon.meta["builder"] == "monitored"
    assert mon.n_channels == 2


def test_canonical_text_is_stable_and_complete():
    cfg = parse_config(MINIMAL)
    text = cfg.canonical_text()
    assert text == parse_config(MINIMAL).canonical_text()
    # every schema key appears exactly once, sorted
    lines = [l for l in text.splitlines() if l]
    keys = [l.split(" = ")[0] for l in lines]
    assert keys == sorted(keys)
    assert "run.base_seed = 42" in text
    assert "run.dt = 0.001" in text
    # reordering input lines does not change the canonical form
    reordered = "run.base_seed = 42\nmodel.nu = 0.5\nmodel.rate = 1.0\nmodel.dim = 8\nmodel.builder = thermal\n"
    assert parse_config(reordered).canonical_text() == text
