import numpy as np
import pytest

from drivenqubit.config import ENV_PREFIX, SCHEMA, example_config, load_config
from drivenqubit.model import ConfigurationError


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


def test_defaults():
    cfg = load_config(environ={})
    assert cfg.params.gamma0 == 0.5 and cfg.params.qme_dt == 1e-3
    assert cfg.optimizer.population_size == 15 and cfg.optimizer.max_iterations == 10
    assert cfg.task.name == "reset" and cfg.engines == ("qme",)
    np.testing.assert_array_equal(cfg.coeffs, np.zeros(4))


def test_example_config_roundtrips(tmp_path):
    text = example_config()
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text and all(f"{k} = " in text for k in keys)
    assert load_config(write(tmp_path, text), environ={}).resolved() == load_config(environ={}).resolved()


def test_unknown_key_is_line_anchored(tmp_path):
    path = write(tmp_path, "[model]\ndelta = 1.0\n\n# comment\ngamma_zero = 0.3\n")
    with pytest.raises(ConfigurationError, match=r"run\.ini:5: unknown key 'gamma_zero' in \[model\]"):
        load_config(path, environ={})


def test_unknown_section(tmp_path):
    with pytest.raises(ConfigurationError, match=r":2: unknown section \[solver\]"):
        load_config(write(tmp_path, "\n[solver]\nx = 1\n"), environ={})


@pytest.mark.parametrize("text, blamed", [
    ("[model]\nbeta = hot\n", r"run\.ini:2: model\.beta"),
    ("[qme]\n\ndt = -1\n", r"run\.ini:3: qme\.dt"),
    ("[control]\nM = 3\ncoeffs = 1, 2\n", r"run\.ini:3: control\.coeffs"),
    ("[control]\ntask = warming\n", r"run\.ini:2: control\.task"),
    ("[control]\npopulation = 2\n", r"run\.ini:2: control\.population"),
    ("[control]\nengines = qme, dmrg\n", r"run\.ini:2: control\.engines"),
])
def test_bad_values_name_file_line_and_key(tmp_path, text, blamed):
    with pytest.raises(ConfigurationError, match=blamed):
        load_config(write(tmp_path, text), environ={})


def test_environment_overrides_file(tmp_path):
    path = write(tmp_path, "[model]\nbeta = 2.0\n")
    cfg = load_config(path, environ={f"{ENV_PREFIX}MODEL_BETA": "3.5", f"{ENV_PREFIX}CONTROL_ENGINES": "both"})
    assert cfg.params.beta == 3.5 and cfg.engines == ("qme", "negf")
    with pytest.raises(ConfigurationError, match=f"environment {ENV_PREFIX}MODEL_BETA: model.beta"):
        load_config(path, environ={f"{ENV_PREFIX}MODEL_BETA": "-1"})
    with pytest.raises(ConfigurationError, match="unknown key"):
        load_config(environ={f"{ENV_PREFIX}MODEL_COLOUR": "1"})


def test_custom_task(tmp_path):
    cfg = load_config(write(tmp_path, "[control]\ntask = flip\nkind = reset\ncontrol_time = 3\n"
                                      "initial = 0 0 1\ntarget = 0 0 -1\n"), environ={})
    task = cfg.task
    assert task.name == "flip" and task.control_time == 3
    np.testing.assert_allclose(task.rho_target.bloch, [0, 0, -1])
    with pytest.raises(ConfigurationError, match="control.initial"):
        load_config(write(tmp_path, "[control]\nkind = reset\ncontrol_time = 3\ninitial = 0 0 2\n"
                                    "target = 0 0 1\n"), environ={})


def test_fixed_step_mode(tmp_path):
    cfg = load_config(write(tmp_path, "[model]\nfft_step_mode = fixed\nfft_energy_step = 0.1\n"), environ={})
    assert cfg.params.fft_step(5.0) == 0.1
    with pytest.raises(ConfigurationError, match="fft_step_mode"):
        load_config(write(tmp_path, "[model]\nfft_step_mode = fixed\n"), environ={})


def test_step_modes(tmp_path):
    auto = load_config(environ={}).params
    window = load_config(write(tmp_path, "[model]\nfft_step_mode = window\n"), environ={}).params
    assert auto.fft_step(6.0) == pytest.approx(np.pi / 12)
    assert window.fft_step(6.0) == pytest.approx(np.pi / 6)
