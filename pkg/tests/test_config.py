import pytest

from regimeshift.config import PRESETS, RunConfig, load_config, preset
from regimeshift.errors import ConfigError


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_roundtrip(name):
    cfg = preset(name)
    again = RunConfig.parse(cfg.serialize())
    assert again == cfg
    assert again.serialize() == cfg.serialize()
    cfg.train_config()
    cfg.refine_config()
    assert len(cfg.plan()) > 0


def test_parse_file_and_overrides(tmp_path):
    p = tmp_path / "vdp.cfg"
    p.write_text("# reduced run\nsystem.name = vanderpol\nsystem.breakpoints = 40, 80\n"
                 "system.regimes = 1.0; 0.1; 0.5\n\nscreen.iterations = 2000  # short\n")
    cfg = load_config(p, None, ["screen.width=16", "run.seed = 7"])
    assert cfg["screen.iterations"] == 2000 and cfg["screen.width"] == 16 and cfg["run.seed"] == 7
    s = cfg.schedule()
    assert s.breakpoints == (40.0, 80.0)
    assert [tuple(r) for r in s.regimes] == [(1.0,), (0.1,), (0.5,)]
    # a file on top of a preset keeps the preset's other keys
    cfg2 = load_config(p, "vanderpol-desk", [])
    assert cfg2["screen.gamma"] == preset("vanderpol-desk")["screen.gamma"]


def test_auto_values():
    cfg = RunConfig.parse("system.name = malthus\nscreen.window_len = auto\nscreen.step =\n"
                          "screen.n_cells = 100\nscreen.delta = 1\n")
    assert cfg["screen.window_len"] is None
    assert cfg.plan().windows == preset("malthus-full").plan().windows
    with pytest.raises(ConfigError):
        RunConfig.parse("system.name = malthus\nscreen.window_len = auto\nscreen.step =\n")
    assert RunConfig.parse("system.name = malthus").schedule().breakpoints == (40.0,)


@pytest.mark.parametrize("text", [
    "bogus.key = 1",
    "screen.iterations = many",
    "just a line",
    "system.name = pendulum",
    "screen.iterations = 50\nscreen.median_window = 100",
    "system.breakpoints = 40",
])
def test_config_errors(text):
    with pytest.raises(ConfigError) as ei:
        RunConfig.parse(text).train_config() if "iterations" in text else RunConfig.parse(text).schedule()
    assert ei.value.exit_code == 2


def test_error_reports_line():
    with pytest.raises(ConfigError, match=":2:"):
        RunConfig.parse("system.name = malthus\nscreen.width = wide")


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("nope-desk")
