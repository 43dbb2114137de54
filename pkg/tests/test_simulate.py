import math

import numpy as np
import pytest

from regimeshift.dynamics import BENCHMARK_SCHEDULES, RegimeSchedule, get_system
from regimeshift.errors import ConfigError, IntegrationError, ParseError
from regimeshift.simulate import (integrate, read_dataset, sample_observations, snap_schedule,
                                  write_dataset)

ONE = RegimeSchedule((0.0, 20.0), (), ((0.1,),))


def test_malthus_closed_form():
    tr = integrate("malthus", ONE, (1.0,), 0.01)
    i = int(round(10 / 0.01))
    assert abs(tr.states[i, 0] / math.e - 1) <= 1e-8


def test_malthus_piecewise_closed_form():
    tr = integrate("malthus", BENCHMARK_SCHEDULES["malthus"], (1.0,), 0.01)
    assert abs(tr.states[-1, 0] / math.exp(7.0) - 1) <= 1e-7
    # continuity at the breakpoint; derivative jumps with Δθ
    i = int(round(40 / 0.01))
    assert np.all(np.isfinite(tr.states))
    left = (tr.states[i] - tr.states[i - 1]) / 0.01
    right = (tr.states[i + 1] - tr.states[i]) / 0.01
    assert (left - right)[0] == pytest.approx(0.05 * tr.states[i, 0], rel=1e-2)


def test_logistic_equilibrium_and_closed_form():
    Q = get_system("logistic").fixed_constants["Q"]
    sched = RegimeSchedule((0.0, 50.0), (), ((0.1,),))
    tr = integrate("logistic", sched, (Q,), 0.01)
    assert np.all(tr.states == Q)
    tr = integrate("logistic", sched, (10.0,), 0.01)
    t = tr.times
    exact = Q * 10 * np.exp(0.1 * t) / (Q + 10 * (np.exp(0.1 * t) - 1))
    assert np.max(np.abs(tr.states[:, 0] / exact - 1)) <= 1e-6


def test_rk4_order():
    errs = []
    for dt in (0.1, 0.05, 0.025):
        tr = integrate("malthus", RegimeSchedule((0.0, 10.0), (), ((0.5,),)), (1.0,), dt)
        errs.append(np.max(np.abs(tr.states[:, 0] - np.exp(0.5 * tr.times))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 3.7) & (orders <= 4.3)), orders


def test_grid_contains_breakpoints():
    tr = integrate("vanderpol", BENCHMARK_SCHEDULES["vanderpol"], (2.0, 0.0), 0.01)
    for b in (40.0, 80.0):
        assert np.min(np.abs(tr.times - b)) < 1e-9
    d = np.diff(tr.times)
    assert np.allclose(d, 0.01)


def test_snap_schedule_warns(caplog):
    s = RegimeSchedule((0, 10), (4.004,), ((1,), (2,)))
    with caplog.at_level("WARNING", logger="regimeshift.simulate"):
        snapped = snap_schedule(s, 0.01)
    assert "snapped" in caplog.text
    assert snapped.breakpoints[0] == pytest.approx(4.0)


def test_blowup_names_time():
    sched = RegimeSchedule((0.0, 10.0), (), ((400.0,),))
    with pytest.raises(IntegrationError, match="t="), np.errstate(over="ignore"):
        integrate("malthus", sched, (1.0,), 0.1)


def test_sampling():
    tr = integrate("malthus", ONE, (1.0,), 0.01)
    ds = sample_observations(tr, 0.1)
    np.testing.assert_array_equal(ds.obs_states, tr.states[::10])
    a = sample_observations(tr, 0.1, 0.1, seed=3)
    b = sample_observations(tr, 0.1, 0.1, seed=3)
    assert a == b
    with pytest.raises(ConfigError):
        sample_observations(tr, 0.015)


def test_noise_level():
    sched = RegimeSchedule((0.0, 100.0), (), ((0.0,),))
    tr = integrate("malthus", sched, (1.0,), 0.01)
    ds = sample_observations(tr, 0.01, 0.1, seed=0)
    s = np.std(ds.obs_states[:, 0] - 1.0)
    assert 0.097 <= s <= 0.103


def test_dataset_roundtrip(tmp_path):
    tr = integrate("vanderpol", BENCHMARK_SCHEDULES["vanderpol"], (2.0, 0.0), 0.01)
    ds = sample_observations(tr, 0.1, 0.01, seed=1)
    p = tmp_path / "d.csv"
    write_dataset(ds, p)
    assert read_dataset(p) == ds
    p.write_text(p.read_text() + "\n\n")
    assert read_dataset(p) == ds


def test_dataset_parse_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,x1\n0,1\n")
    with pytest.raises(ParseError):
        read_dataset(p)
    p.write_text("t,x1\n0,1\n0.1,abc\n")
    with pytest.raises(ParseError, match=":3"):
        read_dataset(p)
