import numpy as np
import pytest

from regimeshift.dynamics import BENCHMARK_SCHEDULES
from regimeshift.errors import ConfigError
from regimeshift.local_pinn import TrainConfig
from regimeshift.screen import (ScreenReport, build_windows, build_windows_from_partition,
                                mad_normalize, mad_stats, oracle_screen, run_screen,
                                select_candidates, window_crosses)


def test_build_windows_examples():
    p = build_windows(0, 100, 2, 1)
    assert len(p) == 99
    assert p.windows[0] == (0.0, 2.0) and p.windows[1] == (1.0, 3.0) and p.windows[-1] == (98.0, 100.0)
    q = build_windows(0, 20, 0.2, 0.1)
    assert q.windows[0] == (0.0, 0.2) and q.windows[-1] == (19.8, 20.0)
    assert len(q) == 199
    assert all(round(b - a, 9) == 0.2 for a, b in q.windows)


def test_half_step_double_coverage(rng):
    p = build_windows(0, 10, 2, 1)
    for t in rng.uniform(0, 10, 200):
        if abs(t - round(t)) < 1e-9:
            continue
        inside = sum(a < t < b for a, b in p.windows)
        assert inside == (1 if t < 1 or t > 9 else 2)


def test_build_windows_back_shift_and_errors():
    p = build_windows(0, 10, 3, 2)
    assert p.windows[-1] == (7.0, 10.0)
    assert p.overlap == 1
    with pytest.raises(ConfigError):
        build_windows(0, 10, 2, 2)
    with pytest.raises(ConfigError):
        build_windows(0, 10, 11, 1)
    part = build_windows_from_partition(0, 100, 100, 1.0)
    assert part.windows == build_windows(0, 100, 2, 1).windows


@pytest.mark.parametrize("name", sorted(BENCHMARK_SCHEDULES))
def test_default_plan_covers_every_change(name):
    from regimeshift.config import preset
    cfg = preset(f"{name}-full")
    plan = cfg.plan(cfg.horizon())
    for tau in BENCHMARK_SCHEDULES[name].breakpoints:
        assert any(a < tau < b for a, b in plan.windows)


def test_mad_examples():
    np.testing.assert_array_equal(mad_normalize([3.0] * 6), np.zeros(6))
    Z = mad_normalize([1, 1, 1, 1, 9], 1e-12)
    assert Z[4] == pytest.approx(8e12) and np.all(Z[:4] == 0)
    np.testing.assert_allclose(mad_normalize([0, 2, 4, 6, 100]), [-2, -1, 0, 1, 48], rtol=1e-10)
    with pytest.raises(ConfigError):
        mad_normalize([1.0], 0.0)


def test_mad_guard():
    s = np.array([1.0, 1.0 + 1e-17, 1.0, 1.0])
    assert mad_stats(s, guard=True).degenerate_guard
    assert np.all(np.abs(mad_normalize(s, guard=True)) < 1)
    # guard does not engage when MAD is informative
    assert not mad_stats([0, 2, 4, 6, 100], guard=True).degenerate_guard


def test_mad_invariances(rng):
    S = rng.lognormal(size=30)
    Z = mad_normalize(S, 1e-300)
    np.testing.assert_allclose(mad_normalize(3.7 * S, 1e-300), Z, rtol=1e-12)
    np.testing.assert_allclose(mad_normalize(S + 5.0, 1e-300), Z, rtol=1e-9, atol=1e-9)


def test_select_candidates():
    plan = build_windows(0, 10, 2, 1)
    S = np.ones(9)
    assert select_candidates(plan, S, np.zeros(9), 3.0) == []
    S[[3, 4, 7]] = [5, 9, 6]
    Z = np.array([0, 0, 0, 4, 8, 0, 0, 5, 0.0])
    cl = select_candidates(plan, S, Z, 3.0)
    assert [c.indices for c in cl] == [(3, 4), (7,)]
    assert cl[0].k_star == 4 and cl[0].window == (4.0, 6.0) and cl[0].interval == (3.0, 7.0)
    assert cl[1].interval == (6.0, 10.0)  # truncated at the domain end
    Z[0], S[0] = 9, 9
    assert select_candidates(plan, S, Z, 3.0)[0].interval == (0.0, 3.0)
    S[:] = 1
    Z[:] = 4
    assert select_candidates(plan, S, Z, 3.0)[0].k_star == 0  # ties: smallest index
    with pytest.raises(ConfigError):
        select_candidates(plan, S, Z, 0.0)


def test_window_crosses():
    assert window_crosses((39, 41), 40, 0.01)
    assert not window_crosses((40, 42), 40, 0.01)
    assert not window_crosses((38, 40.004), 40, 0.01)


@pytest.mark.parametrize("name", sorted(BENCHMARK_SCHEDULES))
def test_oracle_screen_argmax_contains_change(trajectories, name):
    from regimeshift.config import preset
    cfg = preset(f"{name}-full")
    plan = cfg.plan(cfg.horizon())
    floors = oracle_screen(trajectories[name], plan=plan)
    a, b = plan.windows[int(np.argmax(floors))]
    assert any(a < t < b for t in BENCHMARK_SCHEDULES[name].breakpoints)
    for (a, b), f in zip(plan.windows, floors):
        if not any(window_crosses((a, b), t, trajectories[name].dt)
                   for t in BENCHMARK_SCHEDULES[name].breakpoints):
            assert f <= 1e-10


def test_run_screen_worker_invariance(malthus_data, tmp_path):
    cfg = TrainConfig(iterations=150, width=8, hidden_layers=2, median_window=50)
    plan = build_windows(34, 46, 2, 1)
    one = run_screen(malthus_data, "malthus", plan, cfg, workers=1, seed=3)
    many = run_screen(malthus_data, "malthus", plan, cfg, workers=8, seed=3)
    assert one.to_dict() == many.to_dict()
    one.to_json(tmp_path / "s.json")
    assert ScreenReport.from_json(tmp_path / "s.json").to_dict() == one.to_dict()


def test_run_screen_rejects_plan_outside_data(malthus_data):
    with pytest.raises(ConfigError):
        run_screen(malthus_data, "malthus", build_windows(90, 102, 2, 1),
                   TrainConfig(iterations=100, median_window=10))
