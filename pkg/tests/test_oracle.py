import dataclasses

import numpy as np
import pytest

from conftest import benchmark_trajectory
from regimeshift.config import preset
from regimeshift.dynamics import BENCHMARK_SCHEDULES, information_matrix
from regimeshift.errors import DomainError
from regimeshift.oracle import (certify_plan, certify_window, post_change_check, residual_at,
                                residual_floor, theorem2_bound, weighted_avg_theta,
                                window_pieces, wls_theta, write_certificates)

NAMES = sorted(BENCHMARK_SCHEDULES)


def plan_of(name):
    cfg = preset(f"{name}-full")
    return cfg.plan(cfg.horizon())


def test_weighted_average_examples():
    np.testing.assert_allclose(weighted_avg_theta(1, 1, [0.1, 2], [0.05, 4]), [0.075, 3])
    np.testing.assert_allclose(weighted_avg_theta(2, 0, [0.1], [0.05]), [0.1])
    np.testing.assert_allclose(weighted_avg_theta(1, 3, [0.0], [4.0]), [3.0])
    with pytest.raises(DomainError):
        weighted_avg_theta(0, 0, [1.0], [2.0])


def test_theorem2_bound_examples(rng):
    assert theorem2_bound(1, 1, [0.05], 2).full == pytest.approx(0.0025)
    assert theorem2_bound(1, 3, [0.0, 0.0], 2).full == 0.0
    for _ in range(100):
        a, b, al = rng.uniform(0, 3, 2).tolist() + [rng.uniform(0.1, 5)]
        bd = theorem2_bound(a, b, rng.normal(size=3), al)
        assert bd.simplified <= bd.full * (1 + 1e-15)
    with pytest.raises(DomainError):
        theorem2_bound(0, 0, [1.0], 1.0)
    with pytest.raises(DomainError):
        theorem2_bound(1, 1, [1.0], 0.0)


def test_wls_single_regime(trajectories):
    for name in NAMES:
        tr = trajectories[name]
        sched = BENCHMARK_SCHEDULES[name]
        a, b = (1.0, 3.0) if name != "lorenz" else (1.0, 1.2)
        np.testing.assert_allclose(wls_theta((a, b), tr), sched.regimes[0], rtol=1e-8, atol=1e-10)
        assert residual_floor((a, b), tr) <= 1e-10


def test_wls_crossing_malthus(trajectories):
    tr = trajectories["malthus"]
    th = wls_theta((39, 41), tr)[0]
    assert 0.05 < th < 0.1
    # the state barely changes over the window, so G is nearly constant and the
    # information-weighted mean is close to the length-weighted mean
    assert th == pytest.approx(weighted_avg_theta(1, 1, [0.1], [0.05])[0], rel=0.05)


def test_floor_equals_quadratic_form(trajectories):
    for name in NAMES:
        tr = trajectories[name]
        for w in plan_of(name).windows:
            pieces = window_pieces(w, tr)
            if len(pieces) < 2:
                continue
            th = wls_theta(w, tr)
            q = 0.0
            for p in pieces:
                M = information_matrix(tr.system, tr, (p.a, p.b)).M
                d = p.theta - th
                q += d @ M @ d
            assert residual_floor(w, tr) == pytest.approx(q, rel=1e-8)


def test_floor_scales_with_G_squared(trajectories):
    tr = trajectories["malthus"]
    big = dataclasses.replace(tr, states=2.0 * tr.states)
    assert residual_floor((39, 41), big) == pytest.approx(4 * residual_floor((39, 41), tr), rel=1e-10)


@pytest.mark.parametrize("name", NAMES)
def test_floor_optimality(trajectories, rng, name):
    tr = trajectories[name]
    plan = plan_of(name)
    crossing = [w for w in plan.windows if len(window_pieces(w, tr)) > 1]
    picks = crossing + [plan.windows[i] for i in rng.choice(len(plan), 3, replace=False)]
    for w in picks:
        floor = residual_floor(w, tr)
        th = wls_theta(w, tr)
        for _ in range(200):
            probe = th + rng.normal(scale=0.2 * (np.abs(th) + 0.05))
            assert residual_at(w, tr, probe) >= floor - 1e-9


@pytest.mark.parametrize("name", NAMES)
def test_certificates_pass_on_default_plan(trajectories, name, tmp_path):
    certs = certify_plan(plan_of(name).windows, trajectories[name])
    assert all(c.passed for c in certs)
    assert sum(c.crossing for c in certs) >= len(BENCHMARK_SCHEDULES[name].breakpoints)
    write_certificates(certs, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().count("\n") == len(certs) + 1


def test_edge_window_is_non_crossing(trajectories):
    tr = trajectories["malthus"]
    c = certify_window((38.0, 40.0), tr)
    assert not c.crossing and c.passed
    c = certify_window((40.0, 42.0), tr)
    assert not c.crossing and c.passed


def test_post_change_examples(trajectories):
    tr = trajectories["malthus"]
    res, gp, ok = post_change_check((45, 55), tr, theta_tilde=[0.05])
    assert res == pytest.approx(0.0, abs=1e-12) and ok
    chk = post_change_check((45, 55), tr, theta_tilde=[0.1])
    M = information_matrix(tr.system, tr, (45, 55)).M[0, 0]
    assert chk.residual_norm ** 2 == pytest.approx(0.05 ** 2 * M, rel=1e-10)
    assert chk.passed
    lz = trajectories["lorenz"]
    assert post_change_check((10, 12), lz, theta_tilde=BENCHMARK_SCHEDULES["lorenz"].regimes[0]).passed
    with pytest.raises(DomainError):
        post_change_check((39, 41), tr, theta_tilde=[0.1])


@pytest.mark.parametrize("name", NAMES)
def test_quadrature_consistency(trajectories, name):
    coarse = trajectories[name]
    fine = benchmark_trajectory(name, coarse.dt / 2)
    for w in plan_of(name).windows:
        f1, f2 = residual_floor(w, coarse), residual_floor(w, fine)
        if len(window_pieces(w, coarse)) > 1:
            assert abs(f1 - f2) <= 0.01 * f2
        else:
            assert max(f1, f2) <= 1e-10
