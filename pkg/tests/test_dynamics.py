import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimeshift.dynamics import (BENCHMARK_SCHEDULES, SYSTEMS, RegimeSchedule, alpha_estimate,
                                  eval_affine_parts, eval_field, get_system, information_matrix,
                                  theta_at)
from regimeshift.errors import DomainError, SpecificationError
from regimeshift.simulate import Trajectory


def const_traj(c, t0=0.0, T=10.0, dt=0.01):
    times = np.round(np.arange(t0, T + dt / 2, dt), 12)
    sched = RegimeSchedule((t0, T), (), ((0.1,),))
    return Trajectory(times, np.full((len(times), 1), c), get_system("malthus"), sched, (c,), dt)


def test_dimensions():
    dims = {n: (s.state_dim, s.param_dim) for n, s in SYSTEMS.items()}
    assert dims == {"malthus": (1, 1), "logistic": (1, 1), "vanderpol": (2, 1),
                    "lotka_volterra": (2, 4), "lorenz": (3, 3)}


def test_eval_field_examples():
    assert eval_field("malthus", 0.0, [2.0], [0.1]) == pytest.approx([0.2])
    np.testing.assert_allclose(eval_field("lorenz", 0.0, [1, 1, 1], [10, 28, 8 / 3]),
                               [0, 26, -5 / 3], atol=1e-14)
    np.testing.assert_allclose(eval_field("lotka_volterra", 0.0, [1, 1], [2, 1, 2, 1]), [1, -1])


def test_eval_field_dimension_mismatch():
    with pytest.raises(SpecificationError):
        eval_field("malthus", 0.0, [1.0, 2.0], [0.1])
    with pytest.raises(SpecificationError):
        eval_field("lorenz", 0.0, [1, 1, 1], [1, 2])


def test_affine_parts_examples():
    p = eval_affine_parts("malthus", 0.0, [3.0])
    np.testing.assert_array_equal(p.G, [[3.0]])
    np.testing.assert_array_equal(p.b, [0.0])
    p = eval_affine_parts("vanderpol", 0.0, [2.0, 1.0])
    np.testing.assert_allclose(p.G, [[0.0], [-3.0]])
    np.testing.assert_allclose(p.b, [1.0, -2.0])
    p = eval_affine_parts("lorenz", 0.0, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(p.G, [[1, 0, 0], [0, 1, 0], [0, 0, -3]])
    np.testing.assert_allclose(p.b, [0, -5, 2])


@settings(max_examples=200, deadline=None)
@given(name=st.sampled_from(sorted(SYSTEMS)), seed=st.integers(0, 2**31 - 1))
def test_affine_consistency(name, seed):
    sp = SYSTEMS[name]
    r = np.random.default_rng(seed)
    x = r.uniform(-5, 5, sp.state_dim)
    th = r.uniform(-5, 5, sp.param_dim)
    p = eval_affine_parts(sp, 0.0, x)
    f = eval_field(sp, 0.0, x, th)
    assert np.max(np.abs(f - (p.G @ th + p.b))) <= 1e-12 * max(1.0, np.max(np.abs(f)))


def test_theta_at():
    vdp = BENCHMARK_SCHEDULES["vanderpol"]
    assert theta_at(vdp, 50.0) == pytest.approx([0.1])
    assert theta_at(vdp, 40.0) == pytest.approx([0.1])
    assert theta_at(vdp, 40.0 - 1e-9) == pytest.approx([1.0])
    np.testing.assert_allclose(theta_at(BENCHMARK_SCHEDULES["lorenz"], 0.0), [10, 28, 8 / 3])
    with pytest.raises(DomainError):
        theta_at(vdp, 100.5)


def test_schedule_validation():
    with pytest.raises(DomainError):
        RegimeSchedule((0, 10), (5, 3), ((1,), (2,), (3,)))
    with pytest.raises(SpecificationError):
        RegimeSchedule((0, 10), (5,), ((1,),))
    with pytest.raises(SpecificationError):
        RegimeSchedule((0, 10), (5,), ((1,), (1,)))
    RegimeSchedule((0, 10), (5,), ((1,), (1,)), allow_equal_adjacent=True)


def test_information_matrix_examples():
    tr = const_traj(3.0)
    assert information_matrix("malthus", tr, (2.0, 5.0)).M[0, 0] == pytest.approx(9 * 3.0)
    np.testing.assert_array_equal(information_matrix("malthus", tr, (4.0, 4.0)).M, [[0.0]])
    assert alpha_estimate("malthus", tr, [(1, 2), (3, 7)]) == pytest.approx(9.0)
    with pytest.raises(DomainError):
        alpha_estimate("malthus", tr, [(1, 1)])
    with pytest.raises(DomainError):
        information_matrix("malthus", tr, (5.0, 20.0))


def test_information_matrix_closed_form(trajectories):
    from regimeshift.simulate import integrate
    tr = integrate("malthus", RegimeSchedule((0, 2), (), ((0.1,),)), (1.0,), 0.001)
    M = information_matrix("malthus", tr, (0.0, 1.0)).M[0, 0]
    assert abs(M - (math.exp(0.2) - 1) / 0.2) <= 1e-6
    tr = trajectories["malthus"]
    info = information_matrix("malthus", tr, (39.0, 41.0))
    assert info.lambda_min > 0
    assert alpha_estimate("malthus", tr, [(39.0, 41.0)]) == pytest.approx(
        np.linalg.eigvalsh(info.M)[0] / 2.0)


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_information_matrix_monotone(trajectories, name):
    tr = trajectories[name]
    T = tr.times[-1]
    a = float(tr.times[len(tr.times) // 3])
    b1 = float(tr.times[len(tr.times) // 3 + len(tr.times) // 20])
    b2 = float(tr.times[len(tr.times) // 3 + len(tr.times) // 10])
    assert b2 <= T
    M1 = information_matrix(name, tr, (a, b1))
    M2 = information_matrix(name, tr, (a, b2))
    assert np.allclose(M1.M, M1.M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M1.M)[0] >= -1e-10
    assert M1.lambda_min <= M2.lambda_min + 1e-10
    assert np.linalg.eigvalsh(M2.M - M1.M)[0] >= -1e-8 * np.max(np.abs(M2.M))
