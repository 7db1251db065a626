import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from minhopf.integrate import (
    FALLING,
    RISING,
    EventSpec,
    IntegratorConfig,
    StepLimitExceeded,
    Trajectory,
    concat,
    integral,
    integrate,
    integrate_variational,
    integrate_with_events,
    time_average,
    write_csv,
)
from minhopf.model import Params, vector_field

from .conftest import interior_states, params

P3 = Params(3.0, 1.0, 1.0)


def reference(p, s0, t_end, t_eval=None):
    sol = solve_ivp(
        lambda t, u: vector_field(p, u), (0.0, t_end), s0, method="DOP853",
        rtol=1e-13, atol=1e-15, t_eval=t_eval,
    )
    assert sol.success
    return sol


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            IntegratorConfig(rel_tol=0)
        with pytest.raises(ValueError):
            IntegratorConfig(max_step=-1)
        with pytest.raises(ValueError):
            IntegratorConfig(max_steps=0)

    def test_with_(self):
        cfg = IntegratorConfig().with_(rel_tol=1e-6)
        assert cfg.rel_tol == 1e-6 and cfg.abs_tol == 1e-12


@given(params(k_lo=-2, k_hi=5), interior_states(hi=10.0))
@settings(max_examples=25)
def test_matches_scipy_reference(p, s0):
    traj = integrate(p, s0, 10.0)
    ref = reference(p, s0, 10.0)
    scale = max(1.0, float(np.max(np.abs(ref.y))))
    assert np.allclose(traj.final, ref.y[:, -1], rtol=0, atol=1e-7 * scale)


@given(st.floats(-3, 3), st.floats(0.2, 4), st.floats(0.2, 4), st.floats(0, 5), st.floats(0, 5))
@settings(max_examples=30)
def test_invariant_face_x0_is_linear(k, k3, k5, y0, z0):
    # on x = 0 the flow reduces to a linear system with a closed-form solution
    p = Params(k, k3, k5)
    t = 3.0
    traj = integrate(p, [0.0, y0, z0], t)
    m = np.array([[-k3, k3], [0.0, -k5]])
    exact = expm(m * t) @ np.array([y0, z0])
    assert traj.final[0] == 0.0
    assert np.allclose(traj.final[1:], exact, rtol=1e-9, atol=1e-11)


def test_dense_output_between_nodes():
    s0 = np.array([1.0, 2.0, 0.5])
    traj = integrate(P3, s0, 20.0)
    t_eval = np.linspace(0, 20, 301)
    ref = reference(P3, s0, 20.0, t_eval)
    got = traj(t_eval)
    assert np.max(np.abs(got - ref.y.T)) < 1e-7
    # node times return the stored samples exactly
    assert np.array_equal(traj(traj.t[5]), traj.states[5])
    with pytest.raises(ValueError):
        traj(21.0)


@given(params(k_lo=-2, k_hi=5), interior_states(hi=10.0))
@settings(max_examples=25)
def test_nonnegative(p, s0):
    traj = integrate(p, s0, 30.0)
    assert np.all(traj.states >= 0.0)
    assert traj.diagnostics.n_steps == len(traj) - 1


def test_origin_is_fixed():
    traj = integrate(P3, [0.0, 0.0, 0.0], 50.0)
    assert np.array_equal(traj.final, np.zeros(3))


def test_zero_length_and_bad_input():
    traj = integrate(P3, [1, 1, 1], 0.0)
    assert len(traj) == 1 and np.array_equal(traj.final, [1, 1, 1])
    with pytest.raises(ValueError):
        integrate(P3, [math.nan, 1, 1], 1.0)
    with pytest.raises(ValueError):
        integrate(P3, [1, 1, 1], -1.0)


def test_step_limit():
    with pytest.raises(StepLimitExceeded):
        integrate(P3, [1, 2, 3], 1000.0, IntegratorConfig(max_steps=10))


def test_max_step_respected():
    traj = integrate(P3, [1, 2, 3], 10.0, IntegratorConfig(max_step=0.05))
    assert np.max(np.diff(traj.t)) <= 0.05 * (1 + 1e-12)


def test_reverse_then_forward_round_trip():
    # short enough that the backward orbit stays in the octant
    s0 = np.array([2.0, 1.0, 3.0])
    back, _ = integrate_with_events(P3, s0, 0.3, reverse=True)
    assert np.all(back.states > 0)
    fwd = integrate(P3, back.final, 0.3)
    assert np.allclose(fwd.final, s0, atol=1e-8)


def test_fundamental_matrix_matches_finite_differences():
    s0 = np.array([1.0, 2.0, 0.5])
    t = 4.0
    cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)
    traj, phi = integrate_variational(P3, s0, t, cfg)
    assert np.array_equal(traj.fundamental(), phi)
    fd = np.empty((3, 3))
    for j in range(3):
        h = 1e-6
        e = np.zeros(3)
        e[j] = h
        fd[:, j] = (integrate(P3, s0 + e, t, cfg).final - integrate(P3, s0 - e, t, cfg).final) / (2 * h)
    assert np.allclose(phi, fd, rtol=1e-6, atol=1e-6)
    assert np.allclose(traj.final, integrate(P3, s0, t, cfg).final, atol=1e-10)


def test_fundamental_matrix_determinant_is_liouville():
    # det Phi = exp(int tr Df) with tr Df = k - y - k3 - k5
    s0 = np.array([1.0, 2.0, 0.5])
    traj, phi = integrate_variational(P3, s0, 5.0, IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14))
    tr = (P3.k - P3.k3 - P3.k5) * 5.0 - integral(traj, "y")
    assert np.linalg.det(phi) == pytest.approx(math.exp(tr), rel=1e-8)


def test_plain_trajectory_has_no_fundamental():
    with pytest.raises(ValueError):
        integrate(P3, [1, 1, 1], 1.0).fundamental()


class TestEvents:
    def test_crossings_lie_on_section(self):
        ev = EventSpec.coordinate(1, 3.0, RISING)
        traj, evs = integrate_with_events(P3, [1.0, 2.0, 0.5], 60.0, events=[ev])
        assert len(evs) >= 5
        for e in evs:
            assert abs(e.state[1] - 3.0) < 1e-12
            assert vector_field(P3, e.state)[1] > 0
        times = [e.t for e in evs]
        assert times == sorted(times)
        assert traj.t1 == 60.0

    def test_matches_scipy_event_times(self):
        s0 = [1.0, 2.0, 0.5]
        _, evs = integrate_with_events(P3, s0, 30.0, events=[EventSpec.coordinate(1, 3.0, FALLING)])

        def g(t, u):
            return u[1] - 3.0

        g.direction = -1
        sol = solve_ivp(lambda t, u: vector_field(P3, u), (0, 30), s0, method="DOP853",
                        rtol=1e-13, atol=1e-15, events=g)
        assert np.allclose([e.t for e in evs], sol.t_events[0], atol=1e-8)

    def test_terminal_truncates(self):
        ev = EventSpec.coordinate(0, 10.0, RISING, terminal=True)
        traj, evs = integrate_with_events(P3, [1.0, 2.0, 0.5], 100.0, events=[ev])
        assert len(evs) == 1
        assert traj.t1 == pytest.approx(evs[0].t)
        assert traj.final[0] == pytest.approx(10.0, abs=1e-12)

    def test_start_on_section_not_reported(self):
        ev = EventSpec.coordinate(1, 3.0, RISING, terminal=True)
        s0 = np.array([18.45886503, 3.0, 8.26237877])
        _, evs = integrate_with_events(P3, s0, 20.0, events=[ev])
        assert evs and evs[0].t > 1.0

    def test_variational_events_carry_fundamental(self):
        ev = EventSpec.coordinate(1, 3.0, RISING, terminal=True)
        traj, phi, evs = integrate_variational(P3, [1.0, 2.0, 0.5], 50.0, events=[ev])
        assert evs[0].full.shape == (12,)
        assert np.allclose(evs[0].full[3:].reshape(3, 3), phi)

    def test_direction_validated(self):
        with pytest.raises(ValueError):
            EventSpec(lambda s: s[..., 0], "sideways")


class TestAverages:
    def test_component_integral_identity(self):
        # y' = k3 (z - y)  =>  int (z - y) = (y(T) - y(0)) / k3
        s0 = np.array([1.0, 2.0, 0.5])
        traj = integrate(P3, s0, 37.0)
        lhs = integral(traj, "z") - integral(traj, "y")
        assert lhs == pytest.approx((traj.final[1] - s0[1]) / P3.k3, abs=1e-8)

    def test_log_identity(self):
        # x'/x = k - y  =>  int y = k T - ln(x(T)/x(0))
        s0 = np.array([1.0, 2.0, 0.5])
        T = 25.0
        traj = integrate(P3, s0, T)
        assert integral(traj, 1) == pytest.approx(P3.k * T - math.log(traj.final[0] / s0[0]), abs=1e-7)

    def test_callable_agrees_with_component(self):
        traj = integrate(P3, [1.0, 2.0, 0.5], 20.0)
        a = integral(traj, "x", (3.0, 17.5))
        b = integral(traj, lambda ys: ys[:, 0], (3.0, 17.5))
        assert b == pytest.approx(a, rel=1e-5)

    def test_window_checks(self):
        traj = integrate(P3, [1, 1, 2], 5.0)
        with pytest.raises(ValueError):
            integral(traj, "x", (-1.0, 2.0))
        with pytest.raises(ValueError):
            time_average(traj, "x", (2.0, 2.0))

    def test_constant_at_equilibrium(self):
        traj = integrate(P3, [3.0, 3.0, 3.0], 10.0)
        assert time_average(traj, "y") == pytest.approx(3.0, abs=1e-12)


def test_concat():
    a = integrate(P3, [1, 2, 3], 5.0)
    b = integrate(P3, a.final, 9.0, t0=5.0)
    c = concat([a, b])
    assert c.t0 == 0.0 and c.t1 == 9.0
    assert np.allclose(c(7.0), b(7.0))
    with pytest.raises(ValueError):
        concat([a, integrate(P3, a.final, 9.0, t0=6.0)])


def test_trajectory_arrays_read_only():
    traj = integrate(P3, [1, 2, 3], 1.0)
    with pytest.raises(ValueError):
        traj.y[0, 0] = 5.0
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], np.zeros((2, 3)), np.zeros((1, 4, 3)))


def test_csv_format(tmp_path):
    traj = integrate(P3, [1, 2, 3], 1.0)
    text = traj.to_csv()
    lines = text.split("\n")
    assert lines[0] == "t,x,y,z"
    assert "\r" not in text and text.endswith("\n")
    row = [float(v) for v in lines[1].split(",")]
    assert row == [0.0, 1.0, 2.0, 3.0]
    last = [float(v) for v in lines[-2].split(",")]
    assert last[1:] == traj.final.tolist()  # 17 digits round-trip exactly
    path = tmp_path / "t.csv"
    traj.to_csv(path)
    assert path.read_text() == text
    buf = io.StringIO()
    write_csv(buf, [0.0], [[1.0, 2.0, 3.0]])
    assert buf.getvalue() == "t,x,y,z\n0,1,2,3\n"


class TestRegimeExamples:
    def test_decay_for_negative_k(self):
        traj = integrate(Params(-1, 1, 1), [1, 1, 1], 50.0)
        assert np.max(traj.final) < 1e-6

    def test_convergence_to_E(self):
        traj = integrate(Params(1, 1, 1), [2, 3, 4], 500.0)
        assert np.linalg.norm(traj.final - 1.0) < 1e-6

    @given(interior_states(lo=0.1, hi=10.0))
    @settings(max_examples=10)
    def test_window_average_bias_is_a_boundary_term(self, s0):
        # on the oscillatory attractor, window averages of y miss k exactly by
        # -ln(x(b)/x(a)) / (b - a); x and z pick up further boundary terms
        a, b = 500.0, 1500.0
        traj = integrate(P3, s0, b)
        xa, xb = traj(a), traj.final
        dev_y = time_average(traj, "y", (a, b)) - P3.k
        assert dev_y == pytest.approx(-math.log(xb[0] / xa[0]) / (b - a), abs=1e-9)
        dev_z = time_average(traj, "z", (a, b)) - P3.k
        assert dev_z == pytest.approx(dev_y + (xb[1] - xa[1]) / (P3.k3 * (b - a)), abs=1e-9)
