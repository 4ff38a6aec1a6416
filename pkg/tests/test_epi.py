import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import symbolic_expm_entries, rk4_linear
from wwrt.epi import (
    AlphaSchedule,
    CompartmentState,
    MatrixExponential,
    RateParams,
    RtTrajectory,
    build_eirr_generator,
    build_generator,
    effective_r,
    propagate_linear,
    seir_effective_r,
    solve_nonlinear,
    solve_piecewise,
)
from wwrt.errors import InvalidParameterError, NumericalFailure, ValidationError

BASE = RateParams(gamma=0.25, nu=1 / 7, eta=1 / 18)
rates = st.floats(0.02, 1.0)


def eirr(E, I, R1, R2=0.0):
    return CompartmentState("EIRR", [E, I, R1, R2])


class TestGenerator:
    def test_entries(self):
        V = build_eirr_generator(0.2, BASE)
        assert V[0, 0] == -0.25
        assert V[0, 1] == 0.2
        assert V[3, 2] == pytest.approx(1 / 18)
        # only the I column leaks: new infections enter from outside the system
        np.testing.assert_allclose(V.sum(axis=0), [0.0, 0.2, 0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(build_eirr_generator(0.0, BASE).sum(axis=0), 0.0, atol=1e-15)

    @given(rates, rates, rates, rates)
    def test_trace(self, alpha, g, n, e):
        V = build_eirr_generator(alpha, RateParams(g, n, e))
        assert np.trace(V) == pytest.approx(-(g + n + e))

    def test_critical_threshold(self):
        nu = BASE.nu
        block = build_eirr_generator(nu, BASE)[:2, :2]
        assert max(np.linalg.eigvals(block).real) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("bad", [dict(alpha=-0.1), dict(gamma=0.0), dict(nu=-1.0), dict(eta=np.inf)])
    def test_invalid(self, bad):
        kw = dict(alpha=0.2, gamma=0.25, nu=0.14, eta=0.05) | bad
        with pytest.raises(InvalidParameterError):
            build_eirr_generator(kw["alpha"], RateParams(kw["gamma"], kw["nu"], kw["eta"]))

    def test_alpha_zero_allowed(self):
        V = build_eirr_generator(0.0, BASE)
        assert V[0, 1] == 0.0

    def test_c_row(self):
        V = build_generator(0.3, BASE, "EIR-with-C")
        assert V[3, 0] == BASE.gamma
        np.testing.assert_allclose(V[:3].sum(axis=0), [0.0, 0.3, 0.0, 0.0], atol=1e-15)


class TestPropagateLinear:
    def test_zero_dt_is_identity(self):
        s = eirr(225, 489, 2075, 1)
        out = propagate_linear(s, build_eirr_generator(0.3, BASE), 0.0)
        np.testing.assert_array_equal(out.values, s.values)

    def test_alpha_zero_latent_decay(self):
        s = eirr(100.0, 0.0, 0.0)
        t = 3.7
        out = propagate_linear(s, build_eirr_generator(0.0, BASE), t)
        assert out["E"] == pytest.approx(100 * np.exp(-BASE.gamma * t), rel=1e-12)

    def test_against_rk4(self):
        V = build_eirr_generator(0.3, BASE)
        s = eirr(225, 489, 2075, 1)
        out = propagate_linear(s, V, 1.0)
        ref = rk4_linear(V, s.values, 1.0)
        np.testing.assert_allclose(out.values, ref, rtol=1e-6)

    def test_errors(self):
        V = build_eirr_generator(0.3, BASE)
        with pytest.raises(ValidationError):
            propagate_linear(eirr(1, 1, 1), V, -1.0)
        with pytest.raises(ValidationError):
            eirr(np.nan, 1, 1)
        with pytest.raises(ValidationError):
            propagate_linear(CompartmentState("EIR-with-C", [1, 1, 1, 0]), np.eye(5), 1.0)

    def test_conservation_random(self):
        # E+I+R1+R2 grows by alpha * integral(I); subtracting the cumulative
        # immigration (an extra bookkeeping row) leaves an exact invariant.
        rng = np.random.default_rng(11)
        worst_closed = worst_open = 0.0
        for _ in range(1000):
            alpha, g, n, e = rng.uniform(0.01, 1.0, size=4)
            dt = rng.uniform(0, 14)
            x0 = rng.uniform(0, 5000, size=4)
            params = RateParams(g, n, e)
            closed = propagate_linear(eirr(*x0), build_eirr_generator(0.0, params), dt)
            worst_closed = max(worst_closed, abs(closed.total() - x0.sum()) / x0.sum())
            V = np.zeros((5, 5))
            V[:4, :4] = build_eirr_generator(alpha, params)
            V[4, 1] = alpha
            x = MatrixExponential(V)(dt) @ np.append(x0, 0.0)
            worst_open = max(worst_open, abs(x[:4].sum() - x[4] - x0.sum()) / x[:4].sum())
        assert worst_closed <= 1e-10
        assert worst_open <= 1e-10

    @given(rates, rates, rates, rates, st.floats(0, 10), st.floats(0, 10))
    @settings(max_examples=200)
    def test_semigroup(self, alpha, g, n, e, d1, d2):
        V = build_eirr_generator(alpha, RateParams(g, n, e))
        s = eirr(225, 489, 2075, 1)
        two = propagate_linear(propagate_linear(s, V, d1), V, d2)
        one = propagate_linear(s, V, d1 + d2)
        np.testing.assert_allclose(two.values, one.values, rtol=1e-9, atol=1e-9 * s.total())

    @given(rates, rates, rates, rates, st.floats(0, 30))
    @settings(max_examples=200)
    def test_nonnegative(self, alpha, g, n, e, dt):
        out = propagate_linear(eirr(10, 0, 0, 0), build_eirr_generator(alpha, RateParams(g, n, e)), dt)
        assert np.all(out.values >= 0)

    def test_near_degenerate_uses_pade(self):
        # alpha = 0 with gamma == nu collapses two eigenvalues
        V = build_eirr_generator(0.0, RateParams(0.2, 0.2, 0.05))
        mexp = MatrixExponential(V)
        assert not mexp.uses_eigendecomposition
        ref = rk4_linear(V, [10.0, 5.0, 1.0, 0.0], 2.0)
        np.testing.assert_allclose(mexp(2.0) @ [10.0, 5.0, 1.0, 0.0], ref, rtol=1e-9)

    def test_symbolic_formula(self):
        rng = np.random.default_rng(3)
        for _ in range(3):
            alpha, g, n, e = rng.uniform(0.05, 0.6, size=4)
            t = rng.uniform(0.5, 7)
            numeric = MatrixExponential(build_eirr_generator(alpha, RateParams(g, n, e)))(t)
            symbolic = symbolic_expm_entries(alpha, g, n, e, t)
            mask = np.abs(numeric) > 0
            np.testing.assert_allclose(numeric[mask], symbolic[mask], rtol=1e-6)


class TestSolvePiecewise:
    def test_single_segment(self):
        s = eirr(225, 489, 2075, 1)
        sched = AlphaSchedule([0.0], [0.3])
        traj = solve_piecewise(s, sched, BASE, [0.0, 2.5])
        direct = propagate_linear(s, build_eirr_generator(0.3, BASE), 2.5)
        np.testing.assert_allclose(traj.values[-1], direct.values, rtol=1e-13)

    def test_two_equal_segments(self):
        s = eirr(225, 489, 2075, 1)
        two = solve_piecewise(s, AlphaSchedule([0.0, 7.0], [0.3, 0.3]), BASE, [0.0, 7.0, 14.0])
        one = solve_piecewise(s, AlphaSchedule([0.0], [0.3]), BASE, [0.0, 14.0])
        np.testing.assert_allclose(two.values[-1], one.values[-1], rtol=1e-9)

    def test_weekly_schedule_against_rk4(self):
        rng = np.random.default_rng(5)
        alphas = BASE.nu * np.exp(np.cumsum(rng.normal(0, 0.1, 19)))
        sched = AlphaSchedule(7.0 * np.arange(19), alphas)
        s = eirr(225, 489, 2075, 1)
        traj = solve_piecewise(s, sched, BASE, np.arange(0, 134.0))
        x = s.values
        for day in range(133):
            x = rk4_linear(build_eirr_generator(alphas[day // 7], BASE), x, 1.0)
            np.testing.assert_allclose(traj.values[day + 1], x, rtol=1e-6)

    def test_grid_must_refine_changepoints(self):
        with pytest.raises(ValidationError):
            solve_piecewise(eirr(1, 1, 1), AlphaSchedule([0.0, 3.5], [0.2, 0.3]), BASE, np.arange(8.0))

    def test_cumulative_incidence_variant(self):
        s = CompartmentState("EIR-with-C", [50, 80, 0, 0])
        traj = solve_piecewise(s, AlphaSchedule([0.0, 7.0], [0.4, 0.1]), BASE, np.arange(0, 15.0, 0.5))
        assert np.all(np.diff(traj["C"]) >= 0)
        # C counts E->I transitions, so C(t) = E0 + I0... - (E(t) + I(t)) + C-independent terms
        V = build_generator(0.4, BASE, "EIR-with-C")
        np.testing.assert_allclose(traj.values[14], rk4_linear(V, s.values, 7.0), rtol=1e-6)

    def test_eirr_with_c_matches_eirr(self):
        base = eirr(20, 40, 60, 0)
        withc = CompartmentState("EIRR-with-C", [20, 40, 60, 0, 0])
        sched = AlphaSchedule([0.0, 7.0], [0.3, 0.2])
        a = solve_piecewise(base, sched, BASE, np.arange(15.0))
        b = solve_piecewise(withc, sched, BASE, np.arange(15.0))
        np.testing.assert_allclose(a.values, b.values[:, :4], rtol=1e-12)
        assert np.all(np.diff(b["C"]) >= 0)


class TestSolveNonlinear:
    def seirr(self, S, E, I, R1=0.0, R2=0.0):
        return CompartmentState("SEIRR", [S, E, I, R1, R2])

    def test_transmission_off(self):
        traj = solve_nonlinear(self.seirr(900, 50, 0), RtTrajectory([0.0], [1e-12]), BASE, 950, np.arange(11.0))
        np.testing.assert_allclose(traj["S"], 900, rtol=1e-9)
        np.testing.assert_allclose(traj["E"], 50 * np.exp(-BASE.gamma * traj.times), rtol=1e-6)

    def test_disease_free_equilibrium(self):
        traj = solve_nonlinear(self.seirr(1000, 0, 0), RtTrajectory([0.0], [2.0]), BASE, 1000, np.arange(30.0))
        np.testing.assert_array_equal(traj.values, np.tile(traj.values[0], (30, 1)))

    def test_early_time_matches_linear_model(self):
        N = 1e7
        r0 = 2.0
        s = self.seirr(N - 150, 50, 100)
        traj = solve_nonlinear(s, RtTrajectory([0.0], [r0]), BASE, N, np.arange(6.0))
        lin = solve_piecewise(eirr(50, 100, 0), AlphaSchedule([0.0], [r0 * BASE.nu]), BASE, np.arange(6.0))
        np.testing.assert_allclose(traj["I"], lin["I"], rtol=0.01)

    def test_monotone_s_and_c(self):
        s = CompartmentState("SEIR-with-C", [9900, 50, 50, 0, 0])
        traj = solve_nonlinear(s, RtTrajectory([0.0, 20.0], [3.0, 1.2]), BASE, 10000, np.arange(60.0))
        assert np.all(np.diff(traj["S"]) <= 0)
        assert np.all(np.diff(traj["C"]) >= 0)
        np.testing.assert_allclose(traj.values[:, :4].sum(axis=1), 10000, rtol=1e-12)

    def test_rejects_linear_variant(self):
        with pytest.raises(ValidationError):
            solve_nonlinear(eirr(1, 1, 1), RtTrajectory([0.0], [1.0]), BASE, 10, [0.0, 1.0])

    def test_negative_state_is_numerical_failure(self):
        # absurd rates with a coarse step blow RK4 up
        fast = RateParams(gamma=200.0, nu=200.0, eta=200.0)
        with pytest.raises(NumericalFailure):
            solve_nonlinear(self.seirr(10, 5, 5), RtTrajectory([0.0], [1.0]), fast, 20, [0.0, 1.0])


class TestEffectiveR:
    def test_threshold(self):
        assert effective_r(BASE.nu, BASE.nu) == 1.0

    def test_arithmetic(self):
        assert effective_r(2 / 7, 1 / 7) == pytest.approx(2.0)
        assert seir_effective_r(2.5 / 7, 1 / 7, 60, 100) == pytest.approx(1.5)

    def test_errors(self):
        with pytest.raises(InvalidParameterError):
            effective_r(0.2, 0.0)
        with pytest.raises(InvalidParameterError):
            seir_effective_r(0.2, 0.1, 120, 100)


def test_rt_trajectory_validation():
    with pytest.raises(ValidationError):
        RtTrajectory([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(InvalidParameterError):
        RtTrajectory([0.0, 7.0], [1.0, 0.0])
    traj = RtTrajectory([0.0, 7.0], [0.9, 2.5])
    np.testing.assert_array_equal(traj.value_at(np.array([-1.0, 0.0, 6.99, 7.0, 100.0])), [0.9, 0.9, 0.9, 2.5, 2.5])
