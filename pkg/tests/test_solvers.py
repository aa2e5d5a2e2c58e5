import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from dprom.exceptions import ConfigurationError, ConvergenceError
from dprom.models import ReducedModel
from dprom.solvers import (HarmonicBalance, backbone, continue_frf, newmark_transient,
                           newton_static, shooting_oracle, solve_hb)
from dprom.solvers import continuation
from dprom.solvers.hb import linear_frf
from dprom.solvers.transient import harmonic_forcing

GAMMA = 0.5


def duffing(gamma=GAMMA, c=0.0, k2=0.0):
    """``q'' + c q' + q + k2 q^2 + gamma q^3``."""
    return ReducedModel.polynomial([[1.0]], [[1.0]], [[[k2]]], [[[[gamma]]]],
                                   C=[[c]] if c else None)


def duffing_period(A, gamma=GAMMA):
    """Exact period of ``q'' + q + gamma q^3 = 0`` with maximum displacement ``A``."""
    k = 0.5 * gamma * A * A
    return 4 * quad(lambda th: 1 / np.sqrt(1 + k * (1 + np.sin(th) ** 2)), 0, np.pi / 2)[0]


def two_dof(rng):
    m = 2
    M = np.diag([1.0, 1.5])
    K2 = np.array([[2.0, -0.5], [-0.5, 3.0]])
    K3 = 0.1 * rng.standard_normal((m, m, m))
    K4 = 0.2 * np.abs(rng.standard_normal((m, m, m, m)))
    return ReducedModel.polynomial(M, K2, K3, K4, C=0.02 * K2)


class TestHarmonicBalance:
    def test_linear_model_matches_closed_form(self, rng):
        model = ReducedModel.polynomial(np.eye(2), np.diag([1.0, 4.0]), C=0.05 * np.eye(2))
        hb = HarmonicBalance(model, 3)
        F = np.array([1.0, -0.3])
        c, _, _ = solve_hb(hb, 1.1, hb.forcing(F))
        a1, b1 = linear_frf(model, 1.1, F)
        X = hb.split(c)
        np.testing.assert_allclose(X[1], a1, atol=1e-12)
        np.testing.assert_allclose(X[2], b1, atol=1e-12)
        np.testing.assert_allclose(X[3:], 0.0, atol=1e-12)

    def test_single_harmonic_duffing_amplitude_equations(self):
        c, F, Om = 0.05, 0.2, 0.7
        hb = HarmonicBalance(duffing(c=c), 1, n_samples=5)
        x, _, _ = solve_hb(hb, Om, hb.forcing([F]))
        _, a, b = x
        A2 = a * a + b * b
        k = 1 - Om ** 2 + 0.75 * GAMMA * A2
        np.testing.assert_allclose([k * a + c * Om * b, k * b - c * Om * a], [F, 0.0],
                                   atol=1e-12)

    def test_default_samples_alias_the_cubic_term(self):
        # 3H + 1 samples fold the third harmonic of q^3 onto the first when H = 1
        model = duffing(c=0.05)
        a = []
        for ns in (None, 5):
            hb = HarmonicBalance(model, 1, n_samples=ns)
            a.append(solve_hb(hb, 0.7, hb.forcing([0.4]))[0])
        assert np.abs(a[0] - a[1]).max() > 1e-3

    def test_jacobians_match_finite_differences(self, rng):
        model = two_dof(rng)
        hb = HarmonicBalance(model, 3)
        c = 0.3 * rng.standard_normal(hb.n_unknowns)
        Om, f = 1.3, hb.forcing(np.array([0.1, 0.0]))
        R, J, dR = hb.residual(c, Om, f)
        h = 1e-6
        Jfd = np.column_stack([(hb.residual(c + h * e, Om, f, False)[0]
                                - hb.residual(c - h * e, Om, f, False)[0]) / (2 * h)
                               for e in np.eye(hb.n_unknowns)])
        np.testing.assert_allclose(J, Jfd, atol=1e-7 * np.abs(J).max())
        dfd = (hb.residual(c, Om + h, f, False)[0] - hb.residual(c, Om - h, f, False)[0]) / (2 * h)
        np.testing.assert_allclose(dR, dfd, atol=1e-7 * np.abs(dR).max())

    def test_synthesis_inverts_projection(self, rng):
        hb = HarmonicBalance(two_dof(rng), 4)
        c = rng.standard_normal(hb.n_unknowns)
        q = hb.synthesize(c)
        np.testing.assert_allclose((hb.P @ q).reshape(-1), c, atol=1e-13)

    @pytest.mark.parametrize("H,ns", [(0, None), (3, 6)])
    def test_invalid_truncation(self, H, ns):
        with pytest.raises(ConfigurationError):
            HarmonicBalance(duffing(), H, ns)


class TestContinuation:
    def test_frf_points_satisfy_amplitude_equations(self):
        c, F = 0.05, 0.1
        sol = continue_frf(duffing(c=c), 1, [F], (0.8, 1.6), n_samples=5)
        Om = sol.Omega
        a, b = sol.harmonic(1)
        a, b = a[:, 0], b[:, 0]
        k = 1 - Om ** 2 + 0.75 * GAMMA * (a * a + b * b)
        np.testing.assert_allclose(k * a + c * Om * b, F, atol=1e-10)
        np.testing.assert_allclose(k * b - c * Om * a, 0.0, atol=1e-10)
        assert Om[-1] >= 1.6 and sol.meta["truncated"] is None
        # hardening: the branch folds back past the peak
        assert np.any(np.diff(Om) < 0)
        assert sol.peak()[0] > 1.05

    def test_truncation_is_reported(self, monkeypatch):
        monkeypatch.setattr(continuation, "MAX_CORRECTOR_ITER", 0)
        with pytest.warns(RuntimeWarning, match="truncated"):
            sol = continue_frf(duffing(c=0.05), 1, [0.1], (0.8, 1.6), ds=0.01, ds_min=0.01)
        assert sol.meta["truncated"] and len(sol) == 1

    def test_backbone_matches_exact_period(self):
        sol = backbone(duffing(), 11, (0.05, 1.5), n_samples=45, n_points=10)
        X = sol.coeffs.reshape(len(sol), 23, 1)[:, :, 0]
        q_max = X[:, 0] + X[:, 1::2].sum(axis=1)  # cosine series at t = 0
        exact = np.array([2 * np.pi / duffing_period(A) for A in q_max])
        np.testing.assert_allclose(sol.Omega, exact, rtol=1e-8)
        assert sol.meta["max_abs_delta"] < 1e-10

    def test_backbone_softening_with_quadratic_term(self):
        # q^2 terms soften: Omega ~ 1 + (3 g / 8 - 5 k2^2 / 12) A^2
        sol = backbone(duffing(gamma=0.0, k2=0.5), 5, (0.01, 0.1), n_samples=21, n_points=5)
        A = sol.probe_amplitude(1)[:, 0]
        np.testing.assert_allclose(sol.Omega - 1, -5 / 12 * 0.25 * A ** 2, rtol=0.05)

    def test_empty_ranges(self):
        with pytest.raises(ConfigurationError):
            continue_frf(duffing(), 1, [0.1], (1.0, 1.0))
        with pytest.raises(ConfigurationError):
            backbone(duffing(), 1, (0.1, 0.1))


class TestShooting:
    def test_forced_orbit_matches_hb(self):
        model = duffing(c=0.05)
        hb = HarmonicBalance(model, 7, 29)
        c, _, _ = solve_hb(hb, 0.9, hb.forcing([0.1]))
        q = hb.synthesize(c)[:, 0]
        orbit = shooting_oracle(model, 0.9, [q[0]], [0.0], F=[0.1], n_steps=400)
        X = hb.split(c)
        np.testing.assert_allclose(orbit.first_harmonic()[0], np.hypot(X[1], X[2])[0], rtol=1e-4)

    def test_autonomous_orbit_matches_exact_period(self):
        orbit = shooting_oracle(duffing(), 1.1, [1.0], [0.0], amplitude=1.0, n_steps=400)
        np.testing.assert_allclose(orbit.Omega, 2 * np.pi / duffing_period(1.0), rtol=1e-4)
        assert abs(orbit.delta) < 1e-8

    def test_needs_exactly_one_mode(self):
        with pytest.raises(ConfigurationError):
            shooting_oracle(duffing(), 1.0, [0.1])


class TestNewmark:
    def test_second_order_convergence(self):
        model = ReducedModel.polynomial([[1.0]], [[1.0]])
        err = []
        for dt in (0.02, 0.01):
            ts = newmark_transient(model, None, dt, 5.0, q0=[1.0])
            err.append(abs(ts.q[-1, 0] - np.cos(5.0)))
        np.testing.assert_allclose(np.log2(err[0] / err[1]), 2.0, atol=0.05)

    def test_energy_is_conserved_without_damping(self):
        model = duffing()
        ts = newmark_transient(model, None, 0.01, 30.0, q0=[1.0])
        q, v = ts.q[:, 0], ts.v[:, 0]
        E = 0.5 * v ** 2 + 0.5 * q ** 2 + 0.25 * GAMMA * q ** 4
        assert np.abs(E - E[0]).max() < 1e-4 * E[0]

    def test_forced_steady_state_matches_linear_response(self):
        model = ReducedModel.polynomial([[1.0]], [[1.0]], C=[[0.2]])
        Om = 0.8
        ts = newmark_transient(model, harmonic_forcing([1.0], Om), 2 * np.pi / Om / 100,
                               40 * 2 * np.pi / Om)
        a, b = ts.first_harmonic(Om, 5, ts.q)
        a1, b1 = linear_frf(model, Om, [1.0])
        np.testing.assert_allclose([a[0], b[0]], [a1[0], b1[0]], rtol=2e-3, atol=2e-3 * abs(a1[0]))

    def test_invalid_step(self):
        with pytest.raises(ConfigurationError):
            newmark_transient(duffing(), None, 0.0, 1.0)


class TestStatic:
    def test_duffing_equilibrium(self):
        sol = newton_static(duffing(), [2.0], load_steps=3)
        roots = np.roots([GAMMA, 0, 1, -2.0])
        np.testing.assert_allclose(sol.q[0], roots[np.abs(roots.imag) < 1e-12].real[0],
                                   rtol=1e-12)
        assert sol.residuals[-1] < 1e-10 * 2.0

    def test_stall_reports_residual(self):
        with pytest.raises(ConvergenceError) as exc:
            newton_static(duffing(gamma=50.0), [100.0], max_iter=2)
        assert exc.value.residual > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.0, 2.0))
def test_backbone_frequency_increases_with_hardening(A, gamma):
    # single-harmonic prediction with exact sampling: Omega^2 = 1 + 3/4 gamma A^2
    sol = backbone(duffing(gamma=gamma), 1, (A, 1.01 * A), n_samples=5, n_points=1)
    np.testing.assert_allclose(sol.Omega[0] ** 2, 1 + 0.75 * gamma * A * A, rtol=1e-8)
