"""Integrator behaviour, the infection-free closed form, and rate fitting."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from waningsim.dynamics import (
    IntegrationError,
    convergence_rate,
    detect_equilibrium,
    infection_free_solution,
    integrate,
)
from waningsim.endemic import localize_endemic, refine_endemic
from waningsim.model import StateVector, build_general, build_last_only, epidemic_start
from waningsim.stability import endemic_spectrum


@pytest.fixture
def waning_chain():
    # no coverage anywhere: the infection-free closed form applies
    return build_general(3, (0.0, 0.5, 1.0, 2.0), 0.1, 0.02, 1.0, 0.0, np.zeros(4))


ENDEMIC_CFG = build_general(2, (1.5, 2.0, 4.0), 0.05, 0.3, 1.2, 2.0, (0.0, 0.1, 0.5))


class TestIntegrate:
    def test_zero_infection_matches_closed_form(self, waning_chain):
        rng = np.random.default_rng(51)
        s0 = rng.uniform(0.1, 1.0, 4)
        s0 /= s0.sum()
        y0 = np.concatenate([s0, [0.0]])
        grid = np.linspace(1.0, 80.0, 40)
        traj = integrate(waning_chain, y0, 80.0, t_eval=grid)
        closed = infection_free_solution(waning_chain)
        for t, state in zip(grid, traj.sample(grid)):
            assert np.max(np.abs(state[:-1] - closed.evaluate(s0, t))) < 1e-8
            assert state[-1] == 0.0

    def test_dfe_initial_state_is_stationary(self):
        cfg = build_general(2, (0.0, 1.0, 2.0), 0.3, 0.05, 2.0, 8.0, (0.0, 0.4, 0.0))
        y0 = np.array([0.0, 0.0, 1.0, 0.0])
        traj = integrate(cfg, y0, 50.0, t_eval=np.linspace(1, 50, 10))
        assert np.max(np.abs(traj.states - y0)) < 1e-12

    def test_terminal_prevalence_matches_refined_equilibrium(self):
        sol = refine_endemic(ENDEMIC_CFG)
        traj = integrate(
            ENDEMIC_CFG, epidemic_start(ENDEMIC_CFG), 2000.0, stop_at_equilibrium=True
        )
        assert traj.terminal_status == "converged_endemic"
        assert abs(traj.final_prevalence - sol.i_star) < 1e-7

    def test_conservation_and_positivity_along_trajectory(self):
        traj = integrate(ENDEMIC_CFG, epidemic_start(ENDEMIC_CFG), 300.0)
        assert traj.conservation_drift() < 1e-9
        assert np.min(traj.states) >= 0.0  # roundoff negatives are clamped

    def test_sample_times_hit_exactly(self):
        grid = np.array([0.3, 1.7, 2.0, 11.25])
        traj = integrate(ENDEMIC_CFG, epidemic_start(ENDEMIC_CFG), 20.0, t_eval=grid)
        for t in grid:
            assert t in traj.times
        assert traj.times[-1] == 20.0
        with pytest.raises(KeyError):
            traj.sample([0.31])

    def test_fixed_step_order_is_fifth(self, waning_chain):
        rng = np.random.default_rng(52)
        s0 = rng.uniform(0.1, 1.0, 4)
        s0 /= s0.sum()
        y0 = np.concatenate([s0, [0.0]])
        closed = infection_free_solution(waning_chain)
        ref = np.concatenate([closed.evaluate(s0, 8.0), [0.0]])
        errors = []
        for h in (0.5, 0.25):
            traj = integrate(waning_chain, y0, 8.0, fixed_step=h)
            errors.append(np.max(np.abs(traj.final_state - ref)))
        ratio = errors[0] / errors[1]
        assert 16 < ratio < 64  # nominal 2^5 = 32

    def test_stiff_budget_exhaustion_reports_time(self):
        # near its endemic point this config has a contraction rate ~1e6/yr,
        # which caps explicit steps at ~1e-6 years: stability-limited forever
        stiff = build_general(1, (1e6, 1e6), 0.0, 1.0, 1.0, 0.0, (0.0, 0.0))
        with pytest.raises(IntegrationError, match="stiff") as exc_info:
            integrate(stiff, epidemic_start(stiff), 1000.0, max_steps=2000)
        assert 0.0 <= exc_info.value.t_reached < 1000.0

    def test_deep_trough_negativity_is_retried_not_fatal(self):
        # interepidemic troughs push the prevalence to ~1e-20, where the RMS
        # error controller permits dips past -1e-12; those steps must be
        # rejected and retried smaller rather than aborting the run
        cfg = build_general(
            1,
            (2.1137067898803426, 13.832407591446508),
            4.131923257730322e-05,
            0.5988729732430255,
            3.336228921140153,
            0.7072302365475842,
            (0.0, 0.9878715818465336),
        )
        traj = integrate(cfg, epidemic_start(cfg), 2000.0, stop_at_equilibrium=True)
        assert traj.n_rejected > 50  # the retries actually happened
        assert np.min(traj.states) >= 0.0
        assert abs(traj.final_prevalence - refine_endemic(cfg).i_star) < 1e-7

    def test_rejects_off_simplex_start(self):
        with pytest.raises(ValueError):
            integrate(ENDEMIC_CFG, np.array([0.5, 0.1, 0.1, 0.1]), 10.0)
        with pytest.raises(ValueError, match="length"):
            integrate(ENDEMIC_CFG, np.array([0.5, 0.5]), 10.0)

    def test_tolerance_tightening_reduces_error(self, waning_chain):
        rng = np.random.default_rng(53)
        s0 = rng.uniform(0.1, 1.0, 4)
        s0 /= s0.sum()
        y0 = np.concatenate([s0, [0.0]])
        closed = infection_free_solution(waning_chain)
        ref = closed.evaluate(s0, 40.0)
        errs = []
        for rtol in (1e-6, 1e-10):
            traj = integrate(waning_chain, y0, 40.0, rtol=rtol, atol=rtol * 1e-2)
            errs.append(np.max(np.abs(traj.final_state[:-1] - ref)))
        assert errs[1] < errs[0]

    def test_csv_round_trip(self):
        traj = integrate(ENDEMIC_CFG, epidemic_start(ENDEMIC_CFG), 5.0, t_eval=[1.0, 5.0])
        text = traj.to_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "t,S_0,S_1,S_2,I"
        parsed = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        np.testing.assert_array_equal(parsed[:, 0], traj.times)
        np.testing.assert_array_equal(parsed[:, 1:], traj.states)


class TestInfectionFreeSolution:
    def test_projector_is_idempotent_all_ones_bottom_row(self, waning_chain):
        closed = infection_free_solution(waning_chain)
        p = closed.projector
        assert np.array_equal(p[-1], np.ones(4))
        assert np.array_equal(p[:-1], np.zeros((3, 4)))
        assert np.max(np.abs(p @ p - p)) < 1e-13

    def test_generator_spectrum(self, waning_chain):
        closed = infection_free_solution(waning_chain)
        eigs = np.linalg.eigvals(closed.generator())
        assert set(np.round(eigs, 12)) == {
            round(-(waning_chain.delta + waning_chain.mu), 12),
            round(-waning_chain.mu, 12),
        }

    def test_propagator_against_scaling_and_squaring(self, waning_chain):
        closed = infection_free_solution(waning_chain)
        gen = closed.generator()
        for t in (0.0, 0.3, 2.0, 25.0):
            oracle = scipy.linalg.expm(gen * t)
            np.testing.assert_allclose(closed.propagator(t), oracle, rtol=1e-12, atol=1e-14)

    def test_long_time_limit_is_pure_susceptible_state(self, waning_chain):
        closed = infection_free_solution(waning_chain)
        rng = np.random.default_rng(54)
        s0 = rng.uniform(0, 1, 4)
        s0 /= s0.sum()
        t_late = 40.0 / waning_chain.mu
        assert np.linalg.norm(closed.evaluate(s0, t_late) - np.eye(4)[3]) < 1e-8

    def test_zero_waning_decouples(self):
        cfg = build_general(2, (0.0, 1.0, 2.0), 0.0, 0.4, 1.0, 0.0, np.zeros(3))
        closed = infection_free_solution(cfg)
        s0 = np.array([0.3, 0.2, 0.5])
        for t in (0.5, 3.0, 10.0):
            expected = np.array(
                [
                    0.3 * np.exp(-0.4 * t),
                    0.2 * np.exp(-0.4 * t),
                    1.0 - (0.3 + 0.2) * np.exp(-0.4 * t),
                ]
            )
            np.testing.assert_allclose(closed.evaluate(s0, t), expected, rtol=1e-13)

    def test_matches_integrator(self, waning_chain):
        rng = np.random.default_rng(55)
        s0 = rng.uniform(0.1, 1, 4)
        s0 /= s0.sum()
        closed = infection_free_solution(waning_chain)
        grid = np.linspace(0.5, 60, 24)
        traj = integrate(waning_chain, np.concatenate([s0, [0.0]]), 60.0, t_eval=grid)
        for t, state in zip(grid, traj.sample(grid)):
            assert np.linalg.norm(state[:-1] - closed.evaluate(s0, t)) < 1e-9

    def test_vaccination_scheme_rejected(self):
        cfg = build_last_only(2, (0.0, 1.0, 2.0), 0.1, 0.05, 1.0, 5.0, 0.5)
        with pytest.raises(ValueError, match="coverage"):
            infection_free_solution(cfg)


class TestConvergenceRate:
    def test_infection_free_rate_window(self):
        cfg = build_general(2, (0.0, 1.0, 2.0), 0.1, 0.02, 1.0, 0.0, np.zeros(3))
        y0 = np.array([0.6, 0.3, 0.1, 0.0])
        traj = integrate(cfg, y0, 40.0 / cfg.mu, t_eval=np.linspace(1, 40 / cfg.mu, 400))
        target = np.array([0.0, 0.0, 1.0, 0.0])
        fit = convergence_rate(traj, target)
        assert not fit.envelope
        assert 0.95 * cfg.mu <= fit.kappa <= cfg.mu + cfg.delta + 1e-6

    def test_decoupled_case_rate_is_exactly_mu(self):
        cfg = build_general(1, (0.0, 1.0), 0.0, 0.05, 1.0, 0.0, (0.0, 0.0))
        y0 = np.array([0.4, 0.6, 0.0])
        traj = integrate(cfg, y0, 400.0, t_eval=np.linspace(1, 400, 200))
        fit = convergence_rate(traj, np.array([0.0, 1.0, 0.0]))
        assert fit.kappa == pytest.approx(cfg.mu, rel=1e-6)

    def test_oscillatory_endemic_approach_uses_envelope(self):
        # classic SIR shape: the recovered tier is fully protected, giving the
        # familiar damped interepidemic oscillations; R0 < 2 keeps the
        # oscillatory pair dominant over the unexcited conservation mode
        cfg = build_general(1, (0.0, 18.0), 0.0, 0.05, 10.0, 0.0, (0.0, 0.0))
        sol = refine_endemic(cfg)
        verdict = endemic_spectrum(cfg, sol)
        assert np.max(np.abs(verdict.eigenvalues.imag)) > 0.1  # genuinely oscillatory
        target = np.concatenate([sol.s_star, [sol.i_star]])
        traj = integrate(cfg, epidemic_start(cfg, 1e-3), 600.0, t_eval=np.linspace(1, 600, 3000))
        fit = convergence_rate(traj, target)
        assert fit.envelope
        sigma = abs(verdict.max_real_part)
        assert abs(fit.kappa - sigma) < 0.2 * sigma

    def test_tail_too_short(self):
        cfg = build_general(1, (0.0, 1.0), 0.0, 0.05, 1.0, 0.0, (0.0, 0.0))
        y0 = np.array([0.0, 1.0, 0.0])  # already at the equilibrium
        traj = integrate(cfg, y0, 5.0)
        with pytest.raises(ValueError, match="tail"):
            convergence_rate(traj, np.array([0.0, 1.0, 0.0]))


class TestDetectEquilibrium:
    def test_dfe_start_converges_immediately(self):
        cfg = build_general(2, (0.0, 1.0, 2.0), 0.3, 0.05, 2.0, 8.0, (0.0, 0.4, 0.0))
        y0 = np.array([0.0, 0.0, 1.0, 0.0])
        traj = integrate(cfg, y0, 10.0)
        status, point = detect_equilibrium(traj, cfg)
        assert status == "converged_dfe"
        np.testing.assert_array_equal(point, y0)

    def test_supercritical_run_lands_in_localization_interval(self):
        loc = localize_endemic(ENDEMIC_CFG)
        traj = integrate(
            ENDEMIC_CFG, epidemic_start(ENDEMIC_CFG), 2000.0, stop_at_equilibrium=True
        )
        status, point = detect_equilibrium(traj, ENDEMIC_CFG)
        assert status == "converged_endemic"
        assert any(lo <= point[-1] <= hi for lo, hi in loc.intervals)

    def test_short_run_reports_max_time(self):
        traj = integrate(ENDEMIC_CFG, epidemic_start(ENDEMIC_CFG), 0.5)
        status, _ = detect_equilibrium(traj, ENDEMIC_CFG)
        assert status == "max_time"
        assert traj.terminal_status == "max_time"


class TestStateVectorBridge:
    def test_statevector_input_accepted(self):
        start = StateVector(s=np.array([0.1, 0.2, 0.7 - 1e-6]), i=1e-6)
        traj = integrate(ENDEMIC_CFG, start, 1.0)
        assert traj.times[0] == 0.0
        first = traj.state_at(0)
        np.testing.assert_array_equal(first.as_array(), start.as_array())
