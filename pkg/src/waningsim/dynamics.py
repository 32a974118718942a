"""Time integration, the infection-free closed form, and convergence rates.

Integration uses an adaptive embedded Runge-Kutta 5(4) pair (Dormand-Prince)
with defaults tight enough that trajectories double as equilibrium oracles
(absolute tolerance 1e-12, relative 1e-10).  Steps are clipped to requested
sample times, so sampled values carry no interpolation error.  Stiff blow-ups
are reported with the failing time instead of silently switching methods.

Without infection or vaccination the model is linear with a lower-bidiagonal
generator: a Toeplitz block with the repeated eigenvalue ``-(delta + mu)``
chained above a final ``-mu`` row.  Its matrix exponential has an explicit
form (Poisson weights along the chain, Poisson tail mass in the last row)
used here as a closed-form trajectory evaluator.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammainc, gammaln

from . import stepper
from .model import ModelConfig, StateVector, config_digest, vector_field

__all__ = [
    "IntegrationError",
    "Trajectory",
    "integrate",
    "InfectionFreeSolution",
    "infection_free_solution",
    "RateFit",
    "convergence_rate",
    "detect_equilibrium",
]

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
DEFAULT_MAX_STEPS = 5_000_000
EQUILIBRIUM_VF_TOL = 1e-10
EQUILIBRIUM_RUN = 50
DFE_PREVALENCE_THRESHOLD = 1e-10

_STATUS_MESSAGES = {
    stepper.STATUS_UNDERFLOW: "step size underflow (stiff regime)",
    stepper.STATUS_MAX_STEPS: "step budget exhausted (stiff regime)",
    stepper.STATUS_NONFINITE: "non-finite state encountered",
    stepper.STATUS_NEGATIVE: "state component fell below the -1e-12 negativity threshold",
}


class IntegrationError(RuntimeError):
    """Integration failed; ``t_reached`` holds the last successful time."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(f"{message} at t={t_reached:.6g}")
        self.t_reached = t_reached


@dataclass(frozen=True)
class Trajectory:
    """Accepted-step record of one integration.

    ``times`` are strictly increasing and include every requested sample time
    exactly.  ``terminal_status`` is ``"converged_dfe"``,
    ``"converged_endemic"`` or ``"max_time"``.
    """

    times: np.ndarray
    states: np.ndarray
    terminal_status: str
    n_accepted: int
    n_rejected: int
    rtol: float
    atol: float
    config_hash: str

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_prevalence(self) -> float:
        return float(self.states[-1, -1])

    def state_at(self, index: int) -> StateVector:
        return StateVector.from_array(self.states[index])

    def sample(self, times) -> np.ndarray:
        """States at previously requested sample times (exact hits only)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.minimum(np.searchsorted(self.times, times), self.times.size - 1)
        bad = np.abs(self.times[idx] - times) > 1e-9
        if np.any(bad):
            raise KeyError(f"times not on the stored grid: {times[bad]}")
        return self.states[idx]

    def conservation_drift(self) -> float:
        return float(np.max(np.abs(self.states.sum(axis=1) - 1.0)))

    def at_times(self, times) -> "Trajectory":
        """Restriction of the record to a subset of stored times."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return replace(self, times=times, states=self.sample(times))

    def to_csv(self, fh=None) -> str | None:
        """CSV with header ``t,S_0,...,S_n,I``, full-precision floats."""
        own = fh is None
        out = io.StringIO() if own else fh
        n = self.states.shape[1] - 2
        out.write("t," + ",".join(f"S_{i}" for i in range(n + 1)) + ",I\n")
        for t, row in zip(self.times, self.states):
            out.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
        if own:
            return out.getvalue()
        return None

    def to_json_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "rtol": self.rtol,
            "atol": self.atol,
            "terminal_status": self.terminal_status,
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "times": [float(t) for t in self.times],
            "states": [[float(v) for v in row] for row in self.states],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def integrate(
    config: ModelConfig,
    initial_state,
    t_end: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    t_eval=None,
    max_steps: int = DEFAULT_MAX_STEPS,
    fixed_step: float | None = None,
    stop_at_equilibrium: bool = False,
) -> Trajectory:
    """Integrate the model from a simplex state over ``[0, t_end]``.

    Args:
        t_eval: optional sample times in ``(0, t_end]``; each is hit exactly
            by step clipping.  ``t_end`` is always included.
        fixed_step: disable adaptivity and force this step (order tests).
        stop_at_equilibrium: stop early once the derivative norm stays below
            the detection threshold for the required run of accepted steps.

    Raises:
        IntegrationError: on step-size underflow, exhausted step budget,
            non-finite states, or negativity beyond the roundoff clamp.
    """
    if t_end <= 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    y0 = initial_state.as_array() if isinstance(initial_state, StateVector) else np.asarray(initial_state, dtype=float)
    if y0.shape != (config.n + 2,):
        raise ValueError(f"initial state must have length n+2={config.n + 2}")
    StateVector.from_array(y0)  # validates simplex membership

    if t_eval is None:
        targets = np.array([float(t_end)])
    else:
        targets = np.unique(np.asarray(t_eval, dtype=float))
        if targets.size and (targets[0] < 0 or targets[-1] > t_end + 1e-12):
            raise ValueError("t_eval times must lie in [0, t_end]")
        targets = targets[targets > 0]
        if targets.size == 0 or targets[-1] < t_end:
            targets = np.append(targets, float(t_end))

    times, states, status, n_acc, n_rej, t_reached = stepper.integrate_core(
        config.beta,
        config.omega_i,
        config.delta_i,
        config.mu,
        config.r,
        y0,
        float(t_end),
        float(rtol),
        float(atol),
        targets,
        int(max_steps),
        float(fixed_step) if fixed_step else 0.0,
        bool(stop_at_equilibrium),
        EQUILIBRIUM_VF_TOL,
        EQUILIBRIUM_RUN,
    )
    if status < 0:
        raise IntegrationError(_STATUS_MESSAGES[status], t_reached)
    if status == stepper.STATUS_CONVERGED:
        terminal = (
            "converged_dfe"
            if states[-1, -1] < DFE_PREVALENCE_THRESHOLD
            else "converged_endemic"
        )
    else:
        terminal = "max_time"
    return Trajectory(
        times=times,
        states=states,
        terminal_status=terminal,
        n_accepted=n_acc,
        n_rejected=n_rej,
        rtol=rtol,
        atol=atol,
        config_hash=config_digest(config),
    )


@dataclass(frozen=True)
class InfectionFreeSolution:
    """Closed-form solution of the infection-free, vaccination-free system.

    ``projector`` is the spectral projector onto the slow ``-mu`` mode (an
    all-ones bottom row), ``decay_rate`` the magnitude of that eigenvalue:
    convergence to the pure-susceptible state is exponential at least this
    fast for simplex initial data.
    """

    n: int
    delta: float
    mu: float
    projector: np.ndarray
    decay_rate: float

    def generator(self) -> np.ndarray:
        """The lower-bidiagonal flow matrix of the susceptible chain."""
        j = np.diag(np.full(self.n + 1, -(self.delta + self.mu)))
        j[self.n, self.n] = -self.mu
        sub = np.arange(self.n)
        j[sub + 1, sub] = self.delta
        return j

    def spectrum(self) -> set:
        return {-(self.delta + self.mu), -self.mu}

    def propagator(self, t: float) -> np.ndarray:
        """Explicit ``exp(generator * t)``.

        Chain block: ``exp(-(delta+mu) t) (delta t)^{i-j}/(i-j)!`` (Poisson
        weights of the Jordan-like chain).  Last row: ``exp(-mu t)`` times the
        Poisson tail mass, i.e. the regularized lower incomplete gamma
        ``P(i - j, delta t)``.  Evaluated in log space to stay finite at
        large ``t``.
        """
        if t < 0:
            raise ValueError("t must be >= 0")
        n, delta, mu = self.n, self.delta, self.mu
        out = np.zeros((n + 1, n + 1))
        x = delta * t
        for j in range(n):
            for i in range(j, n):
                k = i - j
                if x == 0.0:
                    out[i, j] = math.exp(-(delta + mu) * t) if k == 0 else 0.0
                else:
                    out[i, j] = math.exp(k * math.log(x) - x - float(gammaln(k + 1)) - mu * t)
            out[n, j] = math.exp(-mu * t) * float(gammainc(n - j, x)) if x > 0.0 else 0.0
        out[n, n] = math.exp(-mu * t)
        return out

    def evaluate(self, s0, t: float) -> np.ndarray:
        """Susceptible profile at time ``t`` from initial profile ``s0``."""
        s0 = np.asarray(s0, dtype=float)
        if s0.shape != (self.n + 1,):
            raise ValueError(f"s0 must have length n+1={self.n + 1}")
        result = self.propagator(t) @ s0
        result[self.n] += 1.0 - math.exp(-self.mu * t)  # birth inflow integral
        return result


def infection_free_solution(config: ModelConfig) -> InfectionFreeSolution:
    """Closed-form evaluator for zero-coverage, zero-infection dynamics.

    Raises:
        ValueError: if any tier has vaccination coverage; the closed form
            covers the pure waning chain only.
    """
    if np.any(config.p != 0.0):
        raise ValueError("infection-free closed form requires zero coverage everywhere")
    projector = np.zeros((config.n + 1, config.n + 1))
    projector[config.n, :] = 1.0
    return InfectionFreeSolution(
        n=config.n,
        delta=config.delta,
        mu=config.mu,
        projector=projector,
        decay_rate=config.mu,
    )


@dataclass(frozen=True)
class RateFit:
    """Fitted exponential decay rate towards a target state."""

    kappa: float
    envelope: bool
    n_points: int


def convergence_rate(trajectory: Trajectory, target_state) -> RateFit:
    """Least-squares slope of ``log || state - target ||`` over the tail.

    A monotone tail is fitted directly.  An oscillatory approach is fitted
    through its local maxima instead (damping envelope) and flagged.

    Raises:
        ValueError: when fewer than five usable points remain above the
            roundoff floor.
    """
    target = np.asarray(target_state, dtype=float)
    dist = np.linalg.norm(trajectory.states - target, axis=1)
    usable = dist > 1e-13
    times, dist = trajectory.times[usable], dist[usable]
    if times.size < 5:
        raise ValueError("tail too short to fit a convergence rate")
    # fit over the stretch after transients: keep the last decade-spanning half
    half = times.size // 2
    times, dist = times[half:], dist[half:]
    if times.size < 5:
        raise ValueError("tail too short to fit a convergence rate")

    drops = np.diff(dist) < 0
    if np.mean(drops) > 0.9:
        slope = np.polyfit(times, np.log(dist), 1)[0]
        return RateFit(kappa=float(-slope), envelope=False, n_points=int(times.size))

    peaks = [i for i in range(1, times.size - 1) if dist[i] >= dist[i - 1] and dist[i] >= dist[i + 1]]
    if len(peaks) < 3:
        raise ValueError("non-monotone tail with too few oscillation peaks to fit an envelope")
    slope = np.polyfit(times[peaks], np.log(dist[peaks]), 1)[0]
    return RateFit(kappa=float(-slope), envelope=True, n_points=len(peaks))


def detect_equilibrium(
    trajectory: Trajectory,
    config: ModelConfig,
    vf_tol: float = EQUILIBRIUM_VF_TOL,
    run_length: int = EQUILIBRIUM_RUN,
    dfe_threshold: float = DFE_PREVALENCE_THRESHOLD,
):
    """Classify the trajectory endpoint.

    Converged when the derivative norm stayed below ``vf_tol`` over the last
    ``run_length`` accepted steps (or over the entire, everywhere-quiet
    trajectory); the equilibrium type is decided by rounding the final
    prevalence at ``dfe_threshold``.

    Returns ``(status, point)`` with the final state as the point.
    """
    m = trajectory.times.size
    run = 0
    for idx in range(m - 1, -1, -1):
        if np.linalg.norm(vector_field(config, trajectory.states[idx])) < vf_tol:
            run += 1
            if run >= run_length:
                break
        else:
            break
    converged = run >= run_length or run == m
    point = trajectory.final_state
    if not converged:
        return "max_time", point
    status = "converged_dfe" if point[-1] < dfe_threshold else "converged_endemic"
    return status, point
