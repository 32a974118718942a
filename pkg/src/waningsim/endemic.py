"""Endemic equilibria: perturbative localization and fixed-point refinement.

At an endemic steady state the susceptible profile solves a linear system in
the prevalence ``x``, so the equilibrium condition reduces to a scalar
equation ``transmission(x) = r + mu``.  With the waning rate set to zero that
transmission function has an explicit rational form whose numerator is a
monic quadratic ``Q(x) = x^2 + a x + b``; for small waning rates the true
prevalence is trapped in intervals of width ``O(sqrt(delta))`` around the
roots of ``Q``, and a contractive fixed-point iteration pins it down inside
the certified interval.  For waning rates beyond the contraction certificate
the module falls back to safeguarded bisection and reports the result as
uncertified.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dfe import susceptible_block_matrix
from .model import ModelConfig, diagonal_coefficients, vector_field

__all__ = [
    "NoEndemicEquilibriumError",
    "RefinementError",
    "SingularBlockError",
    "PrevalenceQuadratic",
    "LocalizationResult",
    "EndemicSolution",
    "PerturbationDiagnostics",
    "solve_susceptible_block",
    "equilibrium_transmission",
    "equilibrium_transmission_no_waning",
    "prevalence_quadratic",
    "prevalence_linear_root",
    "existence_margin",
    "localize_endemic",
    "refine_endemic",
    "perturbation_norms",
]

FIXED_POINT_TOL = 1e-13
MAX_FIXED_POINT_ITERATIONS = 200
BISECTION_GRID = 256


class NoEndemicEquilibriumError(ValueError):
    """No endemic equilibrium exists (or none was found) for this configuration."""


class RefinementError(RuntimeError):
    """The certified fixed-point refinement could not be completed."""


class SingularBlockError(ArithmeticError):
    """Susceptible-block solve failed at a given prevalence.

    Signals that the small-waning-rate regime assumption broke down at this
    infection level.
    """

    def __init__(self, prevalence: float):
        super().__init__(f"susceptible block is numerically singular at prevalence {prevalence!r}")
        self.prevalence = prevalence


def _equilibrium_rhs(config: ModelConfig, prevalence: float) -> np.ndarray:
    """Right-hand side of the steady-state susceptible system: recovery inflow
    enters the top tier, births enter the bottom tier (both negated)."""
    b = np.zeros(config.n + 1)
    b[0] = -config.r * prevalence
    b[-1] = -config.mu
    return b


def solve_susceptible_block(config: ModelConfig, prevalence: float, rhs: np.ndarray) -> np.ndarray:
    """Solve the susceptible-block system at a fixed prevalence.

    Exploits the bidiagonal-plus-first-row structure: two forward
    substitutions and a rank-one (Sherman-Morrison) correction, O(n) and
    never forming an inverse.
    """
    n = config.n
    d = diagonal_coefficients(config, prevalence)
    sub = config.delta_i[:-1]

    def fwd(b: np.ndarray) -> np.ndarray:
        x = np.empty(n + 1)
        x[0] = b[0] / d[0]
        for k in range(1, n + 1):
            x[k] = (b[k] - sub[k - 1] * x[k - 1]) / d[k]
        return x

    x = fwd(rhs)
    u = fwd(np.eye(n + 1)[0])
    denom = 1.0 + float(config.omega_i @ u)
    if not math.isfinite(denom) or abs(denom) < 1e-300:
        raise SingularBlockError(prevalence)
    return x - u * (float(config.omega_i @ x) / denom)


def equilibrium_transmission(config: ModelConfig, prevalence: float) -> float:
    """Transmission sum ``beta . S`` of the steady susceptible profile at the
    given prevalence; an endemic equilibrium solves
    ``equilibrium_transmission(x) = r + mu``."""
    s = solve_susceptible_block(config, prevalence, _equilibrium_rhs(config, prevalence))
    return float(config.beta @ s)


def equilibrium_transmission_no_waning(config: ModelConfig, prevalence: float) -> float:
    """Closed form of :func:`equilibrium_transmission` for zero waning rate.

    With no waning the interior tiers are empty at equilibrium and the
    transmission sum collapses to three rational terms in the prevalence.
    """
    beta0, beta_n = float(config.beta[0]), float(config.beta[-1])
    mu, r, omega_n = config.mu, config.r, config.omega_n
    x = float(prevalence)
    d0 = beta0 * x + mu
    dn = beta_n * x + mu + omega_n
    return beta0 * mu * omega_n / (d0 * dn) + beta0 * r * x / d0 + beta_n * mu / dn


def existence_margin(config: ModelConfig) -> float:
    """Positive iff a unique endemic equilibrium exists in the small-waning
    regime: ``beta0*omega_n + beta_n*mu - (omega_n + mu)(mu + r)``."""
    beta0, beta_n = float(config.beta[0]), float(config.beta[-1])
    return beta0 * config.omega_n + beta_n * config.mu - (config.omega_n + config.mu) * (config.mu + config.r)


@dataclass(frozen=True)
class PrevalenceQuadratic:
    """Monic quadratic whose roots locate candidate endemic prevalences
    (requires ``beta[0] > 0``)."""

    a: float
    b: float
    real: bool
    y1: float | None
    y2: float | None

    def __call__(self, x: float) -> float:
        return x * x + self.a * x + self.b


def prevalence_quadratic(config: ModelConfig) -> PrevalenceQuadratic:
    """Coefficients and roots of ``Q(x) = x^2 + a x + b``.

    ``b`` shares its sign with ``(omega_n + mu)(mu + r) - (beta0*omega_n +
    beta_n*mu)``; a negative ``b`` forces exactly one root inside ``(0, 1)``.

    Raises:
        ValueError: when ``beta[0] == 0``; use :func:`prevalence_linear_root`.
    """
    beta0, beta_n = float(config.beta[0]), float(config.beta[-1])
    if beta0 == 0.0:
        raise ValueError("prevalence polynomial is linear when beta[0] == 0; use prevalence_linear_root")
    mu, r, omega_n = config.mu, config.r, config.omega_n
    a = (beta0 * (mu + omega_n) + beta_n * (mu + r - beta0)) / (beta0 * beta_n)
    b = -existence_margin(config) / (beta0 * beta_n)
    disc = a * a - 4.0 * b
    if disc < 0.0:
        return PrevalenceQuadratic(a=a, b=b, real=False, y1=None, y2=None)
    sq = math.sqrt(disc)
    q = -(a + math.copysign(sq, a)) / 2.0
    roots = sorted((q, b / q)) if q != 0.0 else sorted((0.0, -a))
    return PrevalenceQuadratic(a=a, b=b, real=True, y1=float(roots[0]), y2=float(roots[1]))


def prevalence_linear_root(config: ModelConfig) -> float | None:
    """Root of the degenerate (``beta[0] == 0``) linear prevalence equation.

    Returns the root when it lies in ``[0, 1]`` (it does exactly when
    ``beta_n * mu >= (r + mu)(omega_n + mu)``, with the boundary case landing
    on 0), otherwise ``None``.
    """
    if float(config.beta[0]) != 0.0:
        raise ValueError("linear case requires beta[0] == 0")
    beta_n, mu, r, omega_n = float(config.beta[-1]), config.mu, config.r, config.omega_n
    root = (mu * beta_n - (r + mu) * (omega_n + mu)) / (beta_n * (r + mu))
    return root if 0.0 <= root <= 1.0 else None


@dataclass(frozen=True)
class LocalizationResult:
    """Interval localization of endemic prevalences.

    ``intervals`` are closed intervals clipped to ``[0, 1]``.  ``exists`` is
    ``"unique"``/``"none"`` from the sign analysis of the no-waning
    polynomial, or ``"indeterminate"`` when two nearly coincident roots make
    the uniqueness hypothesis fail.  ``validity`` records whether the
    contraction precondition held over the whole prevalence range; when it is
    False the perturbative theory is silent and downstream refinement is
    numeric-only.
    """

    intervals: tuple
    half_width: float
    hat_c: float
    exists: str
    validity: bool
    roots: tuple
    margin: float
    overlap_warning: bool = False

    def to_dict(self) -> dict:
        return {
            "intervals": [[float(a), float(b)] for a, b in self.intervals],
            "half_width": self.half_width,
            "hat_c": self.hat_c,
            "exists": self.exists,
            "validity": self.validity,
            "roots": [None if x is None else float(x) for x in self.roots],
            "margin": self.margin,
            "overlap_warning": self.overlap_warning,
        }


def contraction_precondition_holds(config: ModelConfig) -> bool:
    """Bound-level contraction certificate over the whole prevalence range.

    Uses the Schur-test bound ``2*delta`` on the waning perturbation and the
    worst-case (prevalence 0) inverse bound ``sqrt(n+1)/mu``.
    """
    return 2.0 * config.delta * math.sqrt(config.n + 1) / config.mu < 0.5


def _interval_constant(config: ModelConfig) -> float:
    """Constant ``hat_c`` in the interval half-width ``sqrt(2*delta*hat_c)``.

    Instantiated from the explicit perturbation bound
    ``4 (n+1)^{3/2} beta_n (r+mu) delta / (beta0 x + mu)^2`` at its worst
    point ``x = 0``, times the maximum of the denominator product over
    ``[0, 1]``.
    """
    beta0, beta_n = float(config.beta[0]), float(config.beta[-1])
    mu, r, omega_n = config.mu, config.r, config.omega_n
    n = config.n
    c_tilde = 4.0 * (n + 1) ** 1.5 * (r + mu) / (mu**3 * beta0)
    return c_tilde * (beta0 + mu) * (beta_n + mu + omega_n)


def localize_endemic(config: ModelConfig) -> LocalizationResult:
    """Locate candidate endemic prevalences in explicit intervals.

    For positive ``beta[0]`` the intervals are centered at the roots of the
    no-waning quadratic with half-width ``sqrt(2*delta*hat_c)``; for
    ``beta[0] == 0`` the prevalence equation is linear and the width is
    linear in ``delta``.
    """
    beta0 = float(config.beta[0])
    margin = existence_margin(config)
    validity = contraction_precondition_holds(config)
    delta = config.delta

    if beta0 > 0.0:
        quad = prevalence_quadratic(config)
        hat_c = _interval_constant(config)
        half = math.sqrt(2.0 * delta * hat_c)
        roots = (quad.y1, quad.y2)
        if not quad.real:
            return LocalizationResult((), half, hat_c, "none", validity, roots, margin)
    else:
        beta_n, mu, omega_n = float(config.beta[-1]), config.mu, config.omega_n
        hat_c = 4.0 * (config.n + 1) ** 1.5 * (beta_n + mu + omega_n) / mu**2
        half = hat_c * delta
        root = (mu * beta_n - (config.r + mu) * (omega_n + mu)) / (beta_n * (config.r + mu))
        roots = (root, None)

    intervals = []
    for y in roots:
        if y is None:
            continue
        lo, hi = max(y - half, 0.0), min(y + half, 1.0)
        if hi >= lo and hi > 0.0:
            intervals.append((lo, hi))
    overlap = len(intervals) == 2

    if beta0 > 0.0 and None not in roots and abs(roots[1] - roots[0]) < delta ** (1.0 / 3.0) and intervals:
        exists = "indeterminate"
    elif margin > 0.0:
        exists = "unique"
    else:
        exists = "none"
    return LocalizationResult(tuple(intervals), half, hat_c, exists, validity, roots, margin, overlap)


@dataclass(frozen=True)
class EndemicSolution:
    """Endemic equilibrium point with its certification status.

    ``residual`` is the defect in the scalar equilibrium identity
    ``beta . S* = r + mu``; ``certification`` is ``"certified-contraction"``
    when the Banach iteration ran under a verified certificate and
    ``"numeric-uncertified"`` for the large-waning bisection fallback.
    """

    i_star: float
    s_star: np.ndarray
    residual: float
    iterations: int
    certification: str
    vf_norm: float
    candidates: int = 1

    def to_dict(self) -> dict:
        return {
            "i_star": self.i_star,
            "s_star": [float(x) for x in self.s_star],
            "residual": self.residual,
            "iterations": self.iterations,
            "certification": self.certification,
            "vf_norm": self.vf_norm,
            "candidates": self.candidates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _finish_solution(config, i_star, iterations, certification, candidates=1) -> EndemicSolution:
    s_star = solve_susceptible_block(config, i_star, _equilibrium_rhs(config, i_star))
    if np.min(s_star) < -1e-12:
        raise RefinementError(f"negative susceptible component at prevalence {i_star}: {s_star}")
    s_star = np.maximum(s_star, 0.0)
    residual = abs(float(config.beta @ s_star) - (config.r + config.mu))
    state = np.concatenate([s_star, [i_star]])
    vf_norm = float(np.linalg.norm(vector_field(config, state)))
    return EndemicSolution(
        i_star=float(i_star),
        s_star=s_star,
        residual=residual,
        iterations=iterations,
        certification=certification,
        vf_norm=vf_norm,
        candidates=candidates,
    )


def refine_endemic(
    config: ModelConfig,
    localization: LocalizationResult | None = None,
    max_iterations: int = MAX_FIXED_POINT_ITERATIONS,
    tol: float = FIXED_POINT_TOL,
) -> EndemicSolution:
    """Compute the endemic equilibrium.

    Under a valid contraction certificate this runs the fixed-point iteration
    ``u <- G(u)`` started at the localized root; the contraction factor is
    ``O(delta^{1/3})`` so convergence is fast.  Non-convergence under a valid
    certificate is reported as :class:`RefinementError`, never silently
    bisected.  When the certificate fails (large waning rate) the equilibrium
    is found by safeguarded bisection and flagged ``"numeric-uncertified"``.

    Raises:
        NoEndemicEquilibriumError: when the localization says no equilibrium
            exists (certified regime) or no bisection bracket is found.
        RefinementError: root-separation violation or non-convergence.
    """
    loc = localization if localization is not None else localize_endemic(config)

    if not loc.validity:
        return _bisection_fallback(config)

    if loc.exists == "none":
        raise NoEndemicEquilibriumError(
            f"no endemic equilibrium in the certified small-waning regime (margin {loc.margin:g})"
        )
    if loc.exists == "indeterminate":
        raise RefinementError(
            "roots too close for the uniqueness certificate "
            f"(separation below delta^(1/3) = {config.delta ** (1 / 3):g})"
        )

    beta0, beta_n = float(config.beta[0]), float(config.beta[-1])
    mu, r, omega_n = config.mu, config.r, config.omega_n

    if beta0 > 0.0:
        quad = prevalence_quadratic(config)
        y, y_other = quad.y2, quad.y1

        def step(x: float) -> float:
            num = (beta0 * x + mu) * (beta_n * x + mu + omega_n)
            diff = equilibrium_transmission(config, x) - equilibrium_transmission_no_waning(config, x)
            return num / (beta0 * beta_n * mu * (x - y_other)) * diff

    else:
        y = prevalence_linear_root(config)
        if y is None:
            raise NoEndemicEquilibriumError("linear-case root fell outside [0, 1]")

        def step(x: float) -> float:
            diff = equilibrium_transmission(config, x) - equilibrium_transmission_no_waning(config, x)
            return (beta_n * x + mu + omega_n) * diff / (beta_n * (r + mu))

    u = 0.0
    for iteration in range(1, max_iterations + 1):
        u_new = step(y + u)
        if abs(u_new - u) < tol:
            u = u_new
            break
        u = u_new
    else:
        raise RefinementError(
            f"fixed-point iteration did not converge in {max_iterations} iterations; "
            "the waning rate is too large for the contraction"
        )

    i_star = y + u
    if not 0.0 < i_star <= 1.0:
        raise RefinementError(f"refined prevalence {i_star!r} left the unit interval")
    return _finish_solution(config, i_star, iteration, "certified-contraction")


def _bisection_fallback(config: ModelConfig) -> EndemicSolution:
    """Safeguarded bisection on the equilibrium condition over [0, 1]."""

    def g(x: float) -> float:
        return config.r + config.mu - equilibrium_transmission(config, x)

    grid = np.linspace(0.0, 1.0, BISECTION_GRID + 1)
    values = [g(x) for x in grid]
    brackets = [
        (grid[j], grid[j + 1])
        for j in range(BISECTION_GRID)
        if values[j] == 0.0 or (values[j] < 0.0) != (values[j + 1] < 0.0)
    ]
    roots = []
    total_iterations = 0
    for lo, hi in brackets:
        glo = g(lo)
        if glo == 0.0:
            roots.append(lo)
            continue
        for _ in range(90):
            total_iterations += 1
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if (g(mid) < 0.0) == (glo < 0.0):
                lo = mid
                glo = g(lo)
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    roots = [x for x in roots if x > 0.0]
    if not roots:
        raise NoEndemicEquilibriumError("no sign change of the equilibrium condition on (0, 1]")
    return _finish_solution(config, max(roots), total_iterations, "numeric-uncertified", len(roots))


@dataclass(frozen=True)
class PerturbationDiagnostics:
    """Computed operator norms next to their closed-form bounds."""

    diff_norm: float
    diff_bound: float
    inverse_norm: float
    inverse_bound: float
    contraction_product: float
    contraction_holds: bool


def _no_waning_matrix(config: ModelConfig, prevalence: float) -> np.ndarray:
    n = config.n
    a = np.zeros((n + 1, n + 1))
    np.fill_diagonal(a, -(config.omega_i + config.mu + config.beta * prevalence))
    a[0, 1:] += config.omega_i[1:]
    return a


def _no_waning_inverse(config: ModelConfig, prevalence: float) -> np.ndarray:
    """Explicit inverse of the no-waning block: diagonal reciprocals plus a
    first row of vaccination couplings."""
    d_hat = -(config.omega_i + config.mu + config.beta * prevalence)
    inv = np.diag(1.0 / d_hat)
    inv[0, 1:] = -config.omega_i[1:] / (d_hat[0] * d_hat[1:])
    return inv


def perturbation_norms(config: ModelConfig, prevalence: float) -> PerturbationDiagnostics:
    """Spectral norms of the waning perturbation and of the no-waning inverse,
    with the Schur-test bounds they must respect.

    Raises:
        RuntimeError: if a computed norm exceeds its bound (bug signal).
    """
    if not 0.0 <= prevalence <= 1.0:
        raise ValueError(f"prevalence must lie in [0, 1], got {prevalence}")
    a_delta = susceptible_block_matrix(config, prevalence)
    a_zero = _no_waning_matrix(config, prevalence)
    diff_norm = float(np.linalg.norm(a_delta - a_zero, 2))
    diff_bound = 2.0 * config.delta
    inverse_norm = float(np.linalg.norm(_no_waning_inverse(config, prevalence), 2))
    inverse_bound = math.sqrt(config.n + 1) / (float(config.beta[0]) * prevalence + config.mu)
    slack = 1.0 + 1e-12
    if diff_norm > diff_bound * slack or inverse_norm > inverse_bound * slack:
        raise RuntimeError(
            f"perturbation norm exceeded its closed-form bound: "
            f"{diff_norm} vs {diff_bound}, {inverse_norm} vs {inverse_bound}"
        )
    product = diff_bound * inverse_bound
    return PerturbationDiagnostics(
        diff_norm=diff_norm,
        diff_bound=diff_bound,
        inverse_norm=inverse_norm,
        inverse_bound=inverse_bound,
        contraction_product=product,
        contraction_holds=product < 0.5,
    )


def transmission_gap_bound(config: ModelConfig, prevalence: float) -> float:
    """Explicit bound on the waning-induced transmission gap
    ``|F(x) - F_no_waning(x)|``:
    ``4 (n+1)^{3/2} beta_n (r+mu) delta / (beta0 x + mu)^2``."""
    beta0, beta_n = float(config.beta[0]), float(config.beta[-1])
    n, mu, r = config.n, config.mu, config.r
    return 4.0 * (n + 1) ** 1.5 * beta_n * (r + mu) * config.delta / (beta0 * prevalence + mu) ** 2
