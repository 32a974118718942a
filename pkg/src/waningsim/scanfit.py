"""Parameter sweeps, bifurcation location, data ingestion, and fitting.

Sweeps substitute one parameter along a grid and record an observable plus an
equilibrium classification per point; grid points are independent, so they
can be evaluated in a process pool with deterministic, grid-ordered output.
Threshold crossings are refined by bisection on either the reproduction
number or the small-waning existence condition.  Time-series files are plain
CSV (annual prevalence, or cases with population); fitting minimizes the sum
of squared prevalence residuals with a restarted Nelder-Mead simplex and
quadratic out-of-bounds penalties, since the ODE objective has no usable
gradients.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .dfe import basic_reproduction_number
from .dynamics import integrate
from .endemic import NoEndemicEquilibriumError, existence_margin, refine_endemic
from .model import ConfigError, ModelConfig, config_from_dict, config_to_dict, epidemic_start
from .stability import dfe_spectrum

__all__ = [
    "SWEEP_PARAMETERS",
    "SWEEP_OBSERVABLES",
    "SweepSpec",
    "SweepPoint",
    "SweepResult",
    "substitute_parameter",
    "sweep",
    "find_bifurcation",
    "TimeSeries",
    "TimeSeriesError",
    "ingest_timeseries",
    "FitOptions",
    "FitResult",
    "fit",
    "simulate_annual_prevalence",
]

SWEEP_PARAMETERS = ("beta0", "omega", "delta", "omega_n", "p_n")
SWEEP_OBSERVABLES = ("terminal_prevalence", "r0", "endemic_I", "max_real_part")


def substitute_parameter(config: ModelConfig, parameter: str, value: float) -> ModelConfig:
    """Rebuild the configuration with one swept parameter replaced.

    ``omega_n`` adjusts the vaccination rate so that the last-tier return
    rate ``p[n] * omega`` equals ``value`` (requires ``p[n] > 0``).
    Validation errors propagate as :class:`ConfigError`.
    """
    if parameter == "beta0":
        beta = np.array(config.beta)
        beta[0] = value
        return config.replace(beta=beta)
    if parameter == "omega":
        return config.replace(omega=value)
    if parameter == "delta":
        return config.replace(delta=value)
    if parameter == "omega_n":
        p_n = float(config.p[-1])
        if p_n <= 0.0:
            raise ConfigError("omega_n sweep requires positive coverage of the last tier")
        return config.replace(omega=value / p_n)
    if parameter == "p_n":
        p = np.array(config.p)
        p[-1] = value
        return config.replace(p=p)
    raise ConfigError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}")


@dataclass(frozen=True)
class SweepSpec:
    """One-parameter sweep description."""

    base_config: ModelConfig
    parameter: str
    grid: np.ndarray
    observable: str
    t_end: float = 2000.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", grid)
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}")
        if self.observable not in SWEEP_OBSERVABLES:
            raise ConfigError(f"unknown observable {self.observable!r}")
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ConfigError("grid must be a strictly increasing vector with >= 2 points")


@dataclass(frozen=True)
class SweepPoint:
    value: float
    observable: float
    classification: str
    error: str | None = None


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    observable: str
    points: tuple

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    @property
    def observables(self) -> np.ndarray:
        return np.array([p.observable for p in self.points])

    def to_csv(self, fh=None) -> str | None:
        own = fh is None
        out = io.StringIO() if own else fh
        out.write("param_value,observable,classification\n")
        for p in self.points:
            out.write(f"{p.value!r},{p.observable!r},{p.classification}\n")
        return out.getvalue() if own else None

    def to_json_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "observable": self.observable,
            "points": [
                {
                    "value": p.value,
                    "observable": p.observable,
                    "classification": p.classification,
                    "error": p.error,
                }
                for p in self.points
            ],
        }


def _classify(config: ModelConfig) -> str:
    regime = basic_reproduction_number(config).regime
    return {"stable": "dfe_stable", "unstable": "endemic", "critical": "critical"}[regime]


def _evaluate_point(args) -> SweepPoint:
    config_dict, parameter, value, observable, t_end = args
    base = config_from_dict(config_dict)
    try:
        cfg = substitute_parameter(base, parameter, value)
    except ConfigError as exc:
        return SweepPoint(value=value, observable=float("nan"), classification="error", error=str(exc))
    try:
        classification = _classify(cfg)
        if observable == "r0":
            obs = basic_reproduction_number(cfg).r0
        elif observable == "max_real_part":
            obs = dfe_spectrum(cfg).max_real_part
        elif observable == "endemic_I":
            try:
                obs = refine_endemic(cfg).i_star
            except NoEndemicEquilibriumError:
                obs = float("nan")
        elif observable == "terminal_prevalence":
            traj = integrate(cfg, epidemic_start(cfg), t_end, stop_at_equilibrium=True)
            obs = traj.final_prevalence
        else:  # unreachable; SweepSpec validates
            raise ConfigError(observable)
        return SweepPoint(value=value, observable=float(obs), classification=classification)
    except Exception as exc:  # per-point failures are recorded, not raised
        return SweepPoint(value=value, observable=float("nan"), classification="error", error=str(exc))


def sweep(spec: SweepSpec, jobs: int = 1) -> SweepResult:
    """Evaluate the observable over the grid.

    Points run independently; with ``jobs > 1`` they are distributed over a
    process pool with output order fixed by the grid, so results are
    deterministic either way.  Per-point configuration violations are
    recorded in the result rather than aborting the sweep.
    """
    tasks = [
        (config_to_dict(spec.base_config), spec.parameter, float(v), spec.observable, spec.t_end)
        for v in spec.grid
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_evaluate_point, tasks))
    else:
        points = [_evaluate_point(t) for t in tasks]
    return SweepResult(parameter=spec.parameter, observable=spec.observable, points=tuple(points))


def find_bifurcation(spec: SweepSpec, criterion: str = "r0", tol: float = 1e-8) -> float:
    """Locate a threshold crossing of the swept parameter.

    ``criterion="r0"`` bisects ``R0 - 1 = 0``; ``criterion="existence"``
    bisects the small-waning endemic existence margin.  The grid supplies the
    initial bracket (first adjacent sign change); bisection refines it below
    ``tol``.

    Raises:
        ValueError: if the criterion does not change sign across the grid.
    """
    if criterion == "r0":
        def f(value: float) -> float:
            return basic_reproduction_number(substitute_parameter(spec.base_config, spec.parameter, value)).r0 - 1.0
    elif criterion == "existence":
        def f(value: float) -> float:
            return existence_margin(substitute_parameter(spec.base_config, spec.parameter, value))
    else:
        raise ValueError(f"unknown bifurcation criterion {criterion!r}")

    grid = spec.grid
    values = [f(v) for v in grid]
    bracket = None
    for j in range(len(grid) - 1):
        if values[j] == 0.0:
            return float(grid[j])
        if (values[j] < 0.0) != (values[j + 1] < 0.0):
            bracket = (float(grid[j]), float(grid[j + 1]), values[j])
            break
    if bracket is None:
        raise ValueError(f"no sign change of criterion {criterion!r} across the grid")
    lo, hi, flo = bracket
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if (fmid < 0.0) == (flo < 0.0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TimeSeriesError(ValueError):
    """Malformed or inconsistent time-series input."""


@dataclass(frozen=True)
class TimeSeries:
    """Annual observed prevalence proportions."""

    years: np.ndarray
    prevalence: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "years", np.asarray(self.years, dtype=int))
        object.__setattr__(self, "prevalence", np.asarray(self.prevalence, dtype=float))
        if self.years.size != self.prevalence.size or self.years.size == 0:
            raise TimeSeriesError("years and prevalence must be matching non-empty vectors")
        if np.any(np.diff(self.years) <= 0):
            raise TimeSeriesError("years must be strictly increasing")
        if np.any(self.prevalence < 0) or np.any(self.prevalence > 1):
            raise TimeSeriesError("prevalence must lie in [0, 1]")


def ingest_timeseries(source) -> TimeSeries:
    """Read annual prevalence from CSV.

    Accepts a path, an open text file, or a CSV string.  Header must be
    ``year,prevalence`` or ``year,cases,population`` (prevalence is then
    ``cases / population``).  Lines starting with ``#`` are comments.
    Malformed rows report their line number.
    """
    if hasattr(source, "read"):
        text = source.read()
    elif "\n" in str(source):
        text = str(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()

    rows = []
    header = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in next(csv.reader([line]))]
        if header is None:
            header = [c.lower() for c in cells]
            if header not in (["year", "prevalence"], ["year", "cases", "population"]):
                raise TimeSeriesError(
                    f"line {lineno}: header must be 'year,prevalence' or 'year,cases,population', got {line!r}"
                )
            continue
        if len(cells) != len(header):
            raise TimeSeriesError(f"line {lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            year = int(cells[0])
            numbers = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise TimeSeriesError(f"line {lineno}: {exc}") from exc
        if len(header) == 3:
            cases, population = numbers
            if population <= 0:
                raise TimeSeriesError(f"line {lineno}: population must be positive")
            value = cases / population
        else:
            value = numbers[0]
        if not 0.0 <= value <= 1.0:
            raise TimeSeriesError(f"line {lineno}: prevalence {value!r} outside [0, 1]")
        rows.append((year, value))
    if header is None or not rows:
        raise TimeSeriesError("no data rows found")
    years = [r[0] for r in rows]
    if any(b <= a for a, b in zip(years, years[1:])):
        raise TimeSeriesError("years must be strictly increasing")
    return TimeSeries(years=np.array(years), prevalence=np.array([r[1] for r in rows]))


# -- least-squares fitting ----------------------------------------------------

FREE_PARAMETER_BOUNDS = {
    "beta_scale": (0.05, 20.0),
    "delta": (0.0, 5.0),
    "mu": (1e-4, 2.0),
    "r": (0.05, 400.0),
    "omega": (0.0, 60.0),
    "i0": (1e-10, 0.1),
}


@dataclass(frozen=True)
class FitOptions:
    """Fitting controls.

    Simulated prevalence is the instantaneous infectious proportion at the
    end of each observation year (offset 1.0 from the simulation start at
    ``start_year``); cumulative incidence is deliberately not modeled.
    """

    start_year: int | None = None
    initial_prevalence: float = 1e-6
    year_end_offset: float = 1.0
    log_sse: bool = False
    max_iterations: int = 2000
    restarts: int = 2
    xatol: float = 1e-10
    fatol: float = 1e-16
    rtol: float = 1e-9
    atol: float = 1e-12


@dataclass(frozen=True)
class FitResult:
    fitted_config: ModelConfig
    parameters: dict
    sse: float
    residuals: np.ndarray
    converged: bool
    evaluations: int

    def to_json_dict(self) -> dict:
        return {
            "parameters": {k: float(v) for k, v in self.parameters.items()},
            "config": config_to_dict(self.fitted_config),
            "sse": self.sse,
            "residuals": [float(x) for x in self.residuals],
            "converged": self.converged,
            "evaluations": self.evaluations,
        }


def _apply_parameters(template: ModelConfig, names, values, i0_default: float):
    changes = {}
    i0 = i0_default
    for name, value in zip(names, values):
        if name == "beta_scale":
            changes["beta"] = np.array(template.beta) * value
        elif name == "i0":
            i0 = value
        elif name.startswith("p_"):
            p = changes.get("p", np.array(template.p))
            p[int(name[2:])] = value
            changes["p"] = p
        else:
            changes[name] = value
    return template.replace(**changes), i0


def _bounds_for(template: ModelConfig, names):
    bounds = []
    for name in names:
        if name.startswith("p_"):
            k = int(name[2:])
            if not 1 <= k <= template.n:
                raise ConfigError(f"coverage index out of range in {name!r}")
            bounds.append((0.0, 1.0))
        elif name in FREE_PARAMETER_BOUNDS:
            bounds.append(FREE_PARAMETER_BOUNDS[name])
        else:
            raise ConfigError(f"unknown free parameter {name!r}")
    return bounds


def simulate_annual_prevalence(
    config: ModelConfig,
    years,
    start_year: int,
    i0: float,
    year_end_offset: float = 1.0,
    rtol: float = 1e-9,
    atol: float = 1e-12,
) -> np.ndarray:
    """Prevalence at the end of each observation year."""
    years = np.asarray(years, dtype=int)
    t_obs = years - start_year + year_end_offset
    if np.any(t_obs <= 0):
        raise ValueError("observation years must come after the simulation start")
    traj = integrate(config, epidemic_start(config, i0), float(t_obs[-1]), rtol=rtol, atol=atol, t_eval=t_obs)
    return traj.sample(t_obs.astype(float))[:, -1]


def fit(
    config_template: ModelConfig,
    free_parameters,
    timeseries: TimeSeries,
    options: FitOptions | None = None,
    bounds: dict | None = None,
) -> FitResult:
    """Least-squares fit of selected parameters to annual prevalence data.

    The whole transmission vector is scaled jointly (``beta_scale``), which
    preserves its ordering.  Out-of-bounds proposals are simulated at their
    clipped values with a quadratic penalty added, keeping the objective
    finite everywhere for the simplex search.  Deterministic given options.

    Returns the best point found with ``converged=False`` when the simplex
    stalls without meeting its tolerances.
    """
    opts = options or FitOptions()
    names = list(free_parameters)
    if not names:
        raise ConfigError("free_parameters must not be empty")
    box = _bounds_for(config_template, names)
    if bounds:
        box = [tuple(bounds.get(name, b)) for name, b in zip(names, box)]
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    start_year = opts.start_year if opts.start_year is not None else int(timeseries.years[0]) - 1

    defaults = {
        "beta_scale": 1.0,
        "delta": config_template.delta,
        "mu": config_template.mu,
        "r": config_template.r,
        "omega": config_template.omega,
        "i0": opts.initial_prevalence,
    }
    x0 = np.array(
        [
            float(config_template.p[int(n[2:])]) if n.startswith("p_") else defaults[n]
            for n in names
        ]
    )
    x0 = np.clip(x0, lo, hi)
    observed = timeseries.prevalence
    evaluations = 0

    def residuals_at(x: np.ndarray) -> np.ndarray:
        cfg, i0 = _apply_parameters(config_template, names, x, opts.initial_prevalence)
        simulated = simulate_annual_prevalence(
            cfg, timeseries.years, start_year, i0, opts.year_end_offset, opts.rtol, opts.atol
        )
        if opts.log_sse:
            floor = 1e-12
            return np.log(np.maximum(simulated, floor)) - np.log(np.maximum(observed, floor))
        return simulated - observed

    def objective(x: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        clipped = np.clip(x, lo, hi)
        penalty = float(np.sum(((x - clipped) / (hi - lo)) ** 2))
        try:
            res = residuals_at(clipped)
        except Exception:
            return 1e6 + penalty
        return float(res @ res) + penalty

    best_x, best_f = x0, objective(x0)
    converged = False
    for _ in range(opts.restarts + 1):
        result = scipy.optimize.minimize(
            objective,
            best_x,
            method="Nelder-Mead",
            options={
                "maxiter": opts.max_iterations,
                "xatol": opts.xatol,
                "fatol": opts.fatol,
                "adaptive": True,
            },
        )
        improved = result.fun < best_f - 1e-18
        if result.fun < best_f:
            best_x, best_f = np.clip(result.x, lo, hi), float(result.fun)
        if result.success:
            converged = True
        if not improved:
            break

    fitted_config, i0 = _apply_parameters(config_template, names, best_x, opts.initial_prevalence)
    final_residuals = residuals_at(best_x)
    return FitResult(
        fitted_config=fitted_config,
        parameters=dict(zip(names, (float(v) for v in best_x))),
        sse=float(final_residuals @ final_residuals),
        residuals=final_residuals,
        converged=converged,
        evaluations=evaluations,
    )
