"""Model family for tiered waning immunity with booster vaccination.

The population is split into susceptible compartments ``S_0 .. S_n`` ordered
from most to least immune, plus an infectious compartment ``I``.  Immunity
erodes along the chain at rate ``delta``, vaccination returns covered
individuals to ``S_0`` at rate ``omega``, and each tier has its own
transmission rate ``beta[k]``.  All rates are per year; states are
population proportions on the unit simplex.

This module owns the parametrization (:class:`ModelConfig`), the state type
(:class:`StateVector`), the ODE right-hand side (:func:`vector_field`), and
strict JSON (de)serialization of configurations.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "ModelConfig",
    "StateVector",
    "build_general",
    "build_all_but_last",
    "build_last_only",
    "vector_field",
    "diagonal_coefficients",
    "epidemic_start",
    "config_to_dict",
    "config_from_dict",
    "config_to_json",
    "config_from_json",
    "load_config",
]

SIMPLEX_TOL = 1e-9

CONFIG_KEYS = ("n", "beta", "delta", "mu", "r", "omega", "p")


class ConfigError(ValueError):
    """Raised when a model configuration violates a structural constraint."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ModelConfig:
    """Validated parametrization of the waning-immunity model.

    Attributes:
        n: index of the least-immune compartment (``n + 1`` susceptible tiers).
        beta: transmission rates per tier, non-decreasing, length ``n + 1``.
        delta: waning rate (1/years).
        mu: birth/death rate, strictly positive.
        r: recovery rate, strictly positive.
        omega: vaccination rate applied to covered compartments.
        p: coverage fractions per tier, ``p[0] == 0``.
        omega_i: derived per-tier return rates ``p[k] * omega``.
        delta_i: derived per-tier waning outflow ``(1 - p[k]) * delta``;
            the last entry is stored as 0 since no compartment follows ``S_n``.

    Instances are immutable (arrays are read-only views) and safe to share
    across worker processes and threads.
    """

    n: int
    beta: np.ndarray
    delta: float
    mu: float
    r: float
    omega: float
    p: np.ndarray
    omega_i: np.ndarray = field(repr=False, default=None)
    delta_i: np.ndarray = field(repr=False, default=None)

    @property
    def beta_strictly_increasing(self) -> bool:
        """True when ``beta[0] < beta[n]``, the premise behind the strict
        monotonicity statements; equal endpoints are allowed but flagged."""
        return float(self.beta[0]) < float(self.beta[-1])

    @property
    def omega_n(self) -> float:
        return float(self.omega_i[-1])

    def replace(self, **changes) -> "ModelConfig":
        """Return a revalidated copy with the given fields substituted."""
        base = {
            "n": self.n,
            "beta": np.array(self.beta),
            "delta": self.delta,
            "mu": self.mu,
            "r": self.r,
            "omega": self.omega,
            "p": np.array(self.p),
        }
        base.update(changes)
        return build_general(**base)


def build_general(
    n: int,
    beta: Sequence[float],
    delta: float,
    mu: float,
    r: float,
    omega: float,
    p: Sequence[float],
) -> ModelConfig:
    """Build and validate a configuration for the general coverage scheme.

    Raises:
        ConfigError: on dimension mismatch, negative rates, non-monotone
            ``beta``, coverage outside ``[0, 1]``, or nonzero ``p[0]``.
    """
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise ConfigError(f"n must be an integer >= 1, got {n!r}")
    n = int(n)
    beta = np.asarray(beta, dtype=float)
    p = np.asarray(p, dtype=float)
    if beta.shape != (n + 1,):
        raise ConfigError(f"beta must have length n+1={n + 1}, got shape {beta.shape}")
    if p.shape != (n + 1,):
        raise ConfigError(f"p must have length n+1={n + 1}, got shape {p.shape}")
    if not np.all(np.isfinite(beta)) or np.any(beta < 0):
        raise ConfigError("beta entries must be finite and >= 0")
    if np.any(np.diff(beta) < 0):
        raise ConfigError(f"beta must be non-decreasing, got {beta.tolist()}")
    for name, value, lower_open in (("delta", delta, False), ("mu", mu, True), ("r", r, True), ("omega", omega, False)):
        value = float(value)
        if not math.isfinite(value) or value < 0 or (lower_open and value == 0):
            bound = "> 0" if lower_open else ">= 0"
            raise ConfigError(f"{name} must be finite and {bound}, got {value}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ConfigError(f"coverage p must lie in [0, 1], got {p.tolist()}")
    if p[0] != 0.0:
        raise ConfigError(f"p[0] must be 0 (the most-immune tier is never vaccinated), got {p[0]}")

    omega_i = p * float(omega)
    delta_i = (1.0 - p) * float(delta)
    delta_i[n] = 0.0  # no compartment beyond S_n; stored as 0 for uniform indexing
    return ModelConfig(
        n=n,
        beta=_readonly(beta),
        delta=float(delta),
        mu=float(mu),
        r=float(r),
        omega=float(omega),
        p=_readonly(p),
        omega_i=_readonly(omega_i),
        delta_i=_readonly(delta_i),
    )


def build_all_but_last(
    n: int,
    beta: Sequence[float],
    delta: float,
    mu: float,
    r: float,
    omega: float,
    p_interior: Sequence[float] = (),
) -> ModelConfig:
    """Coverage scheme vaccinating every tier except the least-immune one.

    ``p_interior`` holds coverages for tiers ``1 .. n-1``; both endpoints of
    the full coverage vector are forced to 0.
    """
    p_interior = np.asarray(p_interior, dtype=float)
    if p_interior.shape != (max(n - 1, 0),):
        raise ConfigError(
            f"p_interior must have length n-1={n - 1}, got shape {p_interior.shape}"
        )
    p = np.concatenate(([0.0], p_interior, [0.0]))
    return build_general(n, beta, delta, mu, r, omega, p)


def build_last_only(
    n: int,
    beta: Sequence[float],
    delta: float,
    mu: float,
    r: float,
    omega: float,
    p_n: float,
) -> ModelConfig:
    """Coverage scheme vaccinating only the least-immune tier ``S_n``."""
    p = np.zeros(n + 1)
    p[n] = float(p_n)
    return build_general(n, beta, delta, mu, r, omega, p)


def is_last_only(config: ModelConfig) -> bool:
    """True when no tier below ``S_n`` has vaccination coverage."""
    return bool(np.all(config.p[:-1] == 0.0))


def is_all_but_last(config: ModelConfig) -> bool:
    """True when the least-immune tier has no vaccination coverage."""
    return config.p[-1] == 0.0


@dataclass(frozen=True)
class StateVector:
    """A point ``(S_0, ..., S_n, I)`` on the unit simplex.

    Construction validates non-negativity and that the components sum to 1
    within ``SIMPLEX_TOL``.  Renormalization is never silent; call
    :meth:`normalized` explicitly when needed.
    """

    s: np.ndarray
    i: float

    def __post_init__(self):
        s = _readonly(self.s)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "i", float(self.i))
        if s.ndim != 1 or s.size < 2:
            raise ValueError(f"s must be a vector of length n+1 >= 2, got shape {s.shape}")
        if np.any(s < 0) or self.i < 0:
            raise ValueError("state components must be non-negative")
        total = math.fsum(s.tolist()) + self.i
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"state must sum to 1 within {SIMPLEX_TOL:g}, got {total!r}")

    @classmethod
    def from_array(cls, y: Sequence[float]) -> "StateVector":
        y = np.asarray(y, dtype=float)
        return cls(s=y[:-1], i=float(y[-1]))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.s, [self.i]])

    def normalized(self) -> "StateVector":
        y = self.as_array()
        return StateVector.from_array(y / math.fsum(y.tolist()))


def epidemic_start(config: ModelConfig, i0: float = 1e-6) -> StateVector:
    """Default epidemic initial condition: naive population seeded with ``i0``."""
    s = np.zeros(config.n + 1)
    s[-1] = 1.0 - i0
    return StateVector(s=s, i=i0)


def _as_state_array(config: ModelConfig, state) -> np.ndarray:
    y = state.as_array() if isinstance(state, StateVector) else np.asarray(state, dtype=float)
    if y.shape != (config.n + 2,):
        raise ValueError(f"state must have length n+2={config.n + 2}, got shape {y.shape}")
    return y


def vector_field(config: ModelConfig, state) -> np.ndarray:
    """Time derivative of ``(S_0, ..., S_n, I)`` under the model dynamics.

    The component sum of the output is ``mu * (1 - total population)``, which
    vanishes identically on the simplex; the flow conserves total population.

    Args:
        state: a :class:`StateVector` or an array of length ``n + 2``.

    Returns:
        Array of length ``n + 2`` with the derivatives.
    """
    y = _as_state_array(config, state)
    n = config.n
    s, i = y[:-1], y[-1]
    beta, om, de, mu, rr = config.beta, config.omega_i, config.delta_i, config.mu, config.r

    out = np.empty(n + 2)
    infection = beta * s * i
    # most-immune tier: vaccination inflow, waning outflow, recovery inflow
    out[0] = float(om @ s) - de[0] * s[0] + rr * i - infection[0] - mu * s[0]
    if n >= 2:
        k = np.arange(1, n)
        out[1:n] = -om[k] * s[k] + de[k - 1] * s[k - 1] - de[k] * s[k] - infection[k] - mu * s[k]
    # least-immune tier receives all births
    out[n] = mu - om[n] * s[n] + de[n - 1] * s[n - 1] - infection[n] - mu * s[n]
    out[n + 1] = float(beta @ s) * i - rr * i - mu * i
    return out


def diagonal_coefficients(config: ModelConfig, prevalence: float) -> np.ndarray:
    """Per-tier total outflow coefficients ``-(delta_i + omega_i + mu + beta_i * I)``.

    These are the diagonal entries of the susceptible-block matrix at
    infection level ``prevalence``; they are strictly negative since
    ``mu > 0``.
    """
    if prevalence < 0:
        raise ValueError(f"prevalence must be >= 0, got {prevalence}")
    return -(config.delta_i + config.omega_i + config.mu + config.beta * float(prevalence))


# -- strict JSON configuration format ---------------------------------------


def config_to_dict(config: ModelConfig) -> dict:
    return {
        "n": config.n,
        "beta": [float(b) for b in config.beta],
        "delta": config.delta,
        "mu": config.mu,
        "r": config.r,
        "omega": config.omega,
        "p": [float(x) for x in config.p],
    }


def config_from_dict(data: dict) -> ModelConfig:
    """Parse a configuration mapping, rejecting unknown keys.

    Strictness is deliberate: a typo in a scientific config should fail
    loudly instead of silently falling back to a default.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in CONFIG_KEYS if k not in data]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    return build_general(
        n=data["n"],
        beta=data["beta"],
        delta=data["delta"],
        mu=data["mu"],
        r=data["r"],
        omega=data["omega"],
        p=data["p"],
    )


def config_to_json(config: ModelConfig, indent: int | None = 2) -> str:
    return json.dumps(config_to_dict(config), indent=indent)


def config_digest(config: ModelConfig) -> str:
    """sha256 of the canonical (sorted-key, compact) JSON form."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def config_from_json(text: str) -> ModelConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)


def load_config(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json(fh.read())
