"""Bundled example configurations.

The pertussis configuration is a *reconstruction*: the published experiments
it mirrors cite their rate values from external clinical sources without
printing them, so these numbers were re-derived from the cited sources'
standard pertussis parameters (3-week infectious period, 10+ age-group
demography, two-tier vaccine efficacy scaling) and should be treated as
plausible defaults, not ground truth.  Qualitative structure (a low-beta[0]
window where the infection dies out at high vaccination rates, a vaccination
rate threshold near 19/yr, and loss of disease-free stability as waning
accelerates past roughly 0.21/yr) is reproduced by this set.
"""

from __future__ import annotations

from importlib import resources

from ..model import ModelConfig, config_from_json

__all__ = ["pertussis_config", "synthetic_truth_config", "synthetic_prevalence_path"]


def pertussis_config() -> ModelConfig:
    """Reconstructed pertussis-in-Canada example configuration (n = 2)."""
    text = resources.files(__package__).joinpath("pertussis_reconstructed.json").read_text()
    return config_from_json(text)


def synthetic_truth_config() -> ModelConfig:
    """The configuration that generated the bundled synthetic prevalence CSV
    (round-trip fitting fixture; supercritical, certified endemic)."""
    text = resources.files(__package__).joinpath("synthetic_truth.json").read_text()
    return config_from_json(text)


def synthetic_prevalence_path():
    """Path to the bundled synthetic annual-prevalence CSV (years 2000-2024,
    initial infectious proportion 1e-4, simulation start 1999)."""
    return resources.files(__package__).joinpath("synthetic_prevalence.csv")
