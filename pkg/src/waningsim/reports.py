"""Analysis report bundles and reproducibility manifests.

The analysis report gathers everything the library can say about one
configuration: reproduction number, disease-free profile and spectrum,
endemic localization/refinement, and stability verdicts, plus a consistency
field asserting that the threshold theory and the computed equilibria agree
wherever the theory applies.  A consistency violation is the "should never
happen" signal surfaced by the CLI as exit code 4.

Every CLI artifact embeds a run manifest.  The run key hashes the command
name together with the canonical configuration, so identical inputs always
map to the identical key; timestamps live next to it without affecting it.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone

from . import __version__
from .dfe import basic_reproduction_number, solve_dfe_closed_form, solve_dfe_numeric
from .endemic import (
    NoEndemicEquilibriumError,
    RefinementError,
    localize_endemic,
    refine_endemic,
)
from .model import ModelConfig, config_digest, config_to_dict
from .stability import dfe_spectrum, endemic_spectrum

__all__ = ["build_manifest", "run_key", "analyze_config", "json_document"]


def run_key(command: str, config_hash: str) -> str:
    return hashlib.sha256(f"{command}:{config_hash}".encode()).hexdigest()


def build_manifest(command: str, config: ModelConfig | None, options: dict) -> dict:
    config_hash = config_digest(config) if config is not None else None
    return {
        "command": command,
        "config_hash": config_hash,
        "run_key": run_key(command, config_hash or ""),
        "options": {k: options[k] for k in sorted(options)},
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _consistency(report: dict) -> dict:
    """Cross-check the threshold classification against the equilibria found.

    Strict only where the small-waning theory speaks: the contraction
    certificate must hold and the configuration must sit clearly on one side
    of criticality (the reproduction number at the actual waning rate and its
    zero-waning limit must agree in sign; between them is an O(delta)
    boundary layer where disagreement is expected, not an error).
    """
    loc = report["localization"]
    r0 = report["r0"]
    if not loc["validity"]:
        return {"checked": False, "consistent": True, "note": "contraction certificate failed; theory silent"}
    if r0["regime"] == "critical" or loc["exists"] == "indeterminate":
        return {"checked": False, "consistent": True, "note": "near-critical configuration"}
    margin_side = loc["margin"] > 0
    r0_side = r0["regime"] == "unstable"
    if margin_side != r0_side:
        return {"checked": False, "consistent": True, "note": "inside the critical boundary layer"}
    endemic = report["endemic"]
    endemic_stab = report["endemic_stability"]
    if margin_side:
        ok = (
            endemic is not None
            and endemic["i_star"] > 0
            and endemic_stab is not None
            and endemic_stab["classification"] == "asymptotically_stable"
            and report["dfe_stability"]["classification"] == "unstable"
        )
        note = "unstable DFE with a unique stable endemic equilibrium" if ok else "endemic equilibrium missing or unstable despite supercritical thresholds"
    else:
        ok = endemic is None and report["dfe_stability"]["classification"] == "asymptotically_stable"
        note = "stable DFE and no endemic equilibrium" if ok else "found an endemic equilibrium despite subcritical thresholds"
    return {"checked": True, "consistent": bool(ok), "note": note}


def analyze_config(config: ModelConfig) -> dict:
    """Full equilibrium and stability report for one configuration."""
    r0 = basic_reproduction_number(config)
    dfe = solve_dfe_closed_form(config)
    numeric_gap = float(max(abs(a - b) for a, b in zip(dfe.s, solve_dfe_numeric(config).s)))
    loc = localize_endemic(config)

    endemic = None
    endemic_verdict = None
    endemic_error = None
    try:
        solution = refine_endemic(config, loc)
        endemic = solution.to_dict()
        endemic_verdict = endemic_spectrum(config, solution).to_dict()
    except NoEndemicEquilibriumError:
        pass
    except RefinementError as exc:
        endemic_error = str(exc)

    report = {
        "config": config_to_dict(config),
        "r0": r0.to_dict(),
        "dfe": dfe.to_dict(),
        "dfe_numeric_gap": numeric_gap,
        "dfe_stability": dfe_spectrum(config).to_dict(),
        "localization": loc.to_dict(),
        "endemic": endemic,
        "endemic_stability": endemic_verdict,
        "endemic_error": endemic_error,
    }
    report["consistency"] = _consistency(report)
    return report


def json_document(manifest: dict, data) -> str:
    """Standard CLI artifact layout: manifest beside a deterministic data
    section (re-running identical inputs reproduces the data bytes)."""
    return json.dumps({"manifest": manifest, "data": data}, indent=2) + "\n"
