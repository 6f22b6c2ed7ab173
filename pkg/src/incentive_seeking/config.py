"""Experiment presets: JSON files with dotted-path overrides and a content hash."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .controllers import CONTROLLER_KINDS, PLANT_VARIANTS, ControllerGains
from .dither import DitherConfig
from .plant import HighwayParams

PRESETS = ("mnpass_static", "mnpass_dynamic")
TOP_LEVEL_KEYS = {"name", "plant_variant", "rho_ref", "plant", "gains", "dither", "analysis",
                  "ensemble", "sweep", "integrator", "seed", "metadata"}
# alternative spellings accepted in overrides and files
ALIASES = {"dither.eps_mu": "dither.eps_p"}


class ConfigError(ValueError):
    pass


def load_preset(name_or_path: str) -> dict:
    """Load a shipped preset by name, or any JSON file by path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    elif name_or_path in PRESETS:
        text = resources.files("incentive_seeking.presets").joinpath(
            f"{name_or_path}.json").read_text()
    else:
        raise ConfigError(f"unknown preset {name_or_path!r}; shipped presets: {', '.join(PRESETS)}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"preset {name_or_path!r} is not valid JSON: {exc}") from None
    return _apply_aliases(cfg)


def _apply_aliases(cfg: dict) -> dict:
    for alias, target in ALIASES.items():
        section, key = alias.split(".")
        block = cfg.get(section)
        if isinstance(block, dict) and key in block:
            block[target.split(".")[1]] = block.pop(key)
    return cfg


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides: Sequence[str]) -> dict:
    """Return a copy of ``cfg`` with ``section.key=value`` assignments applied."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = ALIASES.get(key.strip(), key.strip())
        parts = key.split(".")
        node = cfg
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
            node = node[part]
        if parts[0] not in TOP_LEVEL_KEYS:
            raise ConfigError(f"override {key!r}: unknown section {parts[0]!r}")
        node[parts[-1]] = _parse_value(raw.strip())
    return cfg


@dataclass(frozen=True)
class Resolved:
    """Typed view of a configuration with every default filled in."""

    name: str
    plant_variant: str
    rho_ref: float
    params: HighwayParams
    gains: ControllerGains
    dither: DitherConfig
    analysis: dict
    ensemble: dict
    sweep: dict
    integrator: dict
    seed: int
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "plant_variant": self.plant_variant,
            "rho_ref": self.rho_ref,
            "plant": self.params.to_dict(),
            "gains": self.gains.to_dict(),
            "dither": self.dither.to_dict(),
            "analysis": self.analysis,
            "ensemble": self.ensemble,
            "sweep": self.sweep,
            "integrator": self.integrator,
            "seed": self.seed,
            "metadata": self.metadata,
        }


_ANALYSIS_DEFAULTS = {"u_box": [-40.0, 40.0], "n_grid": 801, "n_seeds": 5,
                      "rho_box": [0.0, 50.0], "q_box": None}
_ENSEMBLE_DEFAULTS = {"controllers": list(CONTROLLER_KINDS), "n_traj": 60,
                      "rho0_range": [4.0, 30.0], "u0": 1.0, "q_EL0": None,
                      "t_final_min": 225.0, "random_phase": False}
_SWEEP_DEFAULTS = {"n_values": 20, "n_seeds": 5, "spread": 0.15}
_INTEGRATOR_DEFAULTS = {"steps_per_period": 50, "j_max": 100000}


def _section(cfg: dict, name: str, defaults: dict) -> dict:
    given = cfg.get(name) or {}
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {name} settings: {sorted(unknown)}")
    return {**defaults, **given}


def resolve(cfg: dict) -> Resolved:
    """Validate a raw configuration and build the typed objects; raises ConfigError."""
    unknown = set(cfg) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
    variant = cfg.get("plant_variant", "static")
    if variant not in PLANT_VARIANTS:
        raise ConfigError(f"unknown plant variant {variant!r}; valid: {', '.join(PLANT_VARIANTS)}")
    try:
        params = HighwayParams.from_mapping(cfg.get("plant") or {})
        gains = ControllerGains.from_mapping(cfg.get("gains") or {})
        d = _apply_aliases({"dither": dict(cfg.get("dither") or {})})["dither"]
        unknown = set(d) - {"omega", "eps_p", "eps_a"}
        if unknown:
            raise ConfigError(f"unknown dither settings: {sorted(unknown)}")
        omega = d.get("omega", ["1"])
        omega = [omega] if isinstance(omega, (str, int, float)) else omega
        dither = DitherConfig(tuple(omega), float(d.get("eps_p", 0.01)),
                              float(d.get("eps_a", 0.1)))
        analysis = _section(cfg, "analysis", _ANALYSIS_DEFAULTS)
        ensemble = _section(cfg, "ensemble", _ENSEMBLE_DEFAULTS)
        sweep = _section(cfg, "sweep", _SWEEP_DEFAULTS)
        integrator = _section(cfg, "integrator", _INTEGRATOR_DEFAULTS)
        rho_ref = float(cfg.get("rho_ref", 20.0))
        seed = int(cfg.get("seed", 0))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if analysis["q_box"] is None:
        analysis["q_box"] = [0.0, params.Q]
    for kind in ensemble["controllers"]:
        if kind not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller {kind!r}; valid kinds: {', '.join(CONTROLLER_KINDS)}")
    if int(ensemble["n_traj"]) < 1:
        raise ConfigError(f"n_traj must be at least 1, got {ensemble['n_traj']}")
    lo, hi = ensemble["rho0_range"]
    rho_hi = analysis["rho_box"][1] if variant == "static" else max(analysis["rho_box"][1], 160.0)
    if not 0 <= lo <= hi <= rho_hi:
        raise ConfigError(f"rho0_range {ensemble['rho0_range']} outside the density box")
    if not 0 <= float(sweep["spread"]) < 1:
        raise ConfigError(f"sweep spread must lie in [0, 1), got {sweep['spread']}")
    if float(ensemble["t_final_min"]) <= 0:
        raise ConfigError("t_final_min must be positive")
    return Resolved(cfg.get("name", "custom"), variant, rho_ref, params, gains, dither,
                    analysis, ensemble, sweep, integrator, seed, dict(cfg.get("metadata") or {}))


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(resolved: Resolved | dict) -> str:
    """sha256 of the canonical JSON of the resolved configuration."""
    data = resolved.to_dict() if isinstance(resolved, Resolved) else resolved
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()
