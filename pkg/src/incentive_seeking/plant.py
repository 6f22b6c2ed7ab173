"""Socio-technical model of a tolled Express lane next to a free GP lane.

Units are hours, miles and vehicles throughout: densities in veh/mi, flows in
veh/hr, speeds in mph. All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping, NamedTuple

import numpy as np


class PlantState(NamedTuple):
    """Dynamic-variant state; the static variant carries only ``rho``."""

    q_EL: Any
    rho: Any


@dataclass(frozen=True)
class HighwayParams:
    v_free: float = 65.0
    v_jam: float = 5.0
    rho_jam: float = 80.0
    rho_crit: float = 25.0
    L: float = 0.7
    Q: float = 2170.0
    a: float = 0.334
    b: float = 0.335
    gamma_EL: float = 1.71781
    gamma_GP: float = 0.0
    delta: float = 1.0
    a_tilde: float = 100.0
    k_m: float = 1.0
    k_rho: float = 1.0
    eps0: float = 1.0

    def __post_init__(self):
        problems = []
        if not self.v_free > self.v_jam > 0:
            problems.append(f"need v_free > v_jam > 0 (got {self.v_free}, {self.v_jam})")
        if not self.rho_jam > self.rho_crit > 0:
            problems.append(f"need rho_jam > rho_crit > 0 (got {self.rho_jam}, {self.rho_crit})")
        for name in ("L", "Q", "eps0", "k_m", "k_rho"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if not self.delta >= 1:
            problems.append(f"delta must be >= 1 (got {self.delta})")
        for name in ("a", "b", "a_tilde"):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be non-negative")
        if problems:
            raise ValueError("invalid highway parameters: " + "; ".join(problems))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "HighwayParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown highway parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def replace(self, **changes) -> "HighwayParams":
        return HighwayParams(**{**self.to_dict(), **changes})


def mean_velocity(rho, params: HighwayParams):
    """Mollified equilibrium speed: a logistic step from v_free down to v_jam."""
    width = 4.0 / (params.rho_jam - params.rho_crit)
    mid = 0.5 * (params.rho_jam + params.rho_crit)
    # 1 / (1 + e^z) == (1 - tanh(z/2)) / 2, without overflow in deep congestion
    step = 0.5 * (1.0 - np.tanh(0.5 * width * (rho - mid)))
    return (params.v_free - params.v_jam) * step + params.v_jam


def mean_velocity_slope(rho, params: HighwayParams):
    width = 4.0 / (params.rho_jam - params.rho_crit)
    mid = 0.5 * (params.rho_jam + params.rho_crit)
    th = np.tanh(0.5 * width * (rho - mid))
    return -(params.v_free - params.v_jam) * width * 0.25 * (1.0 - th * th)


def outflow(rho, params: HighwayParams):
    return mean_velocity(rho, params) * rho


def lane_costs(rho, u, params: HighwayParams):
    """Perceived (Express, GP) costs under the MnPASS-style cost model."""
    travel = params.a * params.L / mean_velocity(rho, params)
    c_el = travel + params.b * u + params.gamma_EL
    c_gp = travel * params.delta + params.gamma_GP
    return c_el, c_gp


def static_inflow(rho, u, params: HighwayParams):
    """Express-lane inflow as a logistic function of the marginal cost."""
    c_el, c_gp = lane_costs(rho, u, params)
    margin = c_el - c_gp
    # Q * expit(-margin); stable for large |margin|
    return params.Q * 0.5 * (1.0 - np.tanh(0.5 * margin))


def density_rhs(rho, u, params: HighwayParams):
    """Density rate of the reduced (static driver) model, in veh/mi/hr."""
    return (params.k_rho / (params.L * params.eps0)) * (static_inflow(rho, u, params)
                                                      - outflow(rho, params))


def behavior_rhs(q_el, u, params: HighwayParams, check: bool = True):
    """Unscaled driver response: minus the affine marginal cost, clamped to keep q in [0, Q]."""
    q_el = np.asarray(q_el, dtype=float)
    if check and (np.any(q_el < 0) or np.any(q_el > params.Q)):
        raise ValueError(f"q_EL outside [0, {params.Q}]")
    psi = -((q_el - 0.5 * params.Q) + params.a_tilde * u)
    psi = np.where((q_el <= 0) & (psi < 0), 0.0, psi)
    psi = np.where((q_el >= params.Q) & (psi > 0), 0.0, psi)
    return psi if psi.ndim else float(psi)


def full_rhs(theta: PlantState, u, params: HighwayParams, check: bool = True) -> PlantState:
    """Rates of the dynamic-driver model, both scaled by 1/eps0."""
    q_el, rho = theta
    scale = 1.0 / params.eps0
    dq = scale * params.k_m * behavior_rhs(q_el, u, params, check=check)
    drho = scale * params.k_rho * (q_el - outflow(rho, params)) / params.L
    return PlantState(dq, drho)
