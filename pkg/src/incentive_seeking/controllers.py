"""Incentive-seeking controllers and their closed loop with the highway plant.

Three controllers share the dither oscillator and the demodulation gain
M(mu) = (2/eps_a) * D mu:

* GISC, a dithered gradient flow;
* HMISC, momentum with a timer-driven reset of the momentum state;
* FxISC, a low-pass gradient estimate fed through sub/super-linear feedback.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, Callable, Mapping, NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .analysis import performance_index
from .dither import (DitherConfig, compose_input, demodulation_gain, initial_phase,
                     normalize_pairs, oscillator_rhs, validate_frequencies)
from .hybrid import HybridSystem, Timer
from .plant import HighwayParams, behavior_rhs, density_rhs, outflow

CONTROLLER_KINDS = ("gisc", "hmisc", "fxisc")
PLANT_VARIANTS = ("static", "dynamic")

# flow/jump set membership slack on the timer
_TAU_TOL = 1e-9


@dataclass(frozen=True)
class ControllerGains:
    k: float = 1.0
    alpha: float = 0.5
    sigma: int = 0
    T0: float = 0.1
    T: float = 20.0
    eps_f: float = 1.0
    xi_floor: float = 1e-12

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"gain k must be positive, got {self.k}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.sigma not in (0, 1):
            raise ValueError(f"sigma must be 0 or 1, got {self.sigma}")
        if not 0 < self.T0 < self.T:
            raise ValueError(f"need 0 < T0 < T, got T0={self.T0}, T={self.T}")
        if not self.eps_f > 0:
            raise ValueError(f"eps_f must be positive, got {self.eps_f}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ControllerGains":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown controller gains: {sorted(unknown)}")
        values = {k: float(v) for k, v in data.items()}
        if "sigma" in values:
            if values["sigma"] not in (0.0, 1.0):
                raise ValueError(f"sigma must be 0 or 1, got {data['sigma']}")
            values["sigma"] = int(values["sigma"])
        return cls(**values)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class GiscState(NamedTuple):
    u_hat: Any
    mu: Any


class HmiscState(NamedTuple):
    u_hat: Any
    p: Any
    tau: Any
    mu: Any


class FxiscState(NamedTuple):
    u_hat: Any
    xi: Any
    mu: Any


def gisc_rhs(state: GiscState, phi_meas, gains: ControllerGains, dither: DitherConfig
             ) -> GiscState:
    M = demodulation_gain(state.mu, dither)
    return GiscState(-gains.k * phi_meas * M, oscillator_rhs(state.mu, dither))


def _check_tau(tau, gains: ControllerGains) -> None:
    tau = np.asarray(tau)
    if np.any(tau < gains.T0 - _TAU_TOL) or np.any(tau > gains.T + _TAU_TOL):
        raise ValueError(f"timer outside the flow set [{gains.T0}, {gains.T}]: {tau}")


def hmisc_flow(state: HmiscState, phi_meas, gains: ControllerGains, dither: DitherConfig,
               check: bool = True) -> HmiscState:
    if check:
        _check_tau(state.tau, gains)
    M = demodulation_gain(state.mu, dither)
    tau = state.tau
    return HmiscState(
        (2.0 / tau) * (state.p - state.u_hat),
        -2.0 * gains.k * tau * phi_meas * M,
        np.full_like(np.asarray(tau, dtype=float), 0.5),
        oscillator_rhs(state.mu, dither),
    )


def hmisc_jump(state: HmiscState, gains: ControllerGains, check: bool = True) -> HmiscState:
    """Reset the timer to T0; sigma=0 also restarts momentum (p+ = u_hat)."""
    if check and np.any(np.abs(np.asarray(state.tau) - gains.T) > _TAU_TOL * max(1.0, gains.T)):
        raise ValueError(f"jump requested with tau={state.tau} != T={gains.T}")
    p_plus = gains.sigma * np.asarray(state.p) + (1 - gains.sigma) * np.asarray(state.u_hat)
    return HmiscState(state.u_hat, p_plus,
                      np.full_like(np.asarray(state.tau, dtype=float), gains.T0), state.mu)


def fxisc_rhs(state: FxiscState, phi_meas, gains: ControllerGains, dither: DitherConfig
              ) -> FxiscState:
    xi = np.asarray(state.xi, dtype=float)
    norm = np.sqrt(np.sum(xi * xi, axis=0))
    active = norm > gains.xi_floor
    safe = np.where(active, norm, 1.0)
    scale = np.where(active, safe ** -gains.alpha + safe ** gains.alpha, 0.0)
    du = -gains.k * xi * scale
    M = demodulation_gain(state.mu, dither)
    dxi = (-xi + phi_meas * M) / gains.eps_f
    return FxiscState(du, dxi, oscillator_rhs(state.mu, dither))


def fixed_time_bound(k: float, alpha: float, kappa: float) -> float:
    """Settling-time bound pi / (2 k alpha kappa) of the underlying fixed-time flow."""
    if not (k > 0 and kappa > 0 and 0 < alpha < 1):
        raise ValueError("need k > 0, kappa > 0 and 0 < alpha < 1")
    return np.pi / (2.0 * k * alpha * kappa)


@dataclass(frozen=True)
class Layout:
    n_plant: int
    m: int
    kind: str

    @property
    def u_hat(self) -> slice:
        return slice(self.n_plant, self.n_plant + self.m)

    @property
    def p(self) -> slice:
        start = self.n_plant + self.m
        return slice(start, start + self.m)

    @property
    def tau(self) -> int:
        return self.n_plant + 2 * self.m

    @property
    def xi(self) -> slice:
        start = self.n_plant + self.m
        return slice(start, start + self.m)

    @property
    def mu(self) -> slice:
        extra = {"gisc": 0, "hmisc": self.m + 1, "fxisc": self.m}[self.kind]
        start = self.n_plant + self.m + extra
        return slice(start, start + 2 * self.m)

    @property
    def dim(self) -> int:
        return self.mu.stop


def _indexed(name: str, m: int) -> list[str]:
    return [name] if m == 1 else [f"{name}{i + 1}" for i in range(m)]


@dataclass(frozen=True)
class ClosedLoop:
    """A controller wired to the plant as one hybrid system over the stacked state."""

    system: HybridSystem
    kind: str
    plant_variant: str
    layout: Layout
    params: HighwayParams
    gains: ControllerGains
    dither: DitherConfig
    rho_ref: float

    @property
    def rho_index(self) -> int:
        return 0 if self.plant_variant == "static" else 1

    def applied_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return compose_input(x[self.layout.u_hat], x[self.layout.mu], self.dither)

    def measured_cost(self, x: np.ndarray) -> np.ndarray:
        return performance_index(np.asarray(x)[self.rho_index], self.rho_ref)

    def initial_state(self, rho0, u0, q_el0=None, mu0=None, tau0=None, xi0=0.0) -> np.ndarray:
        """Stacked initial state; ``rho0`` may be an array giving a batch of columns."""
        rho0 = np.atleast_1d(np.asarray(rho0, dtype=float))
        batch = rho0.size
        lay, m = self.layout, self.layout.m
        x = np.zeros((lay.dim, batch))
        if self.plant_variant == "static":
            x[0] = rho0
        else:
            x[0] = self.params.Q / 3 if q_el0 is None else q_el0
            x[1] = rho0
        x[lay.u_hat] = np.reshape(np.asarray(u0, dtype=float), (-1, 1)) if np.ndim(u0) else u0
        if self.kind == "hmisc":
            x[lay.p] = x[lay.u_hat]
            x[lay.tau] = self.gains.T0 if tau0 is None else tau0
        elif self.kind == "fxisc":
            x[lay.xi] = xi0
        x[lay.mu] = initial_phase(m, batch) if mu0 is None else np.asarray(mu0).reshape(2 * m, -1)
        return x

    def table(self, trace) -> list[tuple[str, np.ndarray]]:
        """Columns for export: plant states, u_hat, u, controller extras, mu, phi."""
        X = trace.x.T
        names = self.system.names
        lay = self.layout
        cols = [(names[i], X[i]) for i in range(lay.n_plant)]
        cols += [(names[i], X[i]) for i in range(lay.u_hat.start, lay.u_hat.stop)]
        u = self.applied_input(X)
        cols += [(n, u[i]) for i, n in enumerate(_indexed("u", lay.m))]
        cols += [(names[i], X[i]) for i in range(lay.u_hat.stop, lay.mu.start)]
        cols += [(names[i], X[i]) for i in range(lay.mu.start, lay.mu.stop)]
        cols.append(("phi", self.measured_cost(X)))
        return cols


def compose_closed_loop(kind: str, plant_variant: str, gains: ControllerGains,
                        dither: DitherConfig, params: HighwayParams, rho_ref: float = 20.0,
                        noise: Callable[[np.ndarray], np.ndarray] | None = None,
                        m_plant: int = 1) -> ClosedLoop:
    """Build the hybrid system (C, F, D, G) of plant + controller.

    ``noise``, when given, maps the stacked state to an additive perturbation
    of the measured cost.
    """
    if kind not in CONTROLLER_KINDS:
        raise ValueError(f"unknown controller {kind!r}; valid kinds: {', '.join(CONTROLLER_KINDS)}")
    if plant_variant not in PLANT_VARIANTS:
        raise ValueError(f"unknown plant variant {plant_variant!r}; valid: {', '.join(PLANT_VARIANTS)}")
    report = validate_frequencies(dither.omega)
    if not report:
        raise ValueError("invalid dither frequencies: " + "; ".join(report.violations))
    m = dither.m
    if m != m_plant:
        raise ValueError(f"dither has {m} channels but the plant takes {m_plant} incentive(s)")

    n_plant = 1 if plant_variant == "static" else 2
    lay = Layout(n_plant, m, kind)
    names = ["rho"] if plant_variant == "static" else ["q_EL", "rho"]
    names += _indexed("u_hat", m)
    if kind == "hmisc":
        names += _indexed("p", m) + ["tau"]
    elif kind == "fxisc":
        names += _indexed("xi", m)
    names += [f"mu{i + 1}" for i in range(2 * m)]

    rho_i = 0 if plant_variant == "static" else 1
    u_sl, mu_sl = lay.u_hat, lay.mu

    def plant_rates(x, u):
        if plant_variant == "static":
            return [density_rhs(x[0], u[0], params)]
        q, rho = x[0], x[1]
        scale = 1.0 / params.eps0
        dq = scale * params.k_m * behavior_rhs(q, u[0], params, check=False)
        drho = scale * params.k_rho * (q - outflow(rho, params)) / params.L
        return [dq, drho]

    def measure(x):
        phi = performance_index(x[rho_i], rho_ref)
        if noise is not None:
            phi = phi + noise(x)
        return phi

    if kind == "gisc":
        def controller_rates(x, phi):
            d = gisc_rhs(GiscState(x[u_sl], x[mu_sl]), phi, gains, dither)
            return [d.u_hat, d.mu]
    elif kind == "hmisc":
        def controller_rates(x, phi):
            d = hmisc_flow(HmiscState(x[u_sl], x[lay.p], x[lay.tau], x[mu_sl]), phi, gains,
                           dither, check=False)
            return [d.u_hat, d.p, d.tau, d.mu]
    else:
        def controller_rates(x, phi):
            d = fxisc_rhs(FxiscState(x[u_sl], x[lay.xi], x[mu_sl]), phi, gains, dither)
            return [d.u_hat, d.xi, d.mu]

    def flow_map(x):
        u = compose_input(x[u_sl], x[mu_sl], dither)
        parts = plant_rates(x, u) + controller_rates(x, measure(x))
        return np.concatenate([np.reshape(p, (-1,) + x.shape[1:]) for p in parts], axis=0)

    def project(x):
        x[mu_sl] = normalize_pairs(x[mu_sl])
        if plant_variant == "dynamic":
            np.clip(x[0], 0.0, params.Q, out=x[0])
        return x

    flow_set = jump_set = jump_map = None
    timers: tuple[Timer, ...] = ()
    if kind == "hmisc":
        tau_i = lay.tau

        def flow_set(x):
            return (x[tau_i] >= gains.T0 - _TAU_TOL) & (x[tau_i] <= gains.T + _TAU_TOL)

        def jump_set(x):
            return x[tau_i] >= gains.T

        def jump_map(x):
            new = np.array(x, dtype=float)
            g = hmisc_jump(HmiscState(x[u_sl], x[lay.p], x[tau_i], x[mu_sl]), gains, check=False)
            new[lay.p] = g.p
            new[tau_i] = g.tau
            return new

        timers = (Timer(tau_i, 0.5, gains.T),)

    system = HybridSystem(flow_map=flow_map, state_dim=lay.dim, flow_set=flow_set,
                          jump_map=jump_map, jump_set=jump_set, state_names=tuple(names),
                          timers=timers, project=project)
    return ClosedLoop(system, kind, plant_variant, lay, params, gains, dither, float(rho_ref))


def target_flow(kind: str, gradient: Callable[[np.ndarray], np.ndarray],
                gains: ControllerGains) -> Callable[[float, np.ndarray], np.ndarray]:
    """Dither-free flow a controller emulates when its gradient estimate is exact.

    GISC: u' = -k grad. FxISC (with the filter at its fixed point xi = grad):
    u' = -k (xi/|xi|^alpha + xi*|xi|^alpha).
    """
    if kind == "gisc":
        def rhs(t, u):
            return -gains.k * gradient(u)
    elif kind == "fxisc":
        def rhs(t, u):
            xi = gradient(u)
            norm = float(np.linalg.norm(xi))
            if norm <= gains.xi_floor:
                return np.zeros_like(xi)
            return -gains.k * xi * (norm ** -gains.alpha + norm ** gains.alpha)
    else:
        raise ValueError(f"no dither-free target flow for {kind!r}")
    return rhs


def time_to_ball(rhs: Callable[[float, np.ndarray], np.ndarray], u0, u_star, radius: float,
                 t_max: float = 100.0) -> float:
    """First time |u(t) - u*| <= radius along ``u' = rhs(t, u)``; inf if not reached."""
    u_star = np.atleast_1d(np.asarray(u_star, dtype=float))

    def hit(t, u):
        return float(np.linalg.norm(u - u_star)) - radius
    hit.terminal = True
    hit.direction = -1
    sol = solve_ivp(rhs, (0.0, t_max), np.atleast_1d(np.asarray(u0, dtype=float)),
                    method="RK45", rtol=1e-10, atol=1e-12, events=hit)
    return float(sol.t_events[0][0]) if sol.t_events[0].size else float("inf")
