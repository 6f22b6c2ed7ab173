"""Steady-state response map, reduced cost and viability diagnostics.

The reduced cost is phi~(u) = phi(h(l(u))): the performance index evaluated at
the plant equilibrium induced by holding the incentive constant. Equilibria are
located by root finding and cross-checked against long forward simulations.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .dither import DitherConfig, analytic_dither, demodulation_gain
from .hybrid import flow_step
from .plant import (HighwayParams, behavior_rhs, density_rhs, mean_velocity,
                    mean_velocity_slope, outflow)

N_SCAN = 2001
BISECT_TOL = 1e-10
ORACLE_RTOL = 1e-3
RESIDUAL_TOL = 1e-8


class EquilibriumError(ValueError):
    """Base class for failures of the equilibrium solvers."""


class NoEquilibrium(EquilibriumError):
    pass


class MultipleEquilibria(EquilibriumError):
    def __init__(self, message: str, roots: Sequence[float]):
        super().__init__(message)
        self.roots = tuple(roots)


class ConvergenceFailure(EquilibriumError):
    pass


def performance_index(rho, rho_ref):
    """Squared deviation of the density from its reference."""
    return (np.asarray(rho, dtype=float) - rho_ref) ** 2 if np.ndim(rho) else \
        (float(rho) - rho_ref) ** 2


# -- static driver model -------------------------------------------------------

def _bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = BISECT_TOL) -> float:
    flo = f(lo)
    if flo == 0:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0:
            return mid
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _scan_roots(f: Callable[[np.ndarray], np.ndarray], box: tuple[float, float],
                n_scan: int = N_SCAN) -> list[float]:
    """All sign changes of ``f`` on a uniform scan of ``box``, refined by bisection."""
    grid = np.linspace(box[0], box[1], n_scan)
    values = f(grid)
    sign = np.sign(values)
    roots = [float(g) for g, s in zip(grid, sign) if s == 0]
    for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        roots.append(_bisect(lambda r: float(f(np.float64(r))), grid[i], grid[i + 1]))
    return sorted(roots)


def equilibria_static(u: float, params: HighwayParams, rho_box=(0.0, 50.0)) -> list[float]:
    """Every root of the density rate inside ``rho_box``."""
    return _scan_roots(lambda r: density_rhs(r, u, params), rho_box)


def static_stable(rho: float, u: float, params: HighwayParams, step: float = 1e-6) -> bool:
    slope = (density_rhs(rho + step, u, params) - density_rhs(rho - step, u, params)) / (2 * step)
    return bool(slope < 0)


def solve_equilibrium_static(u: float, params: HighwayParams, rho_box=(0.0, 50.0)) -> float:
    """The unique equilibrium density in ``rho_box``; raises if there are none or several."""
    roots = equilibria_static(u, params, rho_box)
    if not roots:
        raise NoEquilibrium(f"no equilibrium density in {list(rho_box)} for u={u:g}")
    if len(roots) > 1:
        raise MultipleEquilibria(
            f"{len(roots)} equilibria in {list(rho_box)} for u={u:g}: "
            + ", ".join(f"{r:.6g}" for r in roots), roots)
    return roots[0]


# -- forward-simulation oracle -------------------------------------------------

def forward_equilibrium(rhs: Callable[[np.ndarray], np.ndarray], x0: np.ndarray, dt: float,
                        t_max: float, project: Callable[[np.ndarray], np.ndarray] | None = None,
                        tol: float = 1e-13, check_every: int = 100
                        ) -> tuple[np.ndarray, np.ndarray, float]:
    """Integrate ``x' = rhs(x)`` with RK4 until ``t_max`` or until every column is stationary.

    Stops early once ``|rhs(x)| * dt`` is below ``tol * max(1, |x|)`` in every
    column, since integrating further cannot move the state by more than
    round-off. Returns ``(x, converged_mask, t_reached)``.
    """
    x = np.array(x0, dtype=float)
    n_steps = int(np.ceil(t_max / dt))
    t = 0.0
    for step in range(1, n_steps + 1):
        x = flow_step(x, dt, rhs)
        if project is not None:
            x = project(x)
        t = step * dt
        if step % check_every == 0 and np.all(_stationary(rhs, x, dt, tol)):
            break
    return x, _stationary(rhs, x, dt, tol), t


def _stationary(rhs, x, dt, tol) -> np.ndarray:
    rate = np.abs(np.asarray(rhs(x))) * dt
    return np.all(rate <= tol * np.maximum(1.0, np.abs(x)), axis=0)


def _oracle_step(params: HighwayParams) -> float:
    # half the fastest free-flow relaxation time; RK4 stays stable and the fixed point is exact
    return 0.5 * params.L * params.eps0 / (params.k_rho * params.v_free)


def static_oracle(u: np.ndarray, params: HighwayParams, rho_seeds: np.ndarray,
                  t_max: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Forward-simulated equilibria for every (u, seed) pair, shape (len(u), len(seeds))."""
    u = np.asarray(u, dtype=float)
    seeds = np.asarray(rho_seeds, dtype=float)
    uu = np.repeat(u, seeds.size)[None]
    x0 = np.tile(seeds, u.size)[None]
    t_max = 50.0 / params.eps0 if t_max is None else t_max
    x, ok, _ = forward_equilibrium(lambda x: density_rhs(x, uu, params), x0,
                                   _oracle_step(params), t_max)
    return x[0].reshape(u.size, seeds.size), ok.reshape(u.size, seeds.size)


# -- dynamic driver model ------------------------------------------------------

def _dynamic_rhs(x: np.ndarray, u, params: HighwayParams) -> np.ndarray:
    q, rho = x[0], x[1]
    scale = 1.0 / params.eps0
    dq = scale * params.k_m * behavior_rhs(q, u, params, check=False)
    drho = scale * params.k_rho * (q - outflow(rho, params)) / params.L
    return np.stack([np.asarray(dq, dtype=float) + 0 * rho, drho])


def _dynamic_jacobian(q: float, rho: float, params: HighwayParams) -> np.ndarray:
    scale = 1.0 / params.eps0
    d_out = mean_velocity(rho, params) + rho * mean_velocity_slope(rho, params)
    return scale * np.array([[-params.k_m, 0.0],
                             [params.k_rho / params.L, -params.k_rho * d_out / params.L]])


def _clip_q(params: HighwayParams):
    def project(x):
        np.clip(x[0], 0.0, params.Q, out=x[0])
        return x
    return project


def dynamic_inflow_equilibrium(u: float, params: HighwayParams) -> float:
    """Zero of the projected driver response: Q/2 - a_tilde*u clamped to [0, Q]."""
    return float(np.clip(0.5 * params.Q - params.a_tilde * u, 0.0, params.Q))


def equilibria_dynamic(u: float, params: HighwayParams, theta_box=((0.0, 160.0), None)
                       ) -> list[tuple[float, float]]:
    """Every equilibrium (q_EL, rho) with rho inside the density box."""
    q_star = dynamic_inflow_equilibrium(u, params)
    rho_box = theta_box[0]
    roots = _scan_roots(lambda r: q_star - outflow(r, params), rho_box)
    return [(q_star, r) for r in roots]


def dynamic_stable(theta: tuple[float, float], params: HighwayParams) -> bool:
    eig = np.linalg.eigvals(_dynamic_jacobian(theta[0], theta[1], params))
    return bool(np.all(eig.real < 0))


def damped_newton(u: float, params: HighwayParams, x0, max_iter: int = 100,
                  tol: float = RESIDUAL_TOL) -> np.ndarray:
    """Newton on the dynamic rates with backtracking on the residual norm."""
    x = np.array(x0, dtype=float)
    scale = params.eps0  # residual measured in unscaled (eps0 = 1) units

    def residual(z):
        return _dynamic_rhs(z[:, None], u, params)[:, 0] * scale

    r = residual(x)
    for _ in range(max_iter):
        if np.max(np.abs(r) / np.maximum(1.0, np.abs(x))) <= tol:
            return x
        J = _dynamic_jacobian(x[0], x[1], params) * scale
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            raise ConvergenceFailure(f"singular Jacobian at {x}") from None
        lam = 1.0
        while lam > 1e-8:
            trial = x + lam * step
            trial[0] = np.clip(trial[0], 0.0, params.Q)
            r_trial = residual(trial)
            if np.linalg.norm(r_trial) < np.linalg.norm(r):
                break
            lam *= 0.5
        else:
            raise ConvergenceFailure(f"line search stalled at {x}")
        x, r = trial, r_trial
    if np.max(np.abs(r) / np.maximum(1.0, np.abs(x))) <= tol:
        return x
    raise ConvergenceFailure(f"Newton did not converge in {max_iter} iterations")


def dynamic_oracle(u: np.ndarray, params: HighwayParams, seeds: np.ndarray,
                   t_max: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Forward-simulated equilibria, shape (len(u), len(seeds), 2)."""
    u = np.asarray(u, dtype=float)
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 2)
    uu = np.repeat(u, len(seeds))
    x0 = np.tile(seeds, (u.size, 1)).T
    t_max = 50.0 / params.eps0 if t_max is None else t_max
    x, ok, _ = forward_equilibrium(lambda x: _dynamic_rhs(x, uu, params), x0,
                                   0.5 * _oracle_step(params), t_max, project=_clip_q(params))
    return x.T.reshape(u.size, len(seeds), 2), ok.reshape(u.size, len(seeds))


def default_dynamic_seeds(params: HighwayParams, theta_box=((0.0, 160.0), None)) -> np.ndarray:
    """Five (q_EL, rho) seeds: the four box corners and the centre."""
    (r0, r1) = theta_box[0]
    (q0, q1) = theta_box[1] or (0.0, params.Q)
    return np.array([[q0, r0], [q1, r0], [q0, r1], [q1, r1],
                     [0.5 * (q0 + q1), 0.5 * (r0 + r1)]])


def solve_equilibrium_dynamic(u: float, params: HighwayParams,
                              theta_box=((0.0, 160.0), None), seed=None) -> tuple[float, float]:
    """The unique asymptotically stable equilibrium (q_EL, rho) in the box, by damped Newton.

    Unstable equilibria in the box are ignored here; ``equilibria_dynamic``
    lists them all. Newton starts from a short forward simulation out of
    ``seed`` (default: box centre); if it fails, a long forward simulation is
    used instead and must itself converge.
    """
    found = equilibria_dynamic(u, params, theta_box)
    roots = [th for th in found if dynamic_stable(th, params)]
    if not roots:
        raise NoEquilibrium(f"no stable equilibrium with rho in {list(theta_box[0])} for u={u:g}")
    if len(roots) > 1:
        raise MultipleEquilibria(
            f"{len(roots)} stable equilibria for u={u:g}: "
            + ", ".join(f"({q:.6g}, {r:.6g})" for q, r in roots), [r for _, r in roots])
    if seed is None:
        seed = default_dynamic_seeds(params, theta_box)[-1]
    seed = np.asarray(seed, dtype=float).reshape(2, 1)
    warm, _, _ = forward_equilibrium(lambda x: _dynamic_rhs(x, u, params), seed,
                                     0.5 * _oracle_step(params), 2.0 * params.eps0,
                                     project=_clip_q(params))
    try:
        x = damped_newton(u, params, warm[:, 0])
        if abs(x[1] - roots[0][1]) > ORACLE_RTOL * max(1.0, roots[0][1]):
            # the seed drained into another basin; polish the bracketed root instead
            x = damped_newton(u, params, roots[0])
        return float(x[0]), float(x[1])
    except ConvergenceFailure:
        x, ok, _ = forward_equilibrium(lambda x: _dynamic_rhs(x, u, params),
                                       np.array(roots[0]).reshape(2, 1),
                                       0.5 * _oracle_step(params), 50.0 / params.eps0,
                                       project=_clip_q(params))
        if not ok[0]:
            raise ConvergenceFailure(f"forward simulation did not settle for u={u:g}") from None
        return float(x[0, 0]), float(x[1, 0])


# -- response map ----------------------------------------------------------------

@dataclass(frozen=True)
class ResponseMap:
    u_grid: np.ndarray
    ell_values: np.ndarray  # (N, n_plant), NaN where no usable equilibrium
    phi_tilde: np.ndarray
    u_star: float
    phi_star: float
    kappa_est: float
    unique_equilibrium: np.ndarray
    variant: str = "static"
    stable_equilibrium: np.ndarray | None = None
    basin_ok: np.ndarray | None = None
    oracle_rel_err: np.ndarray | None = None
    lipschitz_est: float = float("nan")
    state_names: tuple[str, ...] = ("rho",)
    errors: tuple[str, ...] = field(default_factory=tuple)

    @property
    def du(self) -> float:
        return float(self.u_grid[1] - self.u_grid[0])

    @property
    def poisoned(self) -> np.ndarray:
        return ~np.isfinite(self.phi_tilde)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["u", *self.state_names, "phi_tilde", "unique"])
        for i, u in enumerate(self.u_grid):
            writer.writerow([f"{u:.9g}", *(f"{v:.9g}" for v in self.ell_values[i]),
                             f"{self.phi_tilde[i]:.9g}", int(self.unique_equilibrium[i])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def second_differences(values: np.ndarray, du: float) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return (values[2:] - 2 * values[1:-1] + values[:-2]) / du ** 2


def kappa_estimate(phi: np.ndarray, du: float) -> float:
    """Min of the central second differences, clipped at zero."""
    d2 = second_differences(phi, du)
    if not np.all(np.isfinite(d2)):
        return float("nan")
    return max(0.0, float(d2.min()))


def lipschitz_estimate(phi: np.ndarray, du: float) -> float:
    """Largest curvature magnitude, which bounds the gradient's Lipschitz constant."""
    d2 = second_differences(phi, du)
    d2 = d2[np.isfinite(d2)]
    return float(np.abs(d2).max()) if d2.size else float("nan")


def local_convex_interval(u: np.ndarray, phi: np.ndarray, u_star: float
                          ) -> tuple[float, float] | None:
    """Widest grid interval around u* on which every second difference is positive."""
    d2 = second_differences(phi, u[1] - u[0])
    interior = u[1:-1]
    i = int(np.argmin(np.abs(interior - u_star)))
    if not d2[i] > 0:
        return None
    lo = hi = i
    while lo > 0 and d2[lo - 1] > 0:
        lo -= 1
    while hi < d2.size - 1 and d2[hi + 1] > 0:
        hi += 1
    return float(interior[lo]), float(interior[hi])


def _rel_err(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.abs(b), 1e-12)


def reduced_cost(u: float, params: HighwayParams, variant: str = "static",
                 rho_ref: float = 20.0, rho_box=(0.0, 50.0),
                 theta_box=((0.0, 160.0), None)) -> float:
    """phi~(u) through the equilibrium solver of the chosen plant variant."""
    if variant == "static":
        rho = solve_equilibrium_static(u, params, rho_box)
    else:
        rho = solve_equilibrium_dynamic(u, params, theta_box)[1]
    return performance_index(rho, rho_ref)


def _stable_root(u, params, variant, rho_box, theta_box):
    """(ell, n_roots, stable) for grid point ``u``; ell is NaN unless one root is stable."""
    if variant == "static":
        roots = equilibria_static(u, params, rho_box)
        stable = [r for r in roots if static_stable(r, u, params)]
        if len(stable) != 1:
            return np.array([np.nan]), len(roots), False
        return np.array([stable[0]]), len(roots), True
    roots = equilibria_dynamic(u, params, theta_box)
    stable = [th for th in roots if dynamic_stable(th, params)]
    if len(stable) != 1:
        return np.array([np.nan, np.nan]), len(roots), False
    x = damped_newton(u, params, stable[0])
    return x, len(roots), True


def build_response_map(params: HighwayParams, u_box=(-40.0, 40.0), n_grid: int = 801,
                       variant: str = "static", rho_ref: float = 20.0, rho_box=(0.0, 50.0),
                       theta_box=((0.0, 160.0), None), n_seeds: int = 5,
                       oracle: bool = True) -> ResponseMap:
    """Tabulate l(u) and phi~(u) on a uniform grid and locate the minimiser.

    A grid point gets a finite value only when exactly one asymptotically
    stable equilibrium lies in the box; ``unique_equilibrium`` additionally
    requires that no other (unstable) equilibrium is present.
    """
    if n_grid < 3:
        raise ValueError("n_grid must be at least 3")
    if variant not in ("static", "dynamic"):
        raise ValueError(f"unknown plant variant {variant!r}")
    u = np.linspace(u_box[0], u_box[1], n_grid)
    n_plant = 1 if variant == "static" else 2
    ell = np.full((n_grid, n_plant), np.nan)
    unique = np.zeros(n_grid, dtype=bool)
    stable = np.zeros(n_grid, dtype=bool)
    errors = []
    for i, ui in enumerate(u):
        try:
            ell[i], n_roots, stable[i] = _stable_root(ui, params, variant, rho_box, theta_box)
        except EquilibriumError as exc:
            errors.append(f"u={ui:g}: {exc}")
            continue
        unique[i] = n_roots == 1
        if n_roots != 1:
            errors.append(f"u={ui:g}: {n_roots} equilibria in the box")
    rho = ell[:, -1]
    phi = performance_index(rho, rho_ref)

    basin_ok = rel_err = None
    if oracle:
        if variant == "static":
            seeds = np.linspace(rho_box[0], rho_box[1], n_seeds)
            sims, done = static_oracle(u, params, seeds)
            rel_err = np.max(_rel_err(sims, rho[:, None]), axis=1)
        else:
            seeds = default_dynamic_seeds(params, theta_box)
            if n_seeds > len(seeds):
                raise ValueError("the dynamic oracle uses five fixed seeds")
            sims, done = dynamic_oracle(u, params, seeds[:n_seeds])
            rel_err = np.max(np.maximum(_rel_err(sims[..., 0], ell[:, None, 0]),
                                        _rel_err(sims[..., 1], ell[:, None, 1])), axis=1)
        rel_err = np.where(np.isfinite(rel_err), rel_err, np.inf)
        basin_ok = np.all(done, axis=1) & (rel_err <= ORACLE_RTOL)

    finite = np.isfinite(phi)
    if not finite.any():
        raise NoEquilibrium("no grid point has a usable equilibrium")
    i_best = int(np.flatnonzero(finite)[np.argmin(phi[finite])])
    u_star, phi_star = float(u[i_best]), float(phi[i_best])
    if 0 < i_best < n_grid - 1 and finite[i_best - 1] and finite[i_best + 1]:
        def cost(v):
            # same branch selection as the tabulation
            return float(performance_index(
                _stable_root(v, params, variant, rho_box, theta_box)[0][-1], rho_ref))
        res = minimize_scalar(cost, bracket=(u[i_best - 1], u[i_best], u[i_best + 1]),
                              method="golden", tol=1e-10)
        if np.isfinite(res.fun) and res.fun <= phi_star and u[i_best - 1] <= res.x <= u[i_best + 1]:
            u_star, phi_star = float(res.x), float(res.fun)

    du = float(u[1] - u[0])
    names = ("rho",) if variant == "static" else ("q_EL", "rho")
    return ResponseMap(u, ell, phi, u_star, phi_star, kappa_estimate(phi, du), unique,
                       variant, stable, basin_ok, rel_err, lipschitz_estimate(phi, du), names,
                       tuple(errors))


def normalized_kappa(rmap: ResponseMap) -> float:
    """Curvature bound after rescaling u and phi~ onto unit intervals."""
    phi = rmap.phi_tilde[np.isfinite(rmap.phi_tilde)]
    if phi.size == 0 or not np.isfinite(rmap.kappa_est):
        return float("nan")
    span_u = float(rmap.u_grid[-1] - rmap.u_grid[0])
    span_phi = float(phi.max() - phi.min())
    return rmap.kappa_est * span_u ** 2 / span_phi if span_phi > 0 else float("nan")


def viability_report(rmap: ResponseMap) -> dict:
    """Verdicts on existence/uniqueness/stability (A1), convexity (A2) and kappa > 0 (A3)."""
    n = rmap.u_grid.size
    poisoned = rmap.poisoned
    d2 = second_differences(rmap.phi_tilde, rmap.du)
    finite_d2 = d2[np.isfinite(d2)]
    basin = rmap.basin_ok if rmap.basin_ok is not None else np.ones(n, dtype=bool)
    a1_ok = bool(np.all(rmap.unique_equilibrium) and np.all(basin) and not poisoned.any())
    a1_fail = rmap.u_grid[~(rmap.unique_equilibrium & basin & ~poisoned)]
    a2_ok = bool(not poisoned.any() and finite_d2.size == d2.size and np.all(d2 > 0))
    interval = None
    if np.isfinite(rmap.phi_tilde[np.argmin(np.abs(rmap.u_grid - rmap.u_star))]):
        interval = local_convex_interval(rmap.u_grid, rmap.phi_tilde, rmap.u_star)
    kappa_local = float("nan")
    if interval is not None:
        inner = (rmap.u_grid[1:-1] >= interval[0]) & (rmap.u_grid[1:-1] <= interval[1])
        kappa_local = float(d2[inner].min())
    a3_ok = bool(np.isfinite(rmap.kappa_est) and rmap.kappa_est > 0)
    report = {
        "variant": rmap.variant,
        "u_box": [float(rmap.u_grid[0]), float(rmap.u_grid[-1])],
        "n_grid": int(n),
        "u_star": rmap.u_star,
        "phi_star": rmap.phi_star,
        "A1": {
            "verdict": a1_ok,
            "n_unique": int(np.sum(rmap.unique_equilibrium)),
            "n_poisoned": int(poisoned.sum()),
            "n_basin_ok": int(np.sum(basin)),
            "oracle_max_rel_err": (float(np.max(rmap.oracle_rel_err[~poisoned]))
                                   if rmap.oracle_rel_err is not None and (~poisoned).any()
                                   else None),
            "failing_u_range": ([float(a1_fail.min()), float(a1_fail.max())]
                                if a1_fail.size else None),
            "n_failing": int(a1_fail.size),
        },
        "A2": {
            "verdict": a2_ok,
            "min_second_difference": float(finite_d2.min()) if finite_d2.size else None,
            "n_nonpositive": int(np.sum(~(d2 > 0))),
            "local_convex_interval": list(interval) if interval else None,
        },
        "A3": {
            "verdict": a3_ok,
            "kappa_est": rmap.kappa_est,
            "kappa_normalized": normalized_kappa(rmap),
            "kappa_local": kappa_local,
        },
        "gradient_lipschitz_est": rmap.lipschitz_est,
        "errors": list(rmap.errors[:20]),
    }
    report["all_positive"] = a1_ok and a2_ok and a3_ok
    return report


def phase_plane(params: HighwayParams, u: float, q_grid: np.ndarray, rho_grid: np.ndarray
                ) -> list[tuple[float, float, float, float, float]]:
    """Rows (u, q_EL, rho, dq_EL, drho) of the dynamic vector field on a grid."""
    Qg, Rg = np.meshgrid(np.asarray(q_grid, float), np.asarray(rho_grid, float), indexing="ij")
    x = np.stack([Qg.ravel(), Rg.ravel()])
    dx = _dynamic_rhs(x, u, params)
    return [(float(u), float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(x[0], x[1], dx[0], dx[1])]


# -- averaging diagnostics -------------------------------------------------------

def dither_average_update(phi_tilde: Callable[[np.ndarray], np.ndarray], u_hat: float,
                          dither: DitherConfig, k: float, n_samples: int = 512) -> float:
    """Average of the GISC update -k phi M(mu) over one dither period, plant frozen at steady state."""
    period = dither.common_period()
    t = np.arange(n_samples) * (period / n_samples)
    mu = analytic_dither(t, dither)
    u = u_hat + dither.eps_a * mu[0]
    update = -k * phi_tilde(u) * demodulation_gain(mu, dither)[0]
    # rectangle rule is spectrally accurate for a periodic integrand
    return float(update.mean())


def finite_difference_gradient(f: Callable[[float], float], u: float, step: float = 1e-3
                               ) -> float:
    """Fourth-order central difference."""
    return (-f(u + 2 * step) + 8 * f(u + step) - 8 * f(u - step) + f(u - 2 * step)) / (12 * step)
