"""Closed-loop ensembles, MSE metrics and parameter sweeps.

Experiment horizons are given in minutes; the dynamics run in hours.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .controllers import CONTROLLER_KINDS, ClosedLoop, ControllerGains, compose_closed_loop
from .dither import DitherConfig, initial_phase
from .hybrid import HybridTrace, IntegrationError, IntegratorConfig, simulate_batch
from .plant import HighwayParams

MINUTES_PER_HOUR = 60.0


class EnsembleError(RuntimeError):
    def __init__(self, message: str, trajectory: int | None = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class EnsembleConfig:
    controller: str
    plant_variant: str = "static"
    n_traj: int = 60
    rho0_range: tuple[float, float] = (4.0, 30.0)
    u0: float = 1.0
    q_EL0: float | None = None  # None means Q/3
    t_final_min: float = 225.0
    seed: int = 0
    rho0: tuple[float, ...] | None = None  # explicit initial densities override sampling
    random_phase: bool = False

    def __post_init__(self):
        if self.controller not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller {self.controller!r}; "
                             f"valid kinds: {', '.join(CONTROLLER_KINDS)}")
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be at least 1, got {self.n_traj}")
        if self.rho0 is not None and len(self.rho0) != self.n_traj:
            raise ValueError("explicit rho0 must have n_traj entries")
        lo, hi = self.rho0_range
        if not 0 <= lo <= hi:
            raise ValueError(f"invalid rho0_range {self.rho0_range}")
        if not self.t_final_min > 0:
            raise ValueError("t_final_min must be positive")

    @property
    def t_final(self) -> float:
        return self.t_final_min / MINUTES_PER_HOUR

    def initial_densities(self) -> np.ndarray:
        if self.rho0 is not None:
            return np.asarray(self.rho0, dtype=float)
        rng = np.random.default_rng(self.seed)
        return rng.uniform(self.rho0_range[0], self.rho0_range[1], self.n_traj)


@dataclass
class EnsembleResult:
    traces: list[HybridTrace]
    t_grid_min: np.ndarray
    mse_curve: np.ndarray
    tmse: float
    rho0: np.ndarray
    loop: ClosedLoop
    metadata: dict = field(default_factory=dict)

    def column_on_grid(self, name: str) -> np.ndarray:
        """(n_traj, len(t_grid)) samples of a state component on the metric grid."""
        t = self.t_grid_min / MINUTES_PER_HOUR
        return np.array([_resample(tr, tr.column(name), t) for tr in self.traces])

    @property
    def final_u_hat(self) -> np.ndarray:
        return np.array([tr.column(_u_hat_name(tr))[-1] for tr in self.traces])

    @property
    def final_rho(self) -> np.ndarray:
        return np.array([tr.column("rho")[-1] for tr in self.traces])

    def mse_at(self, t_min: float) -> float:
        return mse(self.traces, t_min / MINUTES_PER_HOUR, self.loop.rho_ref)


def _u_hat_name(trace: HybridTrace) -> str:
    return "u_hat" if "u_hat" in trace.state_names else "u_hat1"


def step_size(dither: DitherConfig, steps_per_period: int = 50) -> tuple[float, int]:
    """Integrator step (hours) and the number of steps per minute.

    Targets ``steps_per_period`` steps per period of the fastest oscillator,
    then shortens the step so a minute is a whole number of steps.
    """
    target = dither.eps_p / (steps_per_period * float(max(dither.omega)))
    per_minute = math.ceil((1.0 / MINUTES_PER_HOUR) / target - 1e-9)
    return (1.0 / MINUTES_PER_HOUR) / per_minute, per_minute


def _resample(trace: HybridTrace, values: np.ndarray, t: np.ndarray) -> np.ndarray:
    if t.size and (t[0] < trace.t[0] - 1e-12 or t[-1] > trace.t[-1] + 1e-9):
        raise ValueError(f"time {t[-1]:g} outside the trace horizon [{trace.t[0]:g}, {trace.t[-1]:g}]")
    return np.interp(t, trace.t, values)


def mse(traces: Sequence[HybridTrace], t, rho_ref: float = 20.0):
    """Mean over trajectories of (rho_i(t) - rho_ref)^2, linearly interpolated; ``t`` in hours."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    dev = np.array([_resample(tr, tr.column("rho"), t_arr) - rho_ref for tr in traces])
    out = np.mean(dev ** 2, axis=0)
    return float(out[0]) if np.ndim(t) == 0 else out


def tmse(mse_curve, t, t_f: float | None = None) -> float:
    """Trapezoidal time average of an MSE curve over [0, t_f]."""
    mse_curve = np.asarray(mse_curve, dtype=float)
    t = np.asarray(t, dtype=float)
    if mse_curve.shape != t.shape or t.size < 2:
        raise ValueError("mse_curve and t must be matching arrays with at least two samples")
    t_f = float(t[-1]) if t_f is None else float(t_f)
    if t[0] > 1e-12 or t[-1] < t_f - 1e-9 * max(1.0, t_f):
        raise ValueError(f"curve spans [{t[0]:g}, {t[-1]:g}], shorter than [0, {t_f:g}]")
    keep = t <= t_f + 1e-9 * max(1.0, t_f)
    return float(np.trapezoid(mse_curve[keep], t[keep]) / t_f)


def run_ensemble(config: EnsembleConfig, params: HighwayParams, gains: ControllerGains,
                 dither: DitherConfig, rho_ref: float = 20.0, steps_per_period: int = 50,
                 j_max: int = 100_000) -> EnsembleResult:
    """Simulate every trajectory of the ensemble in one lockstep batch."""
    loop = compose_closed_loop(config.controller, config.plant_variant, gains, dither, params,
                               rho_ref)
    rho0 = config.initial_densities()
    mu0 = None
    if config.random_phase:
        mu0 = initial_phase(dither.m, rho0.size, np.random.default_rng(config.seed + 1))
    q0 = params.Q / 3 if config.q_EL0 is None else config.q_EL0
    x0 = loop.initial_state(rho0, config.u0, q_el0=q0, mu0=mu0)
    h, per_minute = step_size(dither, steps_per_period)
    integ = IntegratorConfig(h=h, t_max=config.t_final, j_max=j_max, record_stride=per_minute)
    try:
        traces = simulate_batch(loop.system, x0, integ)
    except IntegrationError as exc:
        raise EnsembleError(f"trajectory {exc.column} failed: {exc}", exc.column) from exc
    t_grid_min = np.arange(0.0, config.t_final_min + 1e-9, 1.0)
    if t_grid_min[-1] < config.t_final_min - 1e-9:
        t_grid_min = np.append(t_grid_min, config.t_final_min)
    curve = mse(traces, t_grid_min / MINUTES_PER_HOUR, rho_ref)
    meta = {"ensemble": {**config.__dict__, "rho0": [float(r) for r in rho0]},
            "h_hours": h, "steps_per_minute": per_minute}
    return EnsembleResult(traces, t_grid_min, curve, tmse(curve, t_grid_min), rho0, loop, meta)


def write_trace_csv(result: EnsembleResult, index: int, path) -> str:
    """One trajectory as CSV with time in minutes."""
    trace = result.traces[index]
    cols = result.loop.table(trace)
    return replace(trace, t=trace.t * MINUTES_PER_HOUR).to_csv(path, columns=cols)


def write_ensemble_outputs(result: EnsembleResult, out_dir, extra_summary: dict | None = None
                           ) -> dict:
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    kind = result.loop.kind
    for i in range(len(result.traces)):
        write_trace_csv(result, i, out / "traces" / f"{kind}_{i:03d}.csv")
    with open(out / f"mse_{kind}.csv", "w") as fh:
        fh.write("t,mse\n")
        for t, m in zip(result.t_grid_min, result.mse_curve):
            fh.write(f"{t:.9g},{m:.9g}\n")
    summary = {
        "controller": kind,
        "tmse": result.tmse,
        "mse_final": float(result.mse_curve[-1]),
        "mean_abs_rho_final_dev": float(np.mean(np.abs(result.final_rho - result.loop.rho_ref))),
        "max_abs_rho_final_dev": float(np.max(np.abs(result.final_rho - result.loop.rho_ref))),
        "mean_u_hat_final": float(np.mean(result.final_u_hat)),
        **(extra_summary or {}),
    }
    return summary


@dataclass
class SweepRow:
    gamma_EL: float
    tmse: dict[str, float]


def sample_gammas(nominal: float, n_values: int, spread: float, seed: int) -> np.ndarray:
    if not 0 <= spread < 1:
        raise ValueError(f"spread must lie in [0, 1), got {spread}")
    rng = np.random.default_rng(seed)
    return rng.uniform(nominal * (1 - spread), nominal * (1 + spread), n_values)


def gamma_sweep(base: EnsembleConfig, params: HighwayParams, gains: ControllerGains,
                dither: DitherConfig, n_values: int = 20, n_seeds: int = 5, spread: float = 0.15,
                controllers: Sequence[str] = CONTROLLER_KINDS, rho_ref: float = 20.0, seed: int = 0, threads: int = 1,
                steps_per_period: int = 50) -> list[SweepRow]:
    """Mean tMSE per controller for uniformly sampled gamma_EL values.

    Every row reuses the same ``n_seeds`` initial densities (drawn with
    ``base.seed``) so that rows differ only in gamma_EL. All rows of one
    controller run as a single batch, with gamma_EL varying across columns;
    each column evolves exactly as it would in a separate run.
    """
    if n_values < 1 or n_seeds < 1:
        raise ValueError("n_values and n_seeds must be at least 1")
    gammas = sample_gammas(params.gamma_EL, n_values, spread, seed)
    rho0 = replace(base, n_traj=n_seeds, rho0=None).initial_densities()
    chunks = [c for c in np.array_split(np.arange(n_values), max(1, threads)) if c.size]

    def run_chunk(kind: str, rows: np.ndarray) -> list[float]:
        cfg = replace(base, controller=kind, n_traj=rows.size * n_seeds,
                      rho0=tuple(np.tile(rho0, rows.size)))
        p = params.replace(gamma_EL=np.repeat(gammas[rows], n_seeds))
        try:
            res = run_ensemble(cfg, p, gains, dither, rho_ref, steps_per_period)
        except EnsembleError as exc:
            row = rows[exc.trajectory // n_seeds] if exc.trajectory is not None else rows[0]
            raise EnsembleError(f"gamma_EL={gammas[row]:.6g}: {exc}", exc.trajectory) from exc
        t_h = res.t_grid_min / MINUTES_PER_HOUR
        out = []
        for r in range(rows.size):
            group = res.traces[r * n_seeds:(r + 1) * n_seeds]
            out.append(tmse(mse(group, t_h, rho_ref), res.t_grid_min))
        return out

    table = {kind: np.empty(n_values) for kind in controllers}
    jobs = [(kind, rows) for kind in controllers for rows in chunks]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda job: run_chunk(*job), jobs))
    else:
        results = [run_chunk(*job) for job in jobs]
    for (kind, rows), values in zip(jobs, results):
        table[kind][rows] = values
    return [SweepRow(float(g), {kind: float(table[kind][i]) for kind in controllers})
            for i, g in enumerate(gammas)]


def sweep_table_csv(rows: Sequence[SweepRow], path=None) -> str:
    kinds = list(rows[0].tmse) if rows else []
    lines = ["gamma_EL," + ",".join(f"tmse_{k}" for k in kinds)]
    for row in rows:
        lines.append(f"{row.gamma_EL:.9g}," + ",".join(f"{row.tmse[k]:.9g}" for k in kinds))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def summary_json(data: dict, path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")
