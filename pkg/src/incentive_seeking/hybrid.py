"""Hybrid dynamical systems: flow/jump data and a fixed-step RK4 integrator.

A system is the tuple (C, F, D, G): it flows along ``x' = F(x)`` while
``x`` is in the flow set C and jumps ``x+ = G(x)`` while ``x`` is in the jump
set D. Solutions are indexed by hybrid time (t, j).

All maps act on state arrays of shape ``(n,)`` or ``(n, B)``; the trailing
axis is a batch of independent trajectories integrated in lockstep.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

FlowMap = Callable[[np.ndarray], np.ndarray]
SetPredicate = Callable[[np.ndarray], "bool | np.ndarray"]

# relative tolerance for landing a timer on its boundary
_TIMER_SNAP = 1e-12


class IntegrationError(RuntimeError):
    """Raised when a flow map returns non-finite values."""

    def __init__(self, message: str, t: float | None = None, j: int | None = None,
                 component: int | None = None, column: int | None = None):
        self.t = t
        self.j = j
        self.component = component
        self.column = column
        if t is not None:
            message = f"{message} at (t={t:.9g}, j={j})"
        super().__init__(message)


class HybridTime(NamedTuple):
    t: float
    j: int


class Event(str, enum.Enum):
    FLOWED = "flowed"
    JUMPED = "jumped"
    LEFT_DOMAIN = "left_domain"


class TerminalReason(str, enum.Enum):
    HORIZON = "horizon"
    JUMP_BUDGET = "jump_budget"
    LEFT_DOMAIN = "left_domain"


@dataclass(frozen=True)
class Timer:
    """A state component with constant rate that triggers a jump at ``boundary``.

    The integrator shortens the step that would overshoot the boundary so the
    jump happens exactly on it.
    """

    index: int
    rate: float
    boundary: float


@dataclass(frozen=True)
class HybridSystem:
    flow_map: FlowMap
    state_dim: int
    flow_set: SetPredicate | None = None
    jump_map: FlowMap | None = None
    jump_set: SetPredicate | None = None
    state_names: tuple[str, ...] = ()
    timers: tuple[Timer, ...] = ()
    # maps a state back onto its manifold after every flow step
    project: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("state_dim must be positive")
        if self.state_names and len(self.state_names) != self.state_dim:
            raise ValueError(
                f"{len(self.state_names)} state names for dimension {self.state_dim}")
        if (self.jump_set is None) != (self.jump_map is None):
            raise ValueError("jump_map and jump_set must be given together")

    @property
    def names(self) -> tuple[str, ...]:
        return self.state_names or tuple(f"x{i + 1}" for i in range(self.state_dim))

    def in_flow_set(self, x: np.ndarray) -> np.ndarray:
        if self.flow_set is None:
            return _full(x, True)
        return np.broadcast_to(np.asarray(self.flow_set(x), dtype=bool), _batch_shape(x))

    def in_jump_set(self, x: np.ndarray) -> np.ndarray:
        if self.jump_set is None:
            return _full(x, False)
        return np.broadcast_to(np.asarray(self.jump_set(x), dtype=bool), _batch_shape(x))


@dataclass(frozen=True)
class IntegratorConfig:
    h: float
    t_max: float
    j_max: int = 10_000
    record_stride: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step h must be positive, got {self.h}")
        if not self.t_max > 0:
            raise ValueError(f"horizon t_max must be positive, got {self.t_max}")
        if self.j_max < 0:
            raise ValueError(f"j_max must be non-negative, got {self.j_max}")
        if self.record_stride < 1:
            raise ValueError(f"record_stride must be >= 1, got {self.record_stride}")


@dataclass
class HybridTrace:
    """Samples of one solution on its hybrid time domain."""

    t: np.ndarray
    j: np.ndarray
    x: np.ndarray  # shape (K, n)
    terminal_reason: TerminalReason
    state_names: tuple[str, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> Iterator[tuple[HybridTime, np.ndarray]]:
        for t, j, x in zip(self.t, self.j, self.x):
            yield HybridTime(float(t), int(j)), x

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]

    @property
    def n_jumps(self) -> int:
        return int(self.j[-1]) if len(self.j) else 0

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.state_names.index(name)]

    def jump_indices(self) -> np.ndarray:
        """Indices k such that sample k is pre-jump and k+1 post-jump."""
        return np.flatnonzero(np.diff(self.j) == 1)

    def to_csv(self, path=None, extra: dict[str, np.ndarray] | None = None,
               columns: Sequence[tuple[str, np.ndarray]] | None = None) -> str:
        """Write ``t,j,<state names...>[,extra...]`` with 9 significant digits.

        ``columns`` replaces the state columns with an explicit ordered list.
        """
        if columns is None:
            names = list(self.state_names) or [f"x{i + 1}" for i in range(self.x.shape[1])]
            columns = [(n, self.x[:, i]) for i, n in enumerate(names)]
        columns = list(columns) + list((extra or {}).items())
        names = [name for name, _ in columns]
        columns = [np.asarray(values) for _, values in columns]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "j", *names])
        for k in range(len(self.t)):
            writer.writerow([f"{self.t[k]:.9g}", str(int(self.j[k])),
                             *(f"{c[k]:.9g}" for c in columns)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _batch_shape(x: np.ndarray) -> tuple[int, ...]:
    return x.shape[1:]


def _full(x: np.ndarray, value: bool) -> np.ndarray:
    return np.full(_batch_shape(x), value, dtype=bool)


def _checked(f: FlowMap, x: np.ndarray) -> np.ndarray:
    dx = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(dx)):
        row, col = np.argwhere(~np.isfinite(dx.reshape(dx.shape[0], -1)))[0]
        raise IntegrationError(f"non-finite derivative in component {row}",
                               component=int(row), column=int(col))
    return dx


def flow_step(x: np.ndarray, h: float, flow_map: FlowMap) -> np.ndarray:
    """One classical Runge-Kutta step of size ``h`` for ``x' = flow_map(x)``."""
    x = np.asarray(x, dtype=float)
    k1 = _checked(flow_map, x)
    k2 = _checked(flow_map, x + 0.5 * h * k1)
    k3 = _checked(flow_map, x + 0.5 * h * k2)
    k4 = _checked(flow_map, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _timer_limit(x: np.ndarray, timers: Sequence[Timer], dt: float) -> float:
    for timer in timers:
        if timer.rate <= 0:
            continue
        remaining = (timer.boundary - x[timer.index]) / timer.rate
        remaining = remaining[remaining > _TIMER_SNAP * max(1.0, abs(timer.boundary))]
        if remaining.size:
            dt = min(dt, float(remaining.min()))
    return dt


def _snap_timers(x: np.ndarray, timers: Sequence[Timer]) -> None:
    for timer in timers:
        tol = _TIMER_SNAP * max(1.0, abs(timer.boundary))
        row = x[timer.index]
        hit = (row > timer.boundary - tol) if timer.rate > 0 else (row < timer.boundary + tol)
        row[hit] = timer.boundary


def hybrid_step(x: np.ndarray, system: HybridSystem, h: float
                ) -> tuple[np.ndarray, tuple[float, int], Event]:
    """Advance a single state by one jump or one (possibly shortened) flow step.

    Returns the new state, the hybrid-time increment ``(dt, dj)`` and the event.
    Jumps take priority on C ∩ D.
    """
    x = np.asarray(x, dtype=float)
    col = x[:, None]
    if system.in_jump_set(col)[0]:
        return np.asarray(system.jump_map(col), dtype=float)[:, 0], (0.0, 1), Event.JUMPED
    if not system.in_flow_set(col)[0]:
        return x, (0.0, 0), Event.LEFT_DOMAIN
    dt = _timer_limit(col, system.timers, h)
    new = flow_step(col, dt, system.flow_map)
    if system.project is not None:
        new = system.project(new)
    _snap_timers(new, system.timers)
    return new[:, 0], (dt, 0), Event.FLOWED


class _Recorder:
    def __init__(self, n_batch: int):
        self.t = [[] for _ in range(n_batch)]
        self.j = [[] for _ in range(n_batch)]
        self.x = [[] for _ in range(n_batch)]

    def add(self, cols: np.ndarray, t: float, j: np.ndarray, x: np.ndarray) -> None:
        for b in cols:
            if self.t[b] and self.t[b][-1] == t and self.j[b][-1] == j[b]:
                continue
            self.t[b].append(t)
            self.j[b].append(int(j[b]))
            self.x[b].append(x[:, b].copy())

    def trace(self, b: int, reason: TerminalReason, names: tuple[str, ...], n: int) -> HybridTrace:
        xs = np.array(self.x[b]) if self.x[b] else np.empty((0, n))
        return HybridTrace(np.array(self.t[b], dtype=float), np.array(self.j[b], dtype=int),
                           xs, reason, names)


def simulate_batch(system: HybridSystem, x0: np.ndarray, config: IntegratorConfig
                   ) -> list[HybridTrace]:
    """Integrate B trajectories (columns of ``x0``) in lockstep.

    Flow steps land on the grid ``t = k*h``; a timer boundary splits a step in
    two so both the jump and the grid stay exact; the split applies to the
    whole batch, so columns whose timers are out of phase see extra step
    boundaries (results then agree with single runs up to truncation error). Every
    ``record_stride`` grid
    points, every jump (pre and post state) and the final state are recorded.
    """
    x = np.array(x0, dtype=float)
    if x.ndim != 2 or x.shape[0] != system.state_dim:
        raise ValueError(f"x0 must have shape ({system.state_dim}, B), got {x.shape}")
    n, n_batch = x.shape
    names = system.names
    j = np.zeros(n_batch, dtype=int)
    alive = np.ones(n_batch, dtype=bool)
    reasons: list[TerminalReason | None] = [None] * n_batch
    rec = _Recorder(n_batch)

    outside = ~(system.in_flow_set(x) | system.in_jump_set(x))
    for b in np.flatnonzero(outside):
        alive[b] = False
        reasons[b] = TerminalReason.LEFT_DOMAIN
    rec.add(np.flatnonzero(alive), 0.0, j, x)

    h, t_max = config.h, config.t_max
    t = 0.0
    k = 0  # grid index of the last grid point at or before t
    end_tol = 1e-9 * h
    while alive.any():
        in_d = system.in_jump_set(x) & alive
        if in_d.any():
            budget = in_d & (j >= config.j_max)
            for b in np.flatnonzero(budget):
                rec.add(np.array([b]), t, j, x)
                alive[b] = False
                reasons[b] = TerminalReason.JUMP_BUDGET
            jumping = in_d & ~budget
            if jumping.any():
                cols = np.flatnonzero(jumping)
                rec.add(cols, t, j, x)
                x[:, cols] = np.asarray(system.jump_map(x[:, cols]), dtype=float)
                j[cols] += 1
                rec.add(cols, t, j, x)
            continue

        if t >= t_max - end_tol:
            for b in np.flatnonzero(alive):
                reasons[b] = TerminalReason.HORIZON
            break

        leaving = alive & ~system.in_flow_set(x)
        for b in np.flatnonzero(leaving):
            rec.add(np.array([b]), t, j, x)
            alive[b] = False
            reasons[b] = TerminalReason.LEFT_DOMAIN
        if not alive.any():
            break

        grid_next = (k + 1) * h
        dt = min(grid_next, t_max) - t
        cols = np.flatnonzero(alive)
        all_alive = cols.size == n_batch
        xa = x if all_alive else x[:, cols]
        dt = _timer_limit(xa, system.timers, dt)
        try:
            new = flow_step(xa, dt, system.flow_map)
        except IntegrationError as exc:
            b = int(cols[exc.column or 0])
            raise IntegrationError(f"{exc} (trajectory {b})", t=t, j=int(j[b]),
                                   component=exc.component, column=b) from None
        if system.project is not None:
            new = system.project(new)
        _snap_timers(new, system.timers)
        if all_alive:
            x = new
        else:
            x[:, cols] = new

        if abs(t + dt - grid_next) <= end_tol:
            k += 1
            t = k * h
            on_grid = True
        else:
            t = t + dt
            on_grid = False
        at_end = t >= t_max - end_tol
        if at_end:
            t = t_max
        if at_end or (on_grid and k % config.record_stride == 0):
            rec.add(cols, t, j, x)

    # final state of every column that ran
    for b in range(n_batch):
        if reasons[b] is None:
            reasons[b] = TerminalReason.HORIZON
    last_t = t
    for b in np.flatnonzero(alive):
        rec.add(np.array([b]), last_t, j, x)
    return [rec.trace(b, reasons[b], names, n) for b in range(n_batch)]


def simulate(system: HybridSystem, x0, config: IntegratorConfig) -> HybridTrace:
    """Integrate one solution from ``x0`` until the horizon, jump budget or domain exit."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    return simulate_batch(system, x0[:, None], config)[0]
