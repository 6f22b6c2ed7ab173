"""Sinusoidal exploration signals generated by linear oscillators on the torus."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd, lcm
from typing import Iterable, Sequence

import numpy as np


def parse_frequency(value) -> Fraction:
    """Accept ints, Fractions or strings like ``"3/2"``; floats must be exact."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError(f"not a frequency: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        frac = Fraction(value).limit_denominator(10_000)
        if float(frac) != value:
            raise ValueError(f"frequency {value!r} is not a simple rational; pass it as 'p/q'")
        return frac
    raise ValueError(f"not a frequency: {value!r}")


@dataclass(frozen=True)
class FrequencyReport:
    ok: bool
    violations: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def validate_frequencies(omega: Iterable) -> FrequencyReport:
    """Check positivity, rationality and the no-repeat / no-doubling rule."""
    freqs = [parse_frequency(w) for w in omega]
    problems = []
    for i, w in enumerate(freqs, start=1):
        if w <= 0:
            problems.append(f"omega_{i} = {w} is not positive")
    for i, wi in enumerate(freqs, start=1):
        for j, wj in enumerate(freqs, start=1):
            if j <= i:
                continue
            if wi == wj:
                problems.append(f"omega_{i} = omega_{j} = {wi}")
            if wi == 2 * wj:
                problems.append(f"omega_{i} = 2*omega_{j} ({wi} = 2*{wj})")
            if wj == 2 * wi:
                problems.append(f"omega_{j} = 2*omega_{i} ({wj} = 2*{wi})")
    return FrequencyReport(not problems, tuple(problems))


@dataclass(frozen=True)
class DitherConfig:
    omega: tuple[Fraction, ...] = (Fraction(1),)
    eps_p: float = 0.01
    eps_a: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(parse_frequency(w) for w in self.omega))
        if not self.omega:
            raise ValueError("at least one dither frequency is required")
        report = validate_frequencies(self.omega)
        if not report:
            raise ValueError("invalid dither frequencies: " + "; ".join(report.violations))
        if not self.eps_p > 0:
            raise ValueError("eps_p must be positive")
        if not self.eps_a >= 0:
            raise ValueError("eps_a must be non-negative")

    @property
    def m(self) -> int:
        return len(self.omega)

    @property
    def omega_float(self) -> np.ndarray:
        return np.array([float(w) for w in self.omega])

    def rotation_matrix(self) -> np.ndarray:
        """Block-diagonal R with blocks 2*pi*[[0, w], [-w, 0]]."""
        R = np.zeros((2 * self.m, 2 * self.m))
        for i, w in enumerate(self.omega_float):
            R[2 * i, 2 * i + 1] = 2 * np.pi * w
            R[2 * i + 1, 2 * i] = -2 * np.pi * w
        return R

    def periods(self) -> np.ndarray:
        return self.eps_p / self.omega_float

    def common_period(self) -> float:
        """Smallest time after which every oscillator is back at its start."""
        # period_i = eps_p / omega_i; the lcm of rationals is lcm(numerators)/gcd(denominators)
        inv = [1 / w for w in self.omega]  # periods in units of eps_p
        num = lcm(*(f.numerator for f in inv))
        den = 0
        for f in inv:
            den = gcd(den, f.denominator)
        return self.eps_p * num / den

    def to_dict(self) -> dict:
        return {"omega": [str(w) for w in self.omega], "eps_p": self.eps_p, "eps_a": self.eps_a}


def initial_phase(m: int, batch: int | None = None, rng: np.random.Generator | None = None
                  ) -> np.ndarray:
    """Oscillator state: (1, 0) per pair, or uniformly random phases if ``rng`` is given."""
    shape = (2 * m,) if batch is None else (2 * m, batch)
    mu = np.zeros(shape)
    if rng is None:
        mu[0::2] = 1.0
        return mu
    phases = rng.uniform(0.0, 2 * np.pi, size=(m,) + shape[1:])
    mu[0::2] = np.cos(phases)
    mu[1::2] = np.sin(phases)
    return mu


def oscillator_rhs(mu: np.ndarray, config: DitherConfig) -> np.ndarray:
    """(1/eps_p) R mu, evaluated pairwise so a trailing batch axis is allowed."""
    mu = np.asarray(mu, dtype=float)
    rate = (2 * np.pi / config.eps_p) * config.omega_float
    if mu.ndim > 1:
        rate = rate.reshape((-1,) + (1,) * (mu.ndim - 1))
    out = np.empty_like(mu)
    out[0::2] = rate * mu[1::2]
    out[1::2] = -rate * mu[0::2]
    return out


def odd_components(mu: np.ndarray) -> np.ndarray:
    return np.asarray(mu)[0::2]


def compose_input(u_hat, mu, config: DitherConfig) -> np.ndarray:
    """Applied incentive u = u_hat + eps_a * (mu_1, mu_3, ...)."""
    u_hat = np.asarray(u_hat, dtype=float)
    odd = odd_components(mu)
    if u_hat.shape[0] != odd.shape[0]:
        raise ValueError(f"u_hat has {u_hat.shape[0]} entries but the dither has {odd.shape[0]}")
    return u_hat + config.eps_a * odd


def demodulation_gain(mu, config: DitherConfig) -> np.ndarray:
    """M(mu) = (2/eps_a) * (mu_1, mu_3, ...)."""
    if config.eps_a == 0:
        raise ValueError("demodulation needs a non-zero dither amplitude eps_a")
    return (2.0 / config.eps_a) * odd_components(mu)


def normalize_pairs(mu: np.ndarray) -> np.ndarray:
    """Project each (mu_{2i-1}, mu_{2i}) pair back onto the unit circle."""
    norm = np.sqrt(mu[0::2] ** 2 + mu[1::2] ** 2)
    out = np.array(mu, dtype=float)
    out[0::2] /= norm
    out[1::2] /= norm
    return out


def analytic_dither(t, config: DitherConfig, mu0: Sequence[float] | None = None) -> np.ndarray:
    """Closed-form oscillator trajectory; rows are mu components, columns times."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    m = config.m
    mu0 = initial_phase(m) if mu0 is None else np.asarray(mu0, dtype=float)
    out = np.empty((2 * m, t.size))
    for i, w in enumerate(config.omega_float):
        theta = 2 * np.pi * w * t / config.eps_p
        c, s = np.cos(theta), np.sin(theta)
        a, b = mu0[2 * i], mu0[2 * i + 1]
        # rotation by -theta: mu' = (w b, -w a)
        out[2 * i] = c * a + s * b
        out[2 * i + 1] = -s * a + c * b
    return out
