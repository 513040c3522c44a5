"""Second-order system model and discrete-time simulation.

Continuous model: a rotational mass-spring-damper driven by torque,
J*theta'' + b*theta' + k*theta = u, reduced to the canonical form
gain * wn^2 / (s^2 + 2*zeta*wn*s + wn^2). Only the underdamped case
(0 < zeta < 1) is supported. Discretization is the bilinear (Tustin)
transform at a fixed sampling period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class OverdampedExcludedError(ValueError):
    """Raised when parameters imply zeta >= 1 (no oscillatory response)."""

    def __init__(self, zeta: float):
        self.zeta = zeta
        super().__init__(
            f"damping factor {zeta:.6g} >= 1: overdamped/critically damped "
            "systems are out of scope (no overshoot to identify)"
        )


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of the rotational model, all strictly positive."""

    inertia: float  # J, kg*m^2
    damping: float  # b, N*m*s
    spring: float  # k, N*m/rad

    def __post_init__(self):
        for name in ("inertia", "damping", "spring"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and > 0, got {v}")


@dataclass(frozen=True)
class CanonicalParams:
    """Canonical second-order parameters: natural frequency, damping, DC gain."""

    omega_n: float  # rad/s
    zeta: float
    gain: float = 1.0

    def __post_init__(self):
        if not (self.omega_n > 0 and math.isfinite(self.omega_n)):
            raise ValueError(f"omega_n must be finite and > 0, got {self.omega_n}")
        if not (self.zeta > 0 and math.isfinite(self.zeta)):
            raise ValueError(f"zeta must be finite and > 0, got {self.zeta}")
        if self.zeta >= 1.0:
            raise OverdampedExcludedError(self.zeta)
        if not (self.gain > 0 and math.isfinite(self.gain)):
            raise ValueError(f"gain must be finite and > 0, got {self.gain}")


def canonical_from_physical(p: PhysicalParams) -> CanonicalParams:
    """Map (J, b, k) to (omega_n, zeta, gain).

    omega_n = sqrt(k/J), zeta = b / sqrt(4*k*J), gain = 1/k. Raises
    OverdampedExcludedError when the resulting zeta >= 1.
    """
    omega_n = math.sqrt(p.spring / p.inertia)
    zeta = p.damping / math.sqrt(4.0 * p.spring * p.inertia)
    if zeta >= 1.0:
        raise OverdampedExcludedError(zeta)
    return CanonicalParams(omega_n=omega_n, zeta=zeta, gain=1.0 / p.spring)


def poles(c: CanonicalParams) -> tuple[complex, complex]:
    """Conjugate pole pair -zeta*wn +/- j*wn*sqrt(1-zeta^2)."""
    re = -c.zeta * c.omega_n
    im = c.omega_n * math.sqrt(1.0 - c.zeta * c.zeta)
    return complex(re, im), complex(re, -im)


@dataclass(frozen=True)
class DiscreteStateSpace:
    """Discrete 2-state system x' = A x + B u, y = C x + D u at period Ts."""

    A: np.ndarray  # (2, 2)
    B: np.ndarray  # (2,)
    C: np.ndarray  # (2,)
    D: float
    Ts: float

    @property
    def fs(self) -> float:
        return 1.0 / self.Ts


def tustin_discretize(c: CanonicalParams, ts: float) -> DiscreteStateSpace:
    """Bilinear-transform discretization of the canonical system.

    With a = 2/Ts and M = a^2 + 2*a*zeta*wn + wn^2:
        A = [[0, 1], [1 - 2(a^2+wn^2)/M, 2(a^2-wn^2)/M]]
        B = [0, 1]^T
        C = gain * (4*a*wn^2/M^2) * [zeta*wn, a + zeta*wn]
        D = gain * wn^2 / M
    """
    if not ts > 0:
        raise ValueError(f"sampling period must be > 0, got {ts}")
    a = 2.0 / ts
    wn = c.omega_n
    m = a * a + 2.0 * a * c.zeta * wn + wn * wn
    A = np.array(
        [
            [0.0, 1.0],
            [1.0 - 2.0 * (a * a + wn * wn) / m, 2.0 * (a * a - wn * wn) / m],
        ]
    )
    B = np.array([0.0, 1.0])
    C = c.gain * (4.0 * a * wn * wn / (m * m)) * np.array([c.zeta * wn, a + c.zeta * wn])
    D = c.gain * wn * wn / m
    return DiscreteStateSpace(A=A, B=B, C=C, D=D, Ts=ts)


@dataclass(frozen=True)
class Step:
    magnitude: float = 1.0

    def label(self) -> str:
        return f"step:{self.magnitude:g}"


@dataclass(frozen=True)
class Ramp:
    slope: float = 1.0

    def label(self) -> str:
        return f"ramp:{self.slope:g}"


@dataclass(frozen=True)
class Sine:
    amplitude: float
    frequency_hz: float

    def label(self) -> str:
        return f"sine:{self.amplitude:g}:{self.frequency_hz:g}"


InputSignal = Union[Step, Ramp, Sine]


def parse_input_signal(label: str) -> InputSignal:
    """Parse "step:M", "ramp:S" or "sine:A:F" into an input signal."""
    parts = label.split(":")
    kind = parts[0].lower()
    try:
        if kind == "step":
            return Step(float(parts[1]) if len(parts) > 1 else 1.0)
        if kind == "ramp":
            return Ramp(float(parts[1]) if len(parts) > 1 else 1.0)
        if kind == "sine":
            return Sine(amplitude=float(parts[1]), frequency_hz=float(parts[2]))
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed input signal spec {label!r}") from exc
    raise ValueError(f"unknown input signal kind {kind!r}")


def generate_input(sig: InputSignal, n: int, fs: float) -> np.ndarray:
    """Sample an input signal: u[i] at t = i/fs, i = 0..n-1."""
    if n <= 0:
        raise ValueError(f"sample count must be > 0, got {n}")
    if fs <= 0:
        raise ValueError(f"sampling frequency must be > 0, got {fs}")
    t = np.arange(n) / fs
    if isinstance(sig, Step):
        if sig.magnitude == 0 or not math.isfinite(sig.magnitude):
            raise ValueError(f"step magnitude must be finite and nonzero, got {sig.magnitude}")
        return np.full(n, float(sig.magnitude))
    if isinstance(sig, Ramp):
        if sig.slope == 0 or not math.isfinite(sig.slope):
            raise ValueError(f"ramp slope must be finite and nonzero, got {sig.slope}")
        return sig.slope * t
    if isinstance(sig, Sine):
        if sig.frequency_hz <= 0:
            raise ValueError(f"sine frequency must be > 0, got {sig.frequency_hz}")
        if sig.amplitude == 0 or not math.isfinite(sig.amplitude):
            raise ValueError(f"sine amplitude must be finite and nonzero, got {sig.amplitude}")
        return sig.amplitude * np.sin(2.0 * np.pi * sig.frequency_hz * t)
    raise TypeError(f"unsupported input signal {sig!r}")


def simulate(ss: DiscreteStateSpace, u: np.ndarray) -> np.ndarray:
    """Run the state recursion from rest (x0 = 0) over the input sequence.

    y[k] = C x[k] + D u[k];  x[k+1] = A x[k] + B u[k].
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("input sequence must be a nonempty 1-D array")
    if not np.all(np.isfinite(u)):
        raise ValueError("input sequence contains non-finite values")
    a00, a01 = ss.A[0]
    a10, a11 = ss.A[1]
    b0, b1 = ss.B
    c0, c1 = ss.C
    d = float(ss.D)
    y = np.empty(u.size)
    x0 = 0.0
    x1 = 0.0
    for k, uk in enumerate(u.tolist()):
        y[k] = c0 * x0 + c1 * x1 + d * uk
        x0, x1 = a00 * x0 + a01 * x1 + b0 * uk, a10 * x0 + a11 * x1 + b1 * uk
    return y


def analytic_step_response(c: CanonicalParams, t) -> np.ndarray:
    """Closed-form unit step response of the underdamped canonical system.

    y(t) = gain * [1 - exp(-zeta*wn*t)/sqrt(1-zeta^2)
                   * sin(wd*t + atan(sqrt(1-zeta^2)/zeta))],
    wd = wn*sqrt(1-zeta^2). Accepts scalar or array t >= 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be >= 0")
    root = math.sqrt(1.0 - c.zeta * c.zeta)
    wd = c.omega_n * root
    phase = math.atan2(root, c.zeta)
    y = c.gain * (
        1.0 - np.exp(-c.zeta * c.omega_n * t) / root * np.sin(wd * t + phase)
    )
    return y


def add_measurement_noise(y: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. Gaussian(0, sigma^2) noise from a seeded generator."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    y = np.asarray(y, dtype=float)
    if sigma == 0:
        return y.copy()
    rng = np.random.default_rng(seed)
    return y + rng.normal(0.0, sigma, size=y.shape)


@dataclass
class Trajectory:
    """One simulated input/output pair with its generation metadata."""

    u: np.ndarray
    y: np.ndarray
    fs: float
    input: InputSignal
    zeta: float
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.u.shape != self.y.shape:
            raise ValueError("u and y must have equal length")

    @property
    def n(self) -> int:
        return self.u.size


def simulate_trajectory(
    input_signal: InputSignal,
    zeta: float,
    *,
    fs: float = 1000.0,
    duration_s: float = 10.0,
    omega_n: float = 1.0,
    gain: float = 1.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> Trajectory:
    """Simulate one noisy trajectory of duration_s seconds (inclusive endpoint)."""
    n = int(round(duration_s * fs)) + 1
    c = CanonicalParams(omega_n=omega_n, zeta=zeta, gain=gain)
    ss = tustin_discretize(c, 1.0 / fs)
    u = generate_input(input_signal, n, fs)
    y = simulate(ss, u)
    y = add_measurement_noise(y, noise_sigma, seed)
    return Trajectory(
        u=u, y=y, fs=fs, input=input_signal, zeta=zeta,
        noise_sigma=noise_sigma, seed=seed,
    )
