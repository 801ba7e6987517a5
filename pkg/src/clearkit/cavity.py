"""Classical intracavity-field dynamics.

Equation of motion in the carrier frame::

    d(alpha)/dt = -i (delta + K |alpha|^2) alpha - (kappa/2) alpha - i eps(t)

with ``delta`` the branch detuning from :func:`clearkit.core.detuning_for_state`.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from clearkit.core import (
    BRANCHES,
    ConfigError,
    PulseEnvelope,
    QubitState,
    SystemParams,
    detuning_for_state,
)

# Fraction of 1/rate allowed per RK4 step, and hard upper bound (1 ns).
STEP_FRACTION = 0.02
MAX_STEP = 1e-3
_TIME_EPS = 1e-12


def propagate_linear(alpha0: complex, delta: float, kappa: float, eps: complex, t: float) -> complex:
    """Exact solution of the driven damped oscillator over a constant segment."""
    if t < 0:
        raise ConfigError("t must be >= 0")
    rate = complex(kappa / 2.0, delta)
    alpha_ss = -1j * eps / rate
    return alpha_ss + (alpha0 - alpha_ss) * np.exp(-rate * t)


def default_step(kappa: float, delta: float) -> float:
    bounds = [STEP_FRACTION / kappa, MAX_STEP]
    if delta != 0:
        bounds.append(STEP_FRACTION / abs(delta))
    return min(bounds)


def _check_step(dt: float, kappa: float, delta: float) -> None:
    limit = STEP_FRACTION / kappa
    if delta != 0:
        limit = min(limit, STEP_FRACTION / abs(delta))
    if not dt > 0 or dt > limit * (1 + 1e-12):
        raise ConfigError(f"RK4 step {dt!r} us outside (0, {limit:.6g}] for kappa={kappa}, delta={delta}")


def propagate_kerr(
    alpha0: complex,
    delta: float,
    kappa: float,
    kerr: float,
    eps: complex,
    t: float,
    dt: float | None = None,
) -> complex:
    """Fixed-step RK4 over a constant-drive segment.

    The segment is split into ``ceil(t/dt)`` equal steps so the final step
    lands exactly on ``t``.
    """
    if t < 0:
        raise ConfigError("t must be >= 0")
    if dt is None:
        dt = default_step(kappa, delta)
    _check_step(dt, kappa, delta)
    if t == 0:
        return complex(alpha0)
    n = max(1, math.ceil(t / dt - 1e-9))
    h = t / n
    a = complex(alpha0)
    half_k = kappa / 2.0
    drive = -1j * complex(eps)

    def f(x: complex) -> complex:
        return -1j * (delta + kerr * (x.real * x.real + x.imag * x.imag)) * x - half_k * x + drive

    h2 = h / 2.0
    h6 = h / 6.0
    for _ in range(n):
        k1 = f(a)
        k2 = f(a + h2 * k1)
        k3 = f(a + h2 * k2)
        k4 = f(a + h * k3)
        a = a + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return a


@dataclass(frozen=True)
class Trajectory:
    """Sampled cavity field; ``alpha`` maps each simulated branch to samples."""

    times: np.ndarray
    alpha: Mapping[QubitState, np.ndarray]
    sample_interval: float | None = None

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def n(self, state: QubitState) -> np.ndarray:
        a = self.alpha[state]
        return a.real**2 + a.imag**2

    def final(self, state: QubitState) -> complex:
        return complex(self.alpha[state][-1])

    def merge(self, other: "Trajectory") -> "Trajectory":
        if not np.array_equal(self.times, other.times):
            raise ValueError("cannot merge trajectories on different time grids")
        return Trajectory(self.times, {**self.alpha, **other.alpha}, self.sample_interval)

    def to_csv(self) -> str:
        """Both-branch CSV text with 17 significant digits."""
        g = self.alpha[QubitState.GROUND]
        e = self.alpha[QubitState.EXCITED]
        buf = io.StringIO()
        buf.write("t_us,re_g,im_g,re_e,im_e,n_g,n_e\n")
        ng, ne = self.n(QubitState.GROUND), self.n(QubitState.EXCITED)
        for row in zip(self.times, g.real, g.imag, e.real, e.imag, ng, ne):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def sample_times(pulse: PulseEnvelope, sample_interval: float | None) -> np.ndarray:
    """Uniform grid plus every segment boundary, ending at the pulse duration."""
    bounds = pulse.boundaries()
    total = bounds[-1]
    pts = list(bounds)
    if sample_interval is not None:
        if not sample_interval > 0:
            raise ConfigError("sample_interval must be > 0")
        k = int(math.floor(total / sample_interval + 1e-9))
        pts.extend(i * sample_interval for i in range(k + 1))
    pts.sort()
    out = [pts[0]]
    for p in pts[1:]:
        if p - out[-1] > _TIME_EPS:
            out.append(p)
        elif p in bounds:
            out[-1] = p
    out = [p for p in out if p <= total + _TIME_EPS]
    out[-1] = total
    return np.asarray(out)


def simulate_pulse(
    params: SystemParams,
    pulse: PulseEnvelope,
    state: QubitState,
    kerr_enabled: bool = False,
    sample_interval: float | None = None,
    *,
    dt: float | None = None,
    detuning: float | None = None,
    alpha0: complex = 0.0,
) -> Trajectory:
    """Propagate the cavity through ``pulse`` for one qubit branch.

    Samples fall on multiples of ``sample_interval`` and on every segment
    boundary; with ``sample_interval=None`` only boundaries are sampled.
    ``detuning`` overrides the midpoint-carrier branch detuning.
    """
    if not isinstance(pulse, PulseEnvelope) or not pulse.segments:
        raise ConfigError("simulate_pulse needs a non-empty PulseEnvelope")
    delta = detuning_for_state(params, state) if detuning is None else detuning
    times = sample_times(pulse, sample_interval)
    bounds = pulse.boundaries()
    if kerr_enabled and dt is None:
        dt = default_step(params.kappa, delta)

    out = np.empty(len(times), dtype=complex)
    a = complex(alpha0)
    out[0] = a
    seg = 0
    for i in range(1, len(times)):
        t0, t1 = times[i - 1], times[i]
        while bounds[seg + 1] <= t0 + _TIME_EPS:
            seg += 1
        eps = pulse.segments[seg].amplitude
        span = t1 - t0
        if kerr_enabled:
            a = propagate_kerr(a, delta, params.kappa, params.kerr, eps, span, dt)
        else:
            a = complex(propagate_linear(a, delta, params.kappa, eps, span))
        out[i] = a
    return Trajectory(times, {state: out}, sample_interval)


def simulate_both(
    params: SystemParams,
    pulse: PulseEnvelope,
    kerr_enabled: bool = False,
    sample_interval: float | None = None,
    **kwargs,
) -> Trajectory:
    trajs = [simulate_pulse(params, pulse, s, kerr_enabled, sample_interval, **kwargs) for s in BRANCHES]
    return trajs[0].merge(trajs[1])


class SteadyState(NamedTuple):
    n: float
    alpha: complex
    bistable: bool


def _cubic_roots(delta: float, kerr: float, kappa: float, eps2: float) -> np.ndarray:
    coeffs = [kerr * kerr, 2.0 * delta * kerr, delta * delta + kappa * kappa / 4.0, -eps2]
    roots = np.roots(coeffs)
    real = roots[np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots))].real
    return np.sort(real[real >= 0])


def _polish(n: float, delta: float, kerr: float, kappa: float, eps2: float) -> float:
    for _ in range(4):
        d = delta + kerr * n
        f = n * (d * d + kappa * kappa / 4.0) - eps2
        df = d * d + kappa * kappa / 4.0 + 2.0 * n * kerr * d
        if df == 0:
            break
        n -= f / df
    return n


def steady_state_kerr(
    params: SystemParams,
    eps: complex,
    state: QubitState,
    *,
    detuning: float | None = None,
    steps: int = 400,
) -> SteadyState:
    """Steady photon number of the Kerr cavity on the low-power branch.

    Solves ``n [(delta + K n)^2 + (kappa/2)^2] = |eps|^2`` by sweeping the
    drive up from zero and following the root nearest the previous one.
    ``bistable`` is set when the cubic has several non-negative roots at the
    requested drive.
    """
    delta = detuning_for_state(params, state) if detuning is None else detuning
    kappa, kerr = params.kappa, params.kerr
    eps = complex(eps)
    eps2 = abs(eps) ** 2
    if kerr == 0.0 or eps2 == 0.0:
        n = eps2 / (delta * delta + kappa * kappa / 4.0)
        bistable = False
    else:
        n = 0.0
        for e2 in np.linspace(0.0, eps2, steps + 1)[1:]:
            roots = _cubic_roots(delta, kerr, kappa, e2)
            n = float(roots[np.argmin(np.abs(roots - n))])
        n = _polish(n, delta, kerr, kappa, eps2)
        bistable = len(_cubic_roots(delta, kerr, kappa, eps2)) > 1
    alpha = -1j * eps / complex(kappa / 2.0, delta + kerr * n)
    return SteadyState(float(n), complex(alpha), bool(bistable))


def free_decay(n0: float, kappa: float, t: float) -> float:
    if n0 < 0 or t < 0:
        raise ConfigError("free_decay needs n0 >= 0 and t >= 0")
    return n0 * math.exp(-kappa * t)


def stark_shift(n: float, chi: float) -> float:
    """ac Stark shift of the qubit, rad/us."""
    if n < 0:
        raise ConfigError("photon number must be >= 0")
    return 2.0 * chi * n


@dataclass(frozen=True)
class DriveCalibration:
    eps_one_photon: float

    def p_norm_of(self, eps: complex) -> float:
        return abs(eps) ** 2 / self.eps_one_photon**2

    def eps_for(self, p_norm: float) -> float:
        if p_norm < 0:
            raise ConfigError("p_norm must be >= 0")
        return math.sqrt(p_norm) * self.eps_one_photon


def calibrate_drive(params: SystemParams) -> DriveCalibration:
    """Drive strength giving one steady-state photon (linear model, midpoint carrier)."""
    return DriveCalibration(math.hypot(params.chi, params.kappa / 2.0))


def max_mirror_error(traj: Trajectory) -> float:
    """max_t |alpha_e + conj(alpha_g)|; zero for real drives at the midpoint."""
    g = traj.alpha[QubitState.GROUND]
    e = traj.alpha[QubitState.EXCITED]
    return float(np.max(np.abs(e + np.conj(g))))


def relative_difference(a: Sequence[complex] | np.ndarray, b: Sequence[complex] | np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)
