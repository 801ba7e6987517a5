"""Transient-Stark Ramsey traces: synthesis and photon-number extraction.

The Ramsey signal after a residual coherent population ``n0`` decaying at
rate ``kappa`` is::

    S(t) = 1/2 [1 - Im exp(-(G2 + i D) t + i (phi0 - 2 n0 chi tau(t)))]
    tau(t) = (1 - exp(-(kappa + 2 i chi) t)) / (kappa + 2 i chi)

with Ramsey detuning ``D`` and dephasing rate ``G2``. ``kappa``, ``chi``,
``D`` and ``G2`` are held fixed when fitting; only ``n0`` and ``phi0`` float.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from clearkit.core import TWO_PI, ConfigError, NumericalError, SystemParams

DEFAULT_DETUNING_MHZ = 10.0
DEFAULT_GRID = tuple(np.linspace(0.0, 0.6, 61))

N0_STARTS = (0.01, 0.1, 1.0, 3.0, 10.0)
PHI0_STARTS = tuple(k * math.pi / 4 for k in range(8))
MAX_ITER = 200
STEP_TOL = 1e-10


@dataclass(frozen=True)
class RamseyConfig:
    """Ramsey probe settings; ``detuning`` in rad/us, times in us."""

    detuning: float
    gamma2: float
    t_grid: tuple[float, ...] = DEFAULT_GRID
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        grid = tuple(float(t) for t in self.t_grid)
        object.__setattr__(self, "t_grid", grid)
        if not grid:
            raise ConfigError("Ramsey grid is empty")
        if grid[0] < 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("Ramsey grid must start at >= 0 and be strictly increasing")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.gamma2 < 0:
            raise ConfigError("gamma2 must be >= 0")

    def with_values(self, **changes) -> "RamseyConfig":
        return replace(self, **changes)


def default_ramsey_config(params: SystemParams, noise_sigma: float = 0.0, rng_seed: int = 0) -> RamseyConfig:
    """10 MHz detuning, 61 points over 0-600 ns, dephasing from the device."""
    return RamseyConfig(
        detuning=TWO_PI * DEFAULT_DETUNING_MHZ,
        gamma2=params.gamma2,
        noise_sigma=noise_sigma,
        rng_seed=rng_seed,
    )


@dataclass(frozen=True)
class RamseyTrace:
    t_R: np.ndarray
    signal: np.ndarray
    config: RamseyConfig

    def __post_init__(self) -> None:
        if len(self.t_R) != len(self.signal):
            raise ValueError("t_R and signal lengths differ")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t_r_us,signal\n")
        for t, s in zip(self.t_R, self.signal):
            buf.write(f"{t:.17g},{s:.17g}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class FitResult:
    n0: float
    phi0: float
    residual_norm: float
    iterations: int
    converged: bool
    n0_err: float = math.nan
    phi0_err: float = math.nan

    def to_json(self) -> str:
        keys = ("n0", "phi0", "residual_norm", "iterations", "converged")
        return json.dumps({k: getattr(self, k) for k in keys})


def stark_tau(t_R, kappa: float, chi: float):
    rate = complex(kappa, 2.0 * chi)
    if rate == 0:
        raise ConfigError("kappa + 2i chi must be nonzero")
    return (1.0 - np.exp(-rate * np.asarray(t_R))) / rate


def _signal(n0, phi0, t, kappa, chi, detuning, gamma2):
    """Broadcasting core: n0, phi0 shaped (..., 1) against t shaped (N,)."""
    tau = stark_tau(t, kappa, chi)
    phase = -complex(gamma2, detuning) * t + 1j * (phi0 - 2.0 * n0 * chi * tau)
    return 0.5 * (1.0 - np.exp(phase).imag)


def ramsey_signal(n0: float, phi0: float, params: SystemParams, cfg: RamseyConfig, t_R):
    """Noiseless Ramsey signal at delay(s) ``t_R`` (us)."""
    t = np.asarray(t_R, dtype=float)
    if np.any(t < 0):
        raise ConfigError("t_R must be >= 0")
    out = _signal(n0, phi0, t, params.kappa, params.chi, cfg.detuning, cfg.gamma2)
    return float(out) if out.ndim == 0 else out


def synthesize_trace(
    n0: float,
    phi0: float,
    params: SystemParams,
    cfg: RamseyConfig,
    rng: np.random.Generator | None = None,
) -> RamseyTrace:
    """Model trace on the config grid plus seeded Gaussian noise (no clamping).

    Noise comes from ``rng`` when given, else from a generator seeded with
    ``cfg.rng_seed``.
    """
    t = np.asarray(cfg.t_grid)
    signal = ramsey_signal(n0, phi0, params, cfg, t)
    if cfg.noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(cfg.rng_seed)
        signal = signal + rng.normal(0.0, cfg.noise_sigma, size=t.shape)
    return RamseyTrace(t, np.asarray(signal, dtype=float), cfg)


def wrap_phase(phi):
    """Map angles onto (-pi, pi]."""
    return phi - TWO_PI * np.ceil((phi - math.pi) / TWO_PI)


def _jacobian(p, t, y, model):
    # central differences, batched over starts; p is (S, 2)
    h = np.stack([1e-6 * np.maximum(np.abs(p[:, 0]), 1e-2), np.full(len(p), 1e-6)], axis=1)
    cols = []
    for j in range(2):
        dp = np.zeros_like(p)
        dp[:, j] = h[:, j]
        cols.append((model(p + dp) - model(p - dp)) / (2 * h[:, j : j + 1]))
    return np.stack(cols, axis=-1)


def fit_ramsey(trace: RamseyTrace, params: SystemParams, cfg: RamseyConfig | None = None) -> FitResult:
    """Least-squares estimate of (n0, phi0) from a Ramsey trace.

    Damped Gauss-Newton (Levenberg-Marquardt scaling) with a numerical
    Jacobian, run from a fixed grid of starts at once. ``n0`` is projected
    onto ``n0 >= 0`` after every step. The lowest-residual converged start
    wins, ties going to the smaller ``n0``.
    """
    cfg = cfg or trace.config
    t = np.asarray(trace.t_R, dtype=float)
    y = np.asarray(trace.signal, dtype=float)
    if len(t) < 8:
        raise ConfigError(f"need >= 8 Ramsey samples, got {len(t)}")
    if cfg.detuning == 0 or (t[-1] - t[0]) < TWO_PI / abs(cfg.detuning) * (1 - 1e-9):
        raise ConfigError("Ramsey grid must span at least one fringe period")
    if not np.all(np.isfinite(y)):
        raise ConfigError("Ramsey signal contains non-finite values")

    kappa, chi = params.kappa, params.chi

    def model(p):
        return _signal(p[:, :1], p[:, 1:], t, kappa, chi, cfg.detuning, cfg.gamma2)

    starts = np.array([(n, f) for f in PHI0_STARTS for n in N0_STARTS])
    p = starts.copy()
    S = len(p)
    r = model(p) - y
    cost = np.sum(r * r, axis=1)
    lam = np.full(S, 1e-3)
    active = np.ones(S, dtype=bool)
    converged = np.zeros(S, dtype=bool)
    iters = np.zeros(S, dtype=int)

    for _ in range(MAX_ITER):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        pa = p[idx]
        J = _jacobian(pa, t, y, model)
        ra = r[idx]
        A = np.einsum("snj,snk->sjk", J, J)
        grad = np.einsum("snj,sn->sj", J, ra)
        diag = np.einsum("sjj->sj", A)
        damp = lam[idx, None] * np.maximum(diag, 1e-12)
        M = A.copy()
        M[:, 0, 0] += damp[:, 0]
        M[:, 1, 1] += damp[:, 1]
        try:
            step = -np.linalg.solve(M, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = -grad / np.maximum(diag + damp, 1e-12)
        trial = pa + step
        trial[:, 0] = np.maximum(trial[:, 0], 0.0)
        rt = model(trial) - y
        ct = np.sum(rt * rt, axis=1)
        iters[idx] += 1

        better = ct < cost[idx]
        taken = trial - pa
        small = np.all(np.abs(taken) <= STEP_TOL * (np.abs(pa) + STEP_TOL), axis=1)
        acc = idx[better]
        p[acc] = trial[better]
        r[acc] = rt[better]
        cost[acc] = ct[better]
        lam[acc] = np.maximum(lam[acc] / 10.0, 1e-12)
        rej = idx[~better]
        lam[rej] *= 10.0

        done = small | (lam[idx] > 1e16) | (cost[idx] == 0.0)
        converged[idx[done]] = True
        active[idx[done]] = False

    pool = np.flatnonzero(converged) if converged.any() else np.arange(S)
    order = sorted(pool, key=lambda i: (cost[i], p[i, 0]))
    best = order[0]
    n0, phi0 = p[best]

    dof = max(len(t) - 2, 1)
    J = _jacobian(p[best : best + 1], t, y, model)[0]
    try:
        cov = np.linalg.inv(J.T @ J) * cost[best] / dof
        n0_err, phi0_err = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        n0_err = phi0_err = math.inf
    return FitResult(
        n0=float(n0),
        phi0=float(wrap_phase(phi0)),
        residual_norm=float(math.sqrt(cost[best])),
        iterations=int(iters[best]),
        converged=bool(converged[best]),
        n0_err=float(n0_err),
        phi0_err=float(phi0_err),
    )


class InsufficientDataError(NumericalError):
    pass


@dataclass(frozen=True)
class DecayFit:
    """Exponential fit n(t) = amplitude * exp(-rate t)."""

    amplitude: float
    rate: float
    goodness: float
    rate_err: float
    n_used: int
    n_excluded: int

    @property
    def time_constant(self) -> float:
        return 1.0 / self.rate


def fit_exponential_decay(points: Iterable[tuple[float, float]], floor: float = 1e-3) -> DecayFit:
    """Weighted log-linear fit of photon number versus time.

    Each point is weighted by ``n**2``, the inverse variance of ``log n``
    under constant absolute noise on ``n``. Points at or below ``floor`` are
    dropped. ``goodness`` is the weighted R^2 in log space.
    """
    pts = [(float(t), float(n)) for t, n in points]
    usable = [(t, n) for t, n in pts if n > floor]
    excluded = len(pts) - len(usable)
    if len(usable) < 3:
        raise InsufficientDataError(f"need >= 3 points above floor {floor}, got {len(usable)}")
    t = np.array([u[0] for u in usable])
    n = np.array([u[1] for u in usable])
    if len(np.unique(t)) < 2:
        raise InsufficientDataError("decay fit needs distinct times")
    y = np.log(n)
    w = n**2
    w = w / w.sum()
    X = np.stack([np.ones_like(t), -t], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    log_amp, rate = coef
    resid = y - X @ coef
    ybar = np.sum(w * y)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    ss_res = np.sum(w * resid**2)
    goodness = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(t) - 2
    if dof > 0:
        cov = np.linalg.inv(X.T @ (X * w[:, None])) * ss_res / dof
        rate_err = float(math.sqrt(max(cov[1, 1], 0.0)))
    else:
        rate_err = math.nan
    return DecayFit(float(math.exp(log_amp)), float(rate), float(goodness), rate_err, len(usable), excluded)


def read_trace_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``t_r_us,signal`` CSV (``#`` comment lines ignored)."""
    rows = []
    header = None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = [h.strip() for h in line.split(",")]
            if header[:2] != ["t_r_us", "signal"]:
                raise ConfigError(f"expected header 't_r_us,signal', got {line!r}")
            continue
        parts = line.split(",")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad trace row {line!r}") from exc
    if not rows:
        raise ConfigError("trace file has no data rows")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1]
