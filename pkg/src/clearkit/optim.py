"""Empirical (device-in-the-loop) tuning of CLEAR pulse parameters.

The "device" is :class:`MeasurementEmulator`: it plays the pulse through the
cavity model for both qubit preparations, turns the residual field into a
Ramsey trace and reports the fitted ``n0`` like a real experiment would.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from functools import cached_property
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from clearkit.cavity import simulate_pulse
from clearkit.core import BRANCHES, ConfigError, PulseEnvelope, QubitState, SystemParams
from clearkit.design import ClearSpec, clear_envelope, solve_clear
from clearkit.ramsey import RamseyConfig, fit_ramsey, synthesize_trace

SENTINEL_OBJECTIVE = 1e6

CLEAR_FIELDS = tuple(f.name for f in fields(ClearSpec))
_PREFIX_FIELDS = ("eps_steady", "t_up1", "t_up2", "t_flat", "amp_up1", "amp_up2")


@dataclass(frozen=True)
class Evaluation:
    """One objective evaluation (one "iteration")."""

    iteration: int
    values: tuple[float, ...]
    objective: float
    n0_ground: float
    n0_excited: float
    n_true_ground: float = math.nan
    n_true_excited: float = math.nan
    flagged: bool = False


@dataclass(frozen=True)
class MeasurementEmulator:
    """Simulated experiment returning fitted residual photon numbers.

    ``seed_policy`` is ``"fresh"`` (noise seed = base seed + evaluation index)
    or ``"frozen"`` (same noise every call). ``phi0`` is the Ramsey phase
    offset used when synthesizing traces.
    """

    params: SystemParams
    base: ClearSpec
    ramsey: RamseyConfig
    kerr_enabled: bool = True
    seed_policy: Literal["fresh", "frozen"] = "fresh"
    base_seed: int = 0
    scalarization: Literal["max", "mean"] = "max"
    phi0: float = 0.0
    dt: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.base.is_solved:
            object.__setattr__(self, "base", solve_clear(self.params, self.base).spec)
        if self.seed_policy not in ("fresh", "frozen"):
            raise ConfigError(f"unknown seed policy {self.seed_policy!r}")
        if self.scalarization not in ("max", "mean"):
            raise ConfigError(f"unknown scalarization {self.scalarization!r}")

    @property
    def noise_sigma(self) -> float:
        return self.ramsey.noise_sigma

    @cached_property
    def _prefix(self) -> dict[QubitState, complex]:
        # field at the start of ring-down for the base spec; reused across trials
        spec = self.base
        env = clear_envelope(spec)
        head = env.segments[: len(env.segments) - 2]
        head_env = PulseEnvelope(head, label="clear-head")
        return {
            s: simulate_pulse(self.params, head_env, s, self.kerr_enabled, dt=self.dt).final(s)
            for s in BRANCHES
        }

    def final_fields(self, spec: ClearSpec) -> dict[QubitState, complex]:
        """Cavity field at the end of the CLEAR pulse for each branch."""
        env = clear_envelope(spec)
        if all(getattr(spec, k) == getattr(self.base, k) for k in _PREFIX_FIELDS):
            tail = PulseEnvelope(env.segments[-2:], label="clear-tail")
            return {
                s: simulate_pulse(
                    self.params, tail, s, self.kerr_enabled, dt=self.dt, alpha0=self._prefix[s]
                ).final(s)
                for s in BRANCHES
            }
        return {s: simulate_pulse(self.params, env, s, self.kerr_enabled, dt=self.dt).final(s) for s in BRANCHES}

    def scalarize(self, n_g: float, n_e: float) -> float:
        return max(n_g, n_e) if self.scalarization == "max" else 0.5 * (n_g + n_e)

    def measure(self, spec: ClearSpec, eval_index: int = 0, base_seed: Optional[int] = None) -> Evaluation:
        base_seed = self.base_seed if base_seed is None else base_seed
        seed = base_seed + (eval_index if self.seed_policy == "fresh" else 0)
        rng = np.random.default_rng(seed)
        finals = self.final_fields(spec)
        fitted, truth, flagged = {}, {}, False
        for s in BRANCHES:
            n_true = abs(finals[s]) ** 2
            truth[s] = n_true
            trace = synthesize_trace(n_true, self.phi0, self.params, self.ramsey, rng=rng)
            fit = fit_ramsey(trace, self.params)
            fitted[s] = fit.n0
            flagged |= not fit.converged
        g, e = fitted[QubitState.GROUND], fitted[QubitState.EXCITED]
        objective = SENTINEL_OBJECTIVE if flagged else self.scalarize(g, e)
        return Evaluation(
            iteration=eval_index,
            values=(),
            objective=objective,
            n0_ground=g,
            n0_excited=e,
            n_true_ground=truth[QubitState.GROUND],
            n_true_excited=truth[QubitState.EXCITED],
            flagged=flagged,
        )


def evaluate_ringdown(
    emulator: MeasurementEmulator, amp_dn1: float, amp_dn2: float, eval_index: int = 0
) -> tuple[float, float, float]:
    """(n0_ground, n0_excited, objective) with substituted ring-down multipliers."""
    if not (math.isfinite(amp_dn1) and math.isfinite(amp_dn2)):
        raise ConfigError("ring-down amplitudes must be finite")
    ev = emulator.measure(emulator.base.with_values(amp_dn1=amp_dn1, amp_dn2=amp_dn2), eval_index)
    return ev.n0_ground, ev.n0_excited, ev.objective


@dataclass(frozen=True)
class OptimSettings:
    f_tol: float = 1e-3
    max_iterations: int = 300
    rng_seed: Optional[int] = None
    perturbation: float = 0.2
    reflect: float = 1.0
    expand: float = 2.0
    contract: float = 0.5
    shrink: float = 0.5

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.f_tol < 0:
            raise ConfigError("f_tol must be >= 0")


@dataclass(frozen=True)
class OptimizationRun:
    names: tuple[str, ...]
    history: tuple[Evaluation, ...]
    best: Evaluation
    settings: OptimSettings
    stop_reason: str

    @property
    def best_values(self) -> dict[str, float]:
        return dict(zip(self.names, self.best.values))

    def running_min(self) -> np.ndarray:
        return np.minimum.accumulate([h.objective for h in self.history])

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", *self.names, "n0_g", "n0_e", "objective"])
        for h in self.history:
            w.writerow([h.iteration, *(f"{v:.17g}" for v in h.values),
                        f"{h.n0_ground:.17g}", f"{h.n0_excited:.17g}", f"{h.objective:.17g}"])
        return buf.getvalue()


def nelder_mead(
    fun: Callable[[np.ndarray, int], float],
    x0: Sequence[float],
    settings: OptimSettings,
) -> tuple[list[tuple[np.ndarray, float]], str]:
    """Downhill simplex; ``fun(x, k)`` receives the 0-based evaluation index.

    The initial simplex is ``x0`` plus one vertex per coordinate scaled by
    ``1 + perturbation`` (a zero coordinate is offset by ``perturbation``).
    The initial simplex is always evaluated in full; afterwards the run stops
    once ``max_iterations`` evaluations are spent or the spread of vertex
    values falls below ``f_tol``.
    """
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    evals: list[tuple[np.ndarray, float]] = []

    class _Budget(Exception):
        pass

    def f(x: np.ndarray, force: bool = False) -> float:
        if not force and len(evals) >= settings.max_iterations:
            raise _Budget
        val = float(fun(x, len(evals)))
        evals.append((x.copy(), val))
        return val

    simplex = [x0.copy()]
    for i in range(n):
        v = x0.copy()
        v[i] = v[i] * (1 + settings.perturbation) if v[i] != 0 else settings.perturbation
        simplex.append(v)
    values = [f(v, force=True) for v in simplex]

    a, b, c, d = settings.reflect, settings.expand, settings.contract, settings.shrink
    try:
        while True:
            order = np.argsort(values, kind="stable")
            simplex = [simplex[i] for i in order]
            values = [values[i] for i in order]
            if values[-1] - values[0] < settings.f_tol:
                return evals, "f_tol"
            if len(evals) >= settings.max_iterations:
                return evals, "max_iterations"
            centroid = np.mean(simplex[:-1], axis=0)
            worst = simplex[-1]
            xr = centroid + a * (centroid - worst)
            fr = f(xr)
            if fr < values[0]:
                xe = centroid + b * (xr - centroid)
                fe = f(xe)
                simplex[-1], values[-1] = (xe, fe) if fe < fr else (xr, fr)
                continue
            if fr < values[-2]:
                simplex[-1], values[-1] = xr, fr
                continue
            if fr < values[-1]:
                xc = centroid + c * (xr - centroid)
                fc = f(xc)
                if fc <= fr:
                    simplex[-1], values[-1] = xc, fc
                    continue
            else:
                xc = centroid + c * (worst - centroid)
                fc = f(xc)
                if fc < values[-1]:
                    simplex[-1], values[-1] = xc, fc
                    continue
            best = simplex[0]
            for i in range(1, n + 1):
                simplex[i] = best + d * (simplex[i] - best)
                values[i] = f(simplex[i])
    except _Budget:
        return evals, "max_iterations"


def optimize_generic(
    emulator: MeasurementEmulator,
    names: Sequence[str],
    initial: Sequence[float],
    settings: OptimSettings = OptimSettings(),
) -> OptimizationRun:
    """Simplex search over the named :class:`ClearSpec` fields."""
    names = tuple(names)
    if not 1 <= len(names) <= 6:
        raise ConfigError("optimize 1 to 6 parameters")
    for name in names:
        if name not in CLEAR_FIELDS:
            raise ConfigError(f"unknown ClearSpec parameter {name!r}")
    if len(set(names)) != len(names):
        raise ConfigError("duplicate parameter names")
    if len(initial) != len(names):
        raise ConfigError("initial vector length does not match parameter names")
    base_seed = settings.rng_seed

    records: list[Evaluation] = []

    def objective(x: np.ndarray, k: int) -> float:
        try:
            spec = emulator.base.with_values(**dict(zip(names, map(float, x))))
        except ConfigError:
            ev = Evaluation(k, tuple(map(float, x)), SENTINEL_OBJECTIVE, math.nan, math.nan, flagged=True)
        else:
            ev = emulator.measure(spec, k, base_seed)
            ev = Evaluation(k, tuple(map(float, x)), ev.objective, ev.n0_ground, ev.n0_excited,
                            ev.n_true_ground, ev.n_true_excited, ev.flagged)
        records.append(ev)
        return ev.objective

    _, reason = nelder_mead(objective, initial, settings)
    best = min(records, key=lambda r: r.objective)
    return OptimizationRun(names, tuple(records), best, settings, reason)


def optimize_ringdown(
    emulator: MeasurementEmulator,
    initial: tuple[float, float],
    settings: OptimSettings = OptimSettings(),
) -> OptimizationRun:
    """Tune the two ring-down multipliers, all else fixed."""
    return optimize_generic(emulator, ("amp_dn1", "amp_dn2"), initial, settings)
