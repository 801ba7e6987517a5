"""CLEAR pulse construction and device-derived constants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from clearkit.cavity import propagate_linear
from clearkit.core import (
    ConfigError,
    NumericalError,
    PulseEnvelope,
    PulseSegment,
    QubitState,
    SystemParams,
    TWO_PI,
    detuning_for_state,
)

MAX_CONDITION = 1e8


class SolverError(NumericalError):
    """Segment-pair linear system is (numerically) singular."""


@dataclass(frozen=True)
class ClearSpec:
    """Five-segment CLEAR pulse description.

    Durations in us; ``eps_steady`` in rad/us; ``amp_*`` are real multipliers
    of ``eps_steady``. A multiplier left as ``None`` is solved from the
    linear model by :func:`make_clear_pulse`.
    """

    eps_steady: float
    t_up1: float = 0.15
    t_up2: float = 0.15
    t_flat: float = 1.7
    t_dn1: float = 0.15
    t_dn2: float = 0.15
    amp_up1: Optional[float] = None
    amp_up2: Optional[float] = None
    amp_dn1: Optional[float] = None
    amp_dn2: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("t_up1", "t_up2", "t_dn1", "t_dn2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.t_flat < 0:
            raise ConfigError("t_flat must be >= 0")
        for name in ("eps_steady", "amp_up1", "amp_up2", "amp_dn1", "amp_dn2"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ConfigError(f"{name} must be finite")

    @property
    def ringdown_duration(self) -> float:
        return self.t_dn1 + self.t_dn2

    @property
    def is_solved(self) -> bool:
        return None not in (self.amp_up1, self.amp_up2, self.amp_dn1, self.amp_dn2)

    def with_values(self, **changes) -> "ClearSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PairSolution:
    eps1: complex
    eps2: complex
    condition: float


def _unit_responses(delta: float, kappa: float, t1: float, t2: float) -> tuple[complex, complex]:
    c1 = propagate_linear(propagate_linear(0.0, delta, kappa, 1.0, t1), delta, kappa, 0.0, t2)
    c2 = propagate_linear(0.0, delta, kappa, 1.0, t2)
    return complex(c1), complex(c2)


def _free(alpha: complex, delta: float, kappa: float, t1: float, t2: float) -> complex:
    return complex(propagate_linear(propagate_linear(alpha, delta, kappa, 0.0, t1), delta, kappa, 0.0, t2))


def _checked_solve(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    cond = float(np.linalg.cond(a))
    if not math.isfinite(cond) or cond > MAX_CONDITION:
        raise SolverError(
            f"segment-pair system is singular (condition number {cond:.3g} > {MAX_CONDITION:.0e});"
            " change the segment durations"
        )
    return np.linalg.solve(a, b), cond


def solve_segment_pair_full(
    params: SystemParams,
    t1: float,
    t2: float,
    alpha_start: complex,
    alpha_target: complex,
    *,
    complex_amplitudes: bool = False,
    detunings: Optional[tuple[float, float]] = None,
    excited_start: Optional[complex] = None,
    excited_target: Optional[complex] = None,
) -> PairSolution:
    """Two constant segments taking the cavity from ``alpha_start`` to ``alpha_target``.

    Real mode solves the 2x2 system for the ground branch; mirror symmetry
    at the midpoint carrier carries the excited branch along. Complex mode
    solves a 4x4 real system with both branches constrained explicitly,
    which is what a non-midpoint carrier (``detunings``) needs.
    """
    if not (t1 > 0 and t2 > 0):
        raise ConfigError("segment durations must be > 0")
    kappa = params.kappa
    if not complex_amplitudes:
        if detunings is not None:
            raise ConfigError("detuning override requires complex_amplitudes=True")
        delta = detuning_for_state(params, QubitState.GROUND)
        c1, c2 = _unit_responses(delta, kappa, t1, t2)
        rhs = complex(alpha_target) - _free(complex(alpha_start), delta, kappa, t1, t2)
        a = np.array([[c1.real, c2.real], [c1.imag, c2.imag]])
        x, cond = _checked_solve(a, np.array([rhs.real, rhs.imag]))
        return PairSolution(complex(x[0]), complex(x[1]), cond)

    if detunings is None:
        detunings = (
            detuning_for_state(params, QubitState.GROUND),
            detuning_for_state(params, QubitState.EXCITED),
        )
    starts = (complex(alpha_start), -complex(alpha_start).conjugate() if excited_start is None else complex(excited_start))
    targets = (complex(alpha_target), -complex(alpha_target).conjugate() if excited_target is None else complex(excited_target))
    rows, rhs = [], []
    for delta, a0, a1 in zip(detunings, starts, targets):
        c1, c2 = _unit_responses(delta, kappa, t1, t2)
        r = a1 - _free(a0, delta, kappa, t1, t2)
        # unknowns [Re e1, Im e1, Re e2, Im e2]; c*(x+iy) = (c.r x - c.i y) + i(c.i x + c.r y)
        rows.append([c1.real, -c1.imag, c2.real, -c2.imag])
        rows.append([c1.imag, c1.real, c2.imag, c2.real])
        rhs.extend([r.real, r.imag])
    x, cond = _checked_solve(np.array(rows), np.array(rhs))
    return PairSolution(complex(x[0], x[1]), complex(x[2], x[3]), cond)


def solve_segment_pair(
    params: SystemParams, t1: float, t2: float, alpha_start: complex, alpha_target: complex
) -> tuple[float, float]:
    """Real drive amplitudes (rad/us) for a ring-up or ring-down segment pair."""
    sol = solve_segment_pair_full(params, t1, t2, alpha_start, alpha_target)
    return sol.eps1.real, sol.eps2.real


def steady_alpha(params: SystemParams, eps: complex, state: QubitState = QubitState.GROUND) -> complex:
    """Linear steady-state field for a constant drive."""
    return -1j * complex(eps) / complex(params.kappa / 2.0, detuning_for_state(params, state))


@dataclass(frozen=True)
class ClearDesign:
    spec: ClearSpec
    condition_up: Optional[float]
    condition_down: Optional[float]


def solve_clear(params: SystemParams, spec: ClearSpec) -> ClearDesign:
    """Fill any missing multipliers of ``spec`` from the linear model."""
    eps = spec.eps_steady
    target = steady_alpha(params, eps)
    cond_up = cond_dn = None
    if spec.amp_up1 is None or spec.amp_up2 is None:
        if eps == 0:
            spec = spec.with_values(amp_up1=0.0, amp_up2=0.0)
        else:
            sol = solve_segment_pair_full(params, spec.t_up1, spec.t_up2, 0.0, target)
            cond_up = sol.condition
            spec = spec.with_values(amp_up1=sol.eps1.real / eps, amp_up2=sol.eps2.real / eps)
    if spec.amp_dn1 is None or spec.amp_dn2 is None:
        if eps == 0:
            spec = spec.with_values(amp_dn1=0.0, amp_dn2=0.0)
        else:
            sol = solve_segment_pair_full(params, spec.t_dn1, spec.t_dn2, target, 0.0)
            cond_dn = sol.condition
            spec = spec.with_values(amp_dn1=sol.eps1.real / eps, amp_dn2=sol.eps2.real / eps)
    return ClearDesign(spec, cond_up, cond_dn)


def clear_envelope(spec: ClearSpec) -> PulseEnvelope:
    """Envelope for an already-solved spec; a zero-length flat segment is elided."""
    if not spec.is_solved:
        raise ConfigError("ClearSpec has unsolved multipliers; use make_clear_pulse")
    e = spec.eps_steady
    segs = [
        PulseSegment(spec.t_up1, spec.amp_up1 * e),
        PulseSegment(spec.t_up2, spec.amp_up2 * e),
    ]
    if spec.t_flat > 0:
        segs.append(PulseSegment(spec.t_flat, e))
    segs += [
        PulseSegment(spec.t_dn1, spec.amp_dn1 * e),
        PulseSegment(spec.t_dn2, spec.amp_dn2 * e),
    ]
    return PulseEnvelope(tuple(segs), label="clear")


def make_clear_pulse(params: SystemParams, spec: ClearSpec) -> PulseEnvelope:
    return clear_envelope(solve_clear(params, spec).spec)


def make_square_pulse(eps: complex, duration: float, tail: float = 0.0) -> PulseEnvelope:
    """Constant drive for ``duration`` followed by an optional undriven tail."""
    if not duration > 0:
        raise ConfigError("duration must be > 0")
    if tail < 0:
        raise ConfigError("tail must be >= 0")
    segs = [PulseSegment(duration, eps)]
    if tail > 0:
        segs.append(PulseSegment(tail, 0.0))
    return PulseEnvelope(tuple(segs), label="square")


def _angular(f_ghz: float) -> float:
    return TWO_PI * f_ghz * 1e3


def qubit_cavity_detuning(params: SystemParams) -> float:
    """omega_q - omega_r (dressed cavity), rad/us."""
    return _angular(params.f_qubit) - _angular(params.f_cavity_dressed)


def dispersive_chi(g: float, detuning: float, anharmonicity: float) -> float:
    """Transmon dispersive shift chi = g^2 delta / (Delta (Delta + delta))."""
    return g * g * anharmonicity / (detuning * (detuning + anharmonicity))


def derive_g(params: SystemParams) -> float:
    """Coupling g (rad/us) that reproduces the measured chi."""
    big = qubit_cavity_detuning(params)
    small = params.anharmonicity
    if big == 0 or small == 0 or big + small == 0:
        raise ConfigError("derive_g needs nonzero detuning, anharmonicity and detuning+anharmonicity")
    radicand = params.chi * big * (big + small) / small
    if radicand < 0:
        raise ConfigError(
            f"chi={params.chi:.6g} inconsistent with detuning and anharmonicity (g^2 = {radicand:.6g} < 0)"
        )
    return math.sqrt(radicand)


def kerr_constant(params: SystemParams, g: Optional[float] = None) -> float:
    """Cavity self-Kerr (rad/us per photon), small-anharmonicity approximation.

    Uses ``params.g`` unless ``g`` is given.
    """
    if g is None:
        g = params.g
    wq = _angular(params.f_qubit)
    wr = _angular(params.f_cavity_dressed)
    return kerr_formula(g, params.anharmonicity, wq, wr)


def kerr_formula(g: float, anharmonicity: float, wq: float, wr: float) -> float:
    if wq == wr:
        raise ConfigError("qubit and cavity frequencies must differ")
    num = 2.0 * g**4 * anharmonicity * (3 * wq**4 + 2 * wq**2 * wr**2 + 3 * wr**4)
    return num / (wq**2 - wr**2) ** 4
