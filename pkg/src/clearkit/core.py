"""Units, device parameters and pulse data types shared across clearkit.

Internal units: angular frequencies in rad/us, times in us, photon numbers
dimensionless. Carrier frequencies are kept in GHz since they only enter the
dispersive-coupling formulas. Conversion happens at the config boundary.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Invalid configuration or argument (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (CLI exit code 3)."""


def convert_frequency(value_mhz: float) -> float:
    """Ordinary frequency in MHz -> angular frequency in rad/us."""
    return TWO_PI * value_mhz


def to_mhz(value_rad_us: float) -> float:
    """Inverse of :func:`convert_frequency`."""
    return value_rad_us / TWO_PI


class QubitState(enum.Enum):
    GROUND = "g"
    EXCITED = "e"

    @property
    def other(self) -> "QubitState":
        return QubitState.EXCITED if self is QubitState.GROUND else QubitState.GROUND


BRANCHES = (QubitState.GROUND, QubitState.EXCITED)


@dataclass(frozen=True)
class SystemParams:
    """Device constants.

    Attributes:
        kappa: cavity energy decay rate, rad/us.
        chi: half the cavity pull, rad/us (negative for the reference device).
        kerr: self-Kerr shift per photon, rad/us.
        g: qubit-cavity coupling, rad/us.
        f_qubit: qubit 0-1 frequency, GHz.
        f_cavity_dressed: cavity frequency with the qubit in ground, GHz.
        f_cavity_bare: bare cavity frequency, GHz.
        anharmonicity: transmon anharmonicity, rad/us.
        gamma2: qubit dephasing rate 1/T2echo, 1/us.
    """

    kappa: float
    chi: float
    kerr: float
    g: float
    f_qubit: float
    f_cavity_dressed: float
    f_cavity_bare: float
    anharmonicity: float
    gamma2: float

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.gamma2 < 0:
            raise ConfigError("gamma2 must be non-negative")
        if self.chi > 0 or self.kerr > 0:
            warnings.warn(
                "chi > 0 or kerr > 0: outside the negative-pull transmon regime",
                stacklevel=3,
            )

    @property
    def t_cav(self) -> float:
        """Cavity time constant 1/kappa, us."""
        return 1.0 / self.kappa

    def replace(self, **changes: float) -> "SystemParams":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return SystemParams(**values)


def detuning_for_state(params: SystemParams, state: QubitState) -> float:
    """Cavity detuning from the midpoint carrier in the drive frame, rad/us."""
    return -params.chi if state is QubitState.GROUND else params.chi


@dataclass(frozen=True)
class PulseSegment:
    duration: float
    amplitude: complex

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ConfigError(f"segment duration must be > 0, got {self.duration}")
        amp = complex(self.amplitude)
        if not (math.isfinite(amp.real) and math.isfinite(amp.imag)):
            raise ConfigError("segment amplitude must be finite")
        object.__setattr__(self, "amplitude", amp)


@dataclass(frozen=True)
class PulseEnvelope:
    """Ordered piecewise-constant drive in the carrier rotating frame."""

    segments: tuple[PulseSegment, ...]
    label: str = ""

    def __post_init__(self) -> None:
        segs = tuple(self.segments)
        if not segs:
            raise ConfigError("pulse envelope needs at least one segment")
        object.__setattr__(self, "segments", segs)

    @property
    def duration(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    def boundaries(self) -> list[float]:
        """Cumulative segment end times, starting with 0."""
        out = [0.0]
        for s in self.segments:
            out.append(out[-1] + s.duration)
        return out

    def is_real(self) -> bool:
        return all(s.amplitude.imag == 0.0 for s in self.segments)


@dataclass(frozen=True)
class SequenceTiming:
    """Timing of the residual-photon probe sequence, all in us."""

    t_relax: float = 0.0
    t_R_max: float = 0.6
    t_buffer: float = 0.4
    t_M2: float = 10.0
    t_gate: float = 0.008
    t_M1: float = 2.0

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


# Device file schema: key -> (SystemParams field, converter to internal units).
_MHZ = convert_frequency
DEVICE_KEYS: dict[str, tuple[str, Any]] = {
    "kappa_mhz": ("kappa", _MHZ),
    "chi_mhz": ("chi", _MHZ),
    "kerr_khz": ("kerr", lambda v: convert_frequency(v * 1e-3)),
    "g_mhz": ("g", _MHZ),
    "f_qubit_ghz": ("f_qubit", float),
    "f_cavity_dressed_ghz": ("f_cavity_dressed", float),
    "f_cavity_bare_ghz": ("f_cavity_bare", float),
    "anharmonicity_mhz": ("anharmonicity", _MHZ),
    "t2_echo_us": ("gamma2", lambda v: 0.0 if math.isinf(v) else 1.0 / v),
}
OPTIONAL_DEVICE_KEYS = ("kerr_khz", "g_mhz")

# Reference device. kerr_khz is the reported value, not the small-anharmonicity
# estimate from derive_g/kerr_constant (about -18.4 kHz for these numbers).
REFERENCE_DEVICE: dict[str, float] = {
    "kappa_mhz": 1.1,
    "chi_mhz": -1.3,
    "kerr_khz": -14.0,
    "f_qubit_ghz": 4.83315,
    "f_cavity_dressed_ghz": 10.7594,
    "f_cavity_bare_ghz": 10.7457,
    "anharmonicity_mhz": -155.0,
    "t2_echo_us": 60.0,
}


@dataclass(frozen=True)
class LoadedParams:
    """SystemParams plus a record of which constants were derived at load."""

    params: SystemParams
    derived: dict[str, float] = field(default_factory=dict)
    source: dict[str, float] = field(default_factory=dict)


def params_from_mapping(raw: Mapping[str, Any]) -> LoadedParams:
    """Build SystemParams from a device mapping, deriving g and K if absent."""
    from clearkit.design import derive_g, kerr_constant

    for key in raw:
        if key not in DEVICE_KEYS:
            raise ConfigError(f"unknown device key: {key!r}")
    missing = [k for k in DEVICE_KEYS if k not in raw and k not in OPTIONAL_DEVICE_KEYS]
    if missing:
        raise ConfigError(f"missing device keys: {', '.join(missing)}")
    values: dict[str, float] = {}
    for key, value in raw.items():
        name, conv = DEVICE_KEYS[key]
        try:
            values[name] = float(conv(float(value)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    values.setdefault("g", 0.0)
    values.setdefault("kerr", 0.0)
    derived: dict[str, float] = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = SystemParams(**values)
    if "g_mhz" not in raw:
        params = params.replace(g=derive_g(params))
        derived["g_mhz"] = to_mhz(params.g)
    if "kerr_khz" not in raw:
        params = params.replace(kerr=kerr_constant(params))
        derived["kerr_khz"] = to_mhz(params.kerr) * 1e3
    if params.chi > 0 or params.kerr > 0:
        warnings.warn("chi > 0 or kerr > 0: outside the negative-pull transmon regime")
    return LoadedParams(params=params, derived=derived, source=dict(raw))


def load_params(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> LoadedParams:
    """Load a device JSON file (or the built-in reference device) with overrides."""
    if path is None:
        raw: dict[str, Any] = dict(REFERENCE_DEVICE)
    else:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read device file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("device file must contain a JSON object")
    raw.update(overrides or {})
    return params_from_mapping(raw)


def reference_params() -> SystemParams:
    return load_params().params


def params_to_mapping(params: SystemParams) -> dict[str, float]:
    """Inverse of params_from_mapping (every key explicit)."""
    return {
        "kappa_mhz": to_mhz(params.kappa),
        "chi_mhz": to_mhz(params.chi),
        "kerr_khz": to_mhz(params.kerr) * 1e3,
        "g_mhz": to_mhz(params.g),
        "f_qubit_ghz": params.f_qubit,
        "f_cavity_dressed_ghz": params.f_cavity_dressed,
        "f_cavity_bare_ghz": params.f_cavity_bare,
        "anharmonicity_mhz": to_mhz(params.anharmonicity),
        "t2_echo_us": math.inf if params.gamma2 == 0 else 1.0 / params.gamma2,
    }


def segments_from_pairs(pairs: Sequence[tuple[float, complex]], label: str = "") -> PulseEnvelope:
    return PulseEnvelope(tuple(PulseSegment(d, a) for d, a in pairs), label=label)
