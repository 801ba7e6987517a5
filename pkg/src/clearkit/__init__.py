"""Design, simulation and tuning of CLEAR readout-resonator reset pulses."""

__version__ = "0.1.0"

from clearkit.core import (  # noqa: E402
    BRANCHES,
    ConfigError,
    NumericalError,
    PulseEnvelope,
    PulseSegment,
    QubitState,
    SequenceTiming,
    SystemParams,
    convert_frequency,
    detuning_for_state,
    load_params,
    reference_params,
)

__all__ = [
    "BRANCHES",
    "ConfigError",
    "NumericalError",
    "PulseEnvelope",
    "PulseSegment",
    "QubitState",
    "SequenceTiming",
    "SystemParams",
    "convert_frequency",
    "detuning_for_state",
    "load_params",
    "reference_params",
]
