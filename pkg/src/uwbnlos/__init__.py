"""UWB TOA localization with statistical NLOS bias mitigation."""

from uwbnlos.errors import (
    ConfigError,
    DataError,
    DomainError,
    FitError,
    NoSignalError,
    ParseError,
    UwbNlosError,
)
from uwbnlos.synth import (
    C0,
    ChannelState,
    LinkObservation,
    SynthParams,
    Waveform,
    estimate_toa,
    synth_link,
    synth_pool,
)

__version__ = "0.1.0"

__all__ = [
    "C0",
    "ChannelState",
    "ConfigError",
    "DataError",
    "DomainError",
    "FitError",
    "LinkObservation",
    "NoSignalError",
    "ParseError",
    "SynthParams",
    "UwbNlosError",
    "Waveform",
    "estimate_toa",
    "synth_link",
    "synth_pool",
]
