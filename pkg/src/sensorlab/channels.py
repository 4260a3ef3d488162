"""Registry of the 34 minute-resolution sensor channels.

Each channel carries its source sensor, unit, physiological validity range
and category. The validity range drives generic curation masking and the
clamping of model infills back into raw units; a handful of channels have
additional bespoke curation rules (see :mod:`sensorlab.curation`).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    sensor: str
    unit: str
    lo: float
    hi: float
    category: str
    hrv: bool = False  # nullified when the valid_rr fraction is too low


CHANNELS: tuple[ChannelSpec, ...] = (
    # cardiovascular (13)
    ChannelSpec("heart_rate", "ppg", "bpm", 25.0, 220.0, "cardiovascular"),
    ChannelSpec("rr_median", "ppg", "ms", 250.0, 2400.0, "cardiovascular", hrv=True),
    ChannelSpec("rmssd", "ppg", "ms", 0.0, 125.0, "cardiovascular", hrv=True),
    ChannelSpec("sdnn", "ppg", "ms", 0.0, 125.0, "cardiovascular", hrv=True),
    ChannelSpec("pnn20", "ppg", "fraction", 0.0, 1.0, "cardiovascular", hrv=True),
    ChannelSpec("coherence", "ppg", "score", 0.0, 100.0, "cardiovascular", hrv=True),
    ChannelSpec("shen_rr", "ppg", "nat", 0.0, 10.0, "cardiovascular", hrv=True),
    ChannelSpec("vlf", "ppg", "ms2", 0.0, 100000.0, "cardiovascular", hrv=True),
    ChannelSpec("lf", "ppg", "ms2", 0.0, 100000.0, "cardiovascular", hrv=True),
    ChannelSpec("hf", "ppg", "ms2", 0.0, 100000.0, "cardiovascular", hrv=True),
    ChannelSpec("lf_hf", "ppg", "ratio", 0.0, 50.0, "cardiovascular", hrv=True),
    ChannelSpec("spectral_entropy", "ppg", "fraction", 0.0, 1.0, "cardiovascular", hrv=True),
    ChannelSpec("valid_rr", "ppg", "fraction", 0.0, 1.0, "cardiovascular"),
    # cardiopulmonary (3)
    ChannelSpec("spo2", "spo2", "percent", 70.0, 100.0, "cardiopulmonary"),
    ChannelSpec("spo2_confidence", "spo2", "fraction", 0.0, 1.0, "cardiopulmonary"),
    ChannelSpec("spo2_coverage", "spo2", "fraction", 0.0, 1.0, "cardiopulmonary"),
    # sleep (5)
    ChannelSpec("stage_awake", "sleep", "s_per_min", 0.0, 60.0, "sleep"),
    ChannelSpec("stage_light", "sleep", "s_per_min", 0.0, 60.0, "sleep"),
    ChannelSpec("stage_deep", "sleep", "s_per_min", 0.0, 60.0, "sleep"),
    ChannelSpec("stage_rem", "sleep", "s_per_min", 0.0, 60.0, "sleep"),
    ChannelSpec("sleep_coefficient", "sleep", "fraction", 0.0, 1.0, "sleep"),
    # motion (10)
    ChannelSpec("steps", "accel", "count", 0.0, 300.0, "motion"),
    ChannelSpec("jerk_autocorr", "accel", "fraction", -1.0, 1.0, "motion"),
    ChannelSpec("log_energy", "accel", "log_g2", -10.0, 20.0, "motion"),
    ChannelSpec("covariance", "accel", "g2", -5.0, 5.0, "motion"),
    ChannelSpec("log_energy_ratio", "accel", "log_ratio", -10.0, 10.0, "motion"),
    ChannelSpec("zero_crossing_std", "accel", "count", 0.0, 100.0, "motion"),
    ChannelSpec("zero_crossing_avg", "accel", "count", 0.0, 100.0, "motion"),
    ChannelSpec("axis_mean", "accel", "g", -4.0, 4.0, "motion"),
    ChannelSpec("kurtosis_accel", "accel", "unitless", -5.0, 50.0, "motion"),
    ChannelSpec("altitude_std", "altimeter", "m", 0.0, 50.0, "motion"),
    # skin (3)
    ChannelSpec("temperature", "thermometer", "degC", 0.0, 41.0, "skin"),
    ChannelSpec("conductance", "eda", "uS", 0.0, 60.0, "skin"),
    ChannelSpec("lead_contact_counts", "eda", "count", 0.0, 600.0, "skin"),
)

NAMES: tuple[str, ...] = tuple(c.name for c in CHANNELS)
_INDEX = {c.name: i for i, c in enumerate(CHANNELS)}
assert len(_INDEX) == len(CHANNELS), "duplicate channel names"

MINUTES_PER_DAY = 1440

# Order used when a run only keeps a few channels (desk-scale experiments)
# or when the signal-imputation task ablates its first k channels.
PRIORITY: tuple[str, ...] = (
    "heart_rate", "steps", "spo2", "temperature", "stage_deep", "stage_light",
    "rmssd", "stage_rem", "stage_awake", "conductance", "sdnn", "valid_rr",
    "rr_median", "pnn20", "log_energy", "sleep_coefficient", "lf", "hf",
    "lf_hf", "vlf", "spectral_entropy", "coherence", "shen_rr", "spo2_confidence",
    "spo2_coverage", "jerk_autocorr", "covariance", "log_energy_ratio",
    "zero_crossing_std", "zero_crossing_avg", "axis_mean", "kurtosis_accel",
    "altitude_std", "lead_contact_counts",
)
assert sorted(PRIORITY) == sorted(NAMES)


def spec(name: str) -> ChannelSpec:
    try:
        return CHANNELS[_INDEX[name]]
    except KeyError:
        raise KeyError(f"unknown channel '{name}'") from None


def index_of(name: str) -> int:
    if name not in _INDEX:
        raise KeyError(f"unknown channel '{name}'")
    return _INDEX[name]


def specs_for(names) -> list[ChannelSpec]:
    return [spec(n) for n in names]


def desk_channels(n: int = 6) -> tuple[str, ...]:
    if not 1 <= n <= len(PRIORITY):
        raise ValueError(f"channel count {n} outside [1, {len(PRIORITY)}]")
    return PRIORITY[:n]


def hrv_names() -> tuple[str, ...]:
    return tuple(c.name for c in CHANNELS if c.hrv)
