"""Synthetic minute-resolution wearable streams.

Each subject gets a trait profile (activity level, sleep timing, resting heart
rate, stress, baselines) and optional demographics. Per day, a context is
drawn (sleep window with awakenings, activity bouts) from which every
channel's deterministic mean surface follows in closed form; observation noise
is layered on top (gaussian for continuous channels, Poisson for counts,
nothing for the sleep-stage channels). Missingness is injected afterwards by
composable modes.

Determinism contract: a subject stream is a pure function of (seed, profile,
modes). Per-day generators are spawned from a SeedSequence tree, and channel
noise is drawn channel-by-channel over the full registry, so a stream
restricted to a channel subset is bit-identical to the corresponding rows of
the full 34-channel stream.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from . import channels as ch

MIN = ch.MINUTES_PER_DAY

STAGE_AWAKE, STAGE_LIGHT, STAGE_DEEP, STAGE_REM = 0, 1, 2, 3

# per-channel gaussian noise scale (raw units); 0 entries are deterministic
# or count channels
NOISE_SIGMA = {
    "heart_rate": 2.5, "rr_median": 25.0, "rmssd": 6.0, "sdnn": 7.0,
    "pnn20": 0.04, "coherence": 5.0, "shen_rr": 0.25, "vlf": 120.0,
    "lf": 100.0, "hf": 80.0, "lf_hf": 0.3, "spectral_entropy": 0.04,
    "valid_rr": 0.05, "spo2": 0.4, "spo2_confidence": 0.05,
    "spo2_coverage": 0.05, "stage_awake": 0.0, "stage_light": 0.0,
    "stage_deep": 0.0, "stage_rem": 0.0, "sleep_coefficient": 0.0,
    "steps": 0.0, "jerk_autocorr": 0.08, "log_energy": 0.6,
    "covariance": 0.05, "log_energy_ratio": 0.4, "zero_crossing_std": 2.0,
    "zero_crossing_avg": 3.0, "axis_mean": 0.05, "kurtosis_accel": 0.8,
    "altitude_std": 0.4, "temperature": 0.15, "conductance": 0.8,
    "lead_contact_counts": 0.0,
}

POISSON_CHANNELS = ("steps", "lead_contact_counts")
DETERMINISTIC_CHANNELS = (
    "stage_awake", "stage_light", "stage_deep", "stage_rem",
    "sleep_coefficient",
)

# generation-time clip bounds; wider than curation limits for the channels
# whose curation rule caps or masks (so curation has real work to do)
_GEN_CLIP = {
    "rmssd": (1.0, 250.0),
    "sdnn": (1.0, 250.0),
    "spo2": (80.0, 100.0),
    "conductance": (0.0, 60.0),
    "temperature": (20.0, 41.0),
}


@dataclass
class SubjectProfile:
    n_days: int
    start_date: dt.date
    activity: float          # 0..1 overall activity level
    sleep_midpoint: float    # minutes after midnight of mid-sleep
    sleep_duration: float    # minutes
    resting_hr: float        # bpm
    stress: float            # 0..1
    hrv_base: float          # ms, RMSSD baseline
    temp_base: float         # degC wrist baseline
    spo2_base: float         # percent
    noise_scale: float = 1.0
    demographics: dict = field(default_factory=dict)


def sample_profile(rng: np.random.Generator, n_days: int,
                   noise_scale: float = 1.0) -> SubjectProfile:
    """Draw a subject profile. Demographic fields are each absent with a
    small probability to exercise downstream imputation."""
    if n_days < 1:
        raise ValueError(f"n_days must be >= 1, got {n_days}")
    activity = float(rng.beta(2.0, 2.0))
    sleep_mid = float(np.clip(rng.normal(210.0, 50.0), 60.0, 420.0))
    sleep_dur = float(np.clip(rng.normal(450.0, 40.0), 300.0, 600.0))
    resting_hr = float(np.clip(rng.normal(62.0, 6.0), 45.0, 85.0))
    stress = float(rng.beta(2.0, 3.0))
    age = float(np.round(rng.uniform(20.0, 75.0), 1))
    hrv_base = float(np.clip(
        75.0 - 25.0 * stress - 0.35 * age + rng.normal(0.0, 9.0), 12.0, 110.0))
    temp_base = float(rng.normal(33.5, 0.4))
    spo2_base = float(np.clip(rng.normal(96.5, 0.5), 93.5, 98.5))
    start = dt.date(2024, 1, 1) + dt.timedelta(days=int(rng.integers(0, 365)))

    demo: dict = {}
    if rng.random() > 0.08:
        demo["age"] = age
    if rng.random() > 0.12:
        demo["bmi"] = float(np.clip(rng.normal(26.0, 4.0), 17.0, 45.0))
    if rng.random() > 0.05:
        demo["gender_group"] = str(
            rng.choice(["female", "male", "nonbinary"], p=[0.48, 0.48, 0.04]))
    if rng.random() > 0.10:
        demo["race_ethnicity"] = str(rng.choice(
            ["group_a", "group_b", "group_c", "group_d", "group_e"],
            p=[0.42, 0.22, 0.16, 0.12, 0.08]))

    return SubjectProfile(
        n_days=n_days, start_date=start, activity=activity,
        sleep_midpoint=sleep_mid, sleep_duration=sleep_dur,
        resting_hr=resting_hr, stress=stress, hrv_base=hrv_base,
        temp_base=temp_base, spo2_base=spo2_base, noise_scale=noise_scale,
        demographics=demo,
    )


# ---------------------------------------------------------------------------
# day context


@dataclass
class DayContext:
    asleep: np.ndarray        # (1440,) 0/1 in-session flag
    stage: np.ndarray         # (1440,) int stage id, valid where asleep
    activity: np.ndarray      # (1440,) smooth 0..1 arousal/movement curve


def _bump(curve: np.ndarray, start: int, length: int, height: float) -> None:
    # raised-cosine bout added in place, clipped at day bounds
    end = min(start + length, MIN)
    if end <= start:
        return
    k = np.arange(end - start)
    curve[start:end] += height * 0.5 * (1.0 - np.cos(2.0 * np.pi * (k + 0.5) / length))


def day_context(profile: SubjectProfile, rng: np.random.Generator) -> DayContext:
    mid = profile.sleep_midpoint + rng.normal(0.0, 15.0)
    dur = float(np.clip(profile.sleep_duration + rng.normal(0.0, 20.0), 240.0, 660.0))
    start = int(np.round(mid - dur / 2.0)) % MIN
    n_sleep = int(np.round(dur))
    sleep_idx = (start + np.arange(n_sleep)) % MIN

    asleep = np.zeros(MIN)
    asleep[sleep_idx] = 1.0

    # 90-minute-ish cycles; deep early, rem late, brief awakenings
    cycle = int(rng.integers(80, 101))
    stage = np.full(MIN, STAGE_AWAKE, dtype=np.int64)
    k = np.arange(n_sleep)
    phase = (k % cycle) / cycle
    frac_night = k / max(n_sleep - 1, 1)
    st = np.full(n_sleep, STAGE_LIGHT, dtype=np.int64)
    st[phase < 0.30 * (1.0 - 0.7 * frac_night)] = STAGE_DEEP
    st[phase > 1.0 - (0.12 + 0.18 * frac_night)] = STAGE_REM
    n_wake = rng.poisson(1.5)
    for _ in range(n_wake):
        w0 = int(rng.integers(0, max(n_sleep - 10, 1)))
        wlen = int(rng.integers(2, 11))
        st[w0:w0 + wlen] = STAGE_AWAKE
    stage[sleep_idx] = st

    act = np.zeros(MIN)
    day_base = 0.05 + 0.10 * profile.activity
    act += day_base
    n_bouts = rng.poisson(2.0 + 3.0 * profile.activity)
    for _ in range(n_bouts):
        b_start = int(rng.integers(0, MIN))
        b_len = int(rng.integers(20, 91))
        b_height = float(rng.uniform(0.4, 1.0)) * (0.5 + 0.5 * profile.activity)
        _bump(act, b_start, b_len, b_height)
    act = np.clip(act, 0.0, 1.0)
    act[asleep > 0] = 0.0
    return DayContext(asleep=asleep, stage=stage, activity=act)


def channel_means(profile: SubjectProfile, ctx: DayContext) -> np.ndarray:
    """Deterministic (34, 1440) mean surface for one day. Observation noise is
    added around these values, so they double as the generator-mean oracle."""
    a = ctx.activity
    s = ctx.asleep
    t = np.arange(MIN)
    out = np.zeros((len(ch.CHANNELS), MIN))

    hr = profile.resting_hr * (1.0 - 0.08 * s) + 55.0 * a \
        + 4.0 * profile.stress + 2.0 * np.sin(2.0 * np.pi * (t - 600) / MIN)
    rr = 60000.0 / hr
    rmssd = np.clip(profile.hrv_base * (1.0 + 0.35 * s - 0.55 * a), 3.0, 240.0)
    sdnn = np.clip(rmssd * 1.25, 3.0, 240.0)
    pnn20 = np.clip(rmssd / 100.0, 0.0, 0.9)
    hf = rmssd * rmssd / 2.0
    lf = hf * (1.5 + 2.0 * a + profile.stress)
    vlf = lf * 1.2
    lf_hf = lf / hf
    sentropy = np.clip(0.55 + 0.25 * a, 0.0, 1.0)
    coher = np.clip(20.0 + 30.0 * s - 15.0 * a, 0.0, 100.0)
    shen = np.clip(3.0 + 1.2 * sentropy, 0.0, 10.0)
    valid = np.clip(0.93 - 0.45 * a, 0.0, 1.0)

    spo2 = profile.spo2_base - 1.0 * s
    spo2_conf = np.clip(0.92 - 0.30 * a, 0.0, 1.0)
    spo2_cov = np.clip(0.90 - 0.25 * a + 0.05 * s, 0.0, 1.0)

    stage_sec = np.zeros((4, MIN))
    for sid in (STAGE_AWAKE, STAGE_LIGHT, STAGE_DEEP, STAGE_REM):
        stage_sec[sid][(s > 0) & (ctx.stage == sid)] = 60.0
    sleep_coef = s.copy()

    steps = 110.0 * a * (1.0 - s)
    jerk = np.clip(0.10 + 0.60 * a, -1.0, 1.0)
    log_e = -6.0 + 10.0 * a
    cov = 0.02 + 0.50 * a
    log_er = 2.0 * a - 0.5
    zc_std = 5.0 + 25.0 * a
    zc_avg = 8.0 + 40.0 * a
    axis = -0.20 + 0.40 * a
    kurt = 3.0 + 8.0 * a
    alt = 0.2 + 2.0 * a

    temp = profile.temp_base + 1.5 * s - 0.8 * a \
        + 0.3 * np.sin(2.0 * np.pi * (t - 300) / MIN)
    scl = np.clip(1.5 + 10.0 * profile.stress * a + 4.0 * a + 1.0 * profile.stress,
                  0.0, 58.0)
    leads = np.full(MIN, 40.0)

    vals = {
        "heart_rate": hr, "rr_median": rr, "rmssd": rmssd, "sdnn": sdnn,
        "pnn20": pnn20, "coherence": coher, "shen_rr": shen, "vlf": vlf,
        "lf": lf, "hf": hf, "lf_hf": lf_hf, "spectral_entropy": sentropy,
        "valid_rr": valid, "spo2": spo2, "spo2_confidence": spo2_conf,
        "spo2_coverage": spo2_cov, "stage_awake": stage_sec[STAGE_AWAKE],
        "stage_light": stage_sec[STAGE_LIGHT], "stage_deep": stage_sec[STAGE_DEEP],
        "stage_rem": stage_sec[STAGE_REM], "sleep_coefficient": sleep_coef,
        "steps": steps, "jerk_autocorr": jerk, "log_energy": log_e,
        "covariance": cov, "log_energy_ratio": log_er,
        "zero_crossing_std": zc_std, "zero_crossing_avg": zc_avg,
        "axis_mean": axis, "kurtosis_accel": kurt, "altitude_std": alt,
        "temperature": temp, "conductance": scl, "lead_contact_counts": leads,
    }
    for i, spec in enumerate(ch.CHANNELS):
        out[i] = vals[spec.name]
    return out


def _sample_day_values(means: np.ndarray, noise_scale: float,
                       rng: np.random.Generator) -> np.ndarray:
    values = np.empty_like(means)
    for i, spec in enumerate(ch.CHANNELS):
        mu = means[i]
        if spec.name in POISSON_CHANNELS:
            values[i] = rng.poisson(np.maximum(mu, 0.0)).astype(np.float64)
        elif spec.name in DETERMINISTIC_CHANNELS:
            values[i] = mu
        else:
            sigma = NOISE_SIGMA[spec.name] * noise_scale
            v = mu + rng.normal(0.0, 1.0, MIN) * sigma if sigma > 0 else mu.copy()
            lo, hi = _GEN_CLIP.get(spec.name, (spec.lo, spec.hi))
            values[i] = np.clip(v, lo, hi)
    return values


# ---------------------------------------------------------------------------
# missingness modes


@dataclass
class RandomMinutes:
    """Independent per-cell dropout with probability p."""
    p: float = 0.02

    def apply(self, values, missing, rng, specs) -> None:
        if self.p <= 0:
            return
        missing |= rng.random(missing.shape) < self.p


@dataclass
class DeviceOff:
    """Whole-device gap (charging / off wrist): all channels for a block."""
    prob: float = 0.25
    length_lo: int = 60
    length_hi: int = 480
    start: int | None = None
    length: int | None = None

    def apply(self, values, missing, rng, specs) -> None:
        if rng.random() >= self.prob:
            return
        length = self.length if self.length is not None else int(
            rng.integers(self.length_lo, self.length_hi + 1))
        start = self.start if self.start is not None else int(
            rng.integers(0, MIN))
        end = min(start + length, MIN)
        missing[:, start:end] = True


@dataclass
class SensorDropout:
    """A few channels lose a contiguous span (single-sensor fault)."""
    prob: float = 0.4
    n_lo: int = 1
    n_hi: int = 4
    span_lo: int = 30
    span_hi: int = 240

    def apply(self, values, missing, rng, specs) -> None:
        if rng.random() >= self.prob:
            return
        k = int(rng.integers(self.n_lo, self.n_hi + 1))
        k = min(k, len(specs))
        rows = rng.choice(len(specs), size=k, replace=False)
        span = int(rng.integers(self.span_lo, self.span_hi + 1))
        start = int(rng.integers(0, MIN))
        end = min(start + span, MIN)
        missing[rows, start:end] = True


@dataclass
class OutOfRange:
    """Sensor glitches: values pushed outside the physiological range without
    marking the cell missing. Curation is expected to catch these."""
    n_lo: int = 0
    n_hi: int = 8

    def apply(self, values, missing, rng, specs) -> None:
        n = int(rng.integers(self.n_lo, self.n_hi + 1))
        for _ in range(n):
            r = int(rng.integers(0, len(specs)))
            m = int(rng.integers(0, MIN))
            spec = specs[r]
            width = spec.hi - spec.lo
            off = (0.05 + 0.25 * rng.random()) * width
            values[r, m] = spec.lo - off if rng.random() < 0.5 else spec.hi + off


def default_missingness() -> list:
    return [RandomMinutes(0.02), DeviceOff(0.25), SensorDropout(0.4), OutOfRange(0, 6)]


def inject_missingness(values: np.ndarray, missing: np.ndarray, modes,
                       rng: np.random.Generator, specs) -> None:
    """Apply each mode in order, mutating `values`/`missing` in place."""
    for mode in modes:
        mode.apply(values, missing, rng, specs)


# ---------------------------------------------------------------------------
# streams


@dataclass
class DayGrid:
    date: dt.date
    values: np.ndarray   # (C, 1440) float64
    missing: np.ndarray  # (C, 1440) bool, True where unobserved


@dataclass
class SubjectStream:
    subject_id: int
    channels: tuple[str, ...]
    traits: dict[str, float]
    demographics: dict
    days: list[DayGrid]

    def day_dates(self) -> list[dt.date]:
        return [d.date for d in self.days]


def _trait_dict(profile: SubjectProfile) -> dict[str, float]:
    return {
        "activity": profile.activity,
        "sleep_midpoint": profile.sleep_midpoint,
        "sleep_duration": profile.sleep_duration,
        "resting_hr": profile.resting_hr,
        "stress": profile.stress,
        "hrv_base": profile.hrv_base,
        "temp_base": profile.temp_base,
        "spo2_base": profile.spo2_base,
    }


def synth_subject(seed, profile: SubjectProfile, subject_id: int = 0,
                  channel_names=None, modes=None) -> SubjectStream:
    """Generate one subject's stream. `seed` is an int or SeedSequence.

    The full 34-channel grid is always generated internally; `channel_names`
    selects rows afterwards, so any subset is bit-identical to the matching
    rows of the full stream.
    """
    root = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(int(seed))
    if modes is None:
        modes = default_missingness()
    keep = tuple(channel_names) if channel_names is not None else ch.NAMES
    rows = np.array([ch.index_of(n) for n in keep], dtype=np.int64)

    days: list[DayGrid] = []
    day_seqs = root.spawn(profile.n_days)
    for d, dseq in enumerate(day_seqs):
        ctx_ss, noise_ss, miss_ss = dseq.spawn(3)
        ctx = day_context(profile, np.random.default_rng(ctx_ss))
        means = channel_means(profile, ctx)
        values = _sample_day_values(means, profile.noise_scale,
                                    np.random.default_rng(noise_ss))
        missing = np.zeros(values.shape, dtype=bool)
        inject_missingness(values, missing, modes,
                           np.random.default_rng(miss_ss), ch.CHANNELS)
        days.append(DayGrid(
            date=profile.start_date + dt.timedelta(days=d),
            values=np.ascontiguousarray(values[rows]),
            missing=np.ascontiguousarray(missing[rows]),
        ))
    return SubjectStream(
        subject_id=subject_id, channels=keep, traits=_trait_dict(profile),
        demographics=dict(profile.demographics), days=days,
    )


def build_corpus(seed: int, n_subjects: int, n_days: int, channel_names=None,
                 modes=None, noise_scale: float = 1.0,
                 id_base: int = 1001) -> list[SubjectStream]:
    """Deterministic corpus: subject generator seed is `seed ^ subject_id`,
    which keeps per-subject streams stable under corpus resizing."""
    streams = []
    for i in range(n_subjects):
        sid = id_base + i
        sub_ss = np.random.SeedSequence(seed ^ sid)
        prof_ss, data_ss = sub_ss.spawn(2)
        profile = sample_profile(np.random.default_rng(prof_ss), n_days,
                                 noise_scale=noise_scale)
        streams.append(synth_subject(data_ss, profile, subject_id=sid,
                                     channel_names=channel_names, modes=modes))
    return streams
