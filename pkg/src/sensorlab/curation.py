"""Curation: physiological validity rules, global standardization, windowing.

Order of operations for a raw day grid:

1. `physio_mask` caps the cappable channels (SpO2 high side, RMSSD/SDNN),
   masks bespoke out-of-range cells (conductance, temperature, low SpO2),
   nullifies HRV-family channels wherever the observed valid_rr fraction is
   below threshold, then applies each channel's generic validity range.
2. `fit_global_stats` / `apply_zscore_clip` standardize with corpus-level
   per-channel statistics and clip to [-5, 5].
3. `blank_missing` zeroes unobserved cells so models see a constant fill.
4. `slide_windows` cuts fixed-length windows from consecutive-day segments
   with a random 8..24 minute gap between windows, dropping windows that are
   more than 80% missing.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import channels as ch
from .synth import DayGrid, SubjectStream

log = logging.getLogger(__name__)

MIN = ch.MINUTES_PER_DAY

SPO2_CAP = 100.0
SPO2_FLOOR = 70.0
HRV_CAP = 125.0
VALID_RR_MIN = 0.2
SCL_RANGE = (0.0, 60.0)
TEMP_RANGE = (0.0, 41.0)
ZSCORE_CLIP = 5.0
MAX_WINDOW_MISSING = 0.8


def physio_mask(values: np.ndarray, missing: np.ndarray, names) -> tuple[np.ndarray, np.ndarray]:
    """Apply validity rules to one (C, T) grid; returns new arrays."""
    v = values.copy()
    m = missing.copy()
    idx = {n: i for i, n in enumerate(names)}

    # caps first, so capped values survive the range checks below
    if "spo2" in idx:
        row = idx["spo2"]
        np.minimum(v[row], SPO2_CAP, out=v[row])
    for name in ("rmssd", "sdnn"):
        if name in idx:
            row = idx[name]
            np.minimum(v[row], HRV_CAP, out=v[row])

    if "conductance" in idx:
        row = idx["conductance"]
        m[row] |= (v[row] < SCL_RANGE[0]) | (v[row] > SCL_RANGE[1])
    if "temperature" in idx:
        row = idx["temperature"]
        m[row] |= (v[row] < TEMP_RANGE[0]) | (v[row] > TEMP_RANGE[1])
    if "spo2" in idx:
        row = idx["spo2"]
        m[row] |= v[row] < SPO2_FLOOR

    # HRV metrics are only trusted where the valid-RR fraction is observed
    # and at least the threshold
    if "valid_rr" in idx:
        vr_row = idx["valid_rr"]
        low_quality = (~m[vr_row]) & (v[vr_row] < VALID_RR_MIN)
        for name in ch.hrv_names():
            if name in idx:
                m[idx[name]] |= low_quality

    for name in names:
        spec = ch.spec(name)
        row = idx[name]
        m[row] |= (v[row] < spec.lo) | (v[row] > spec.hi)
    return v, m


@dataclass
class GlobalStats:
    channels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray
    constant: np.ndarray  # True where std is 0 or channel never observed

    def save(self, path) -> None:
        lines = ["channel,count,mean,std,constant"]
        for i, name in enumerate(self.channels):
            lines.append(
                f"{name},{int(self.count[i])},{float(self.mean[i])!r},"
                f"{float(self.std[i])!r},{int(self.constant[i])}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "GlobalStats":
        rows = Path(path).read_text().strip().split("\n")[1:]
        names, counts, means, stds, consts = [], [], [], [], []
        for row in rows:
            name, cnt, mu, sd, const = row.split(",")
            names.append(name)
            counts.append(int(cnt))
            means.append(float(mu))
            stds.append(float(sd))
            consts.append(bool(int(const)))
        return cls(tuple(names), np.array(means), np.array(stds),
                   np.array(counts, dtype=np.int64), np.array(consts))


def fit_global_stats(streams: list[SubjectStream]) -> GlobalStats:
    """Per-channel mean/std over all observed, physio-masked cells of the
    given (training) streams. Population std (ddof 0)."""
    if not streams:
        raise ValueError("fit_global_stats needs at least one stream")
    names = streams[0].channels
    C = len(names)
    n = np.zeros(C, dtype=np.int64)
    s1 = np.zeros(C)
    s2 = np.zeros(C)
    for stream in streams:
        if stream.channels != names:
            raise ValueError(
                f"stream {stream.subject_id} channels differ from corpus")
        for day in stream.days:
            v, m = physio_mask(day.values, day.missing, names)
            obs = ~m
            n += obs.sum(axis=1)
            s1 += np.where(obs, v, 0.0).sum(axis=1)
            s2 += np.where(obs, v * v, 0.0).sum(axis=1)
    mean = np.where(n > 0, s1 / np.maximum(n, 1), 0.0)
    var = np.where(n > 0, s2 / np.maximum(n, 1) - mean**2, 0.0)
    std = np.sqrt(np.maximum(var, 0.0))
    constant = (n == 0) | (std == 0.0)
    for i in np.flatnonzero(constant):
        log.warning("channel %s is constant or unobserved in the stats corpus; "
                    "standardized values will be 0", names[i])
    return GlobalStats(tuple(names), mean, std, n, constant)


def apply_zscore_clip(values: np.ndarray, stats: GlobalStats) -> np.ndarray:
    """Standardize a (C, T) grid with global stats and clip to +-5. Constant
    channels map to 0."""
    if values.shape[0] != len(stats.channels):
        raise ValueError(
            f"grid has {values.shape[0]} channels, stats describe "
            f"{len(stats.channels)}")
    denom = np.where(stats.constant, 1.0, stats.std)
    z = (values - stats.mean[:, None]) / denom[:, None]
    z[stats.constant] = 0.0
    return np.clip(z, -ZSCORE_CLIP, ZSCORE_CLIP)


def blank_missing(values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    out = values.copy()
    out[missing] = 0.0
    return out


def curate_day(day: DayGrid, names, stats: GlobalStats) -> DayGrid:
    v, m = physio_mask(day.values, day.missing, names)
    z = apply_zscore_clip(v, stats)
    return DayGrid(date=day.date, values=blank_missing(z, m), missing=m)


def curate_stream(stream: SubjectStream, stats: GlobalStats) -> SubjectStream:
    days = [curate_day(d, stream.channels, stats) for d in stream.days]
    return SubjectStream(subject_id=stream.subject_id, channels=stream.channels,
                         traits=stream.traits, demographics=stream.demographics,
                         days=days)


def resample_minutely(minutes: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Align irregular samples onto the 1440-minute grid of one day.

    `minutes` holds integer minute-of-day indices (duplicates allowed, any
    order); duplicate samples are averaged; minutes with no sample are marked
    missing. The synthetic generator is already minutely, so this is the
    ingestion hook for real device dumps.
    """
    minutes = np.asarray(minutes, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(
            f"values must be (channels, samples), got shape {values.shape}")
    if minutes.ndim != 1 or values.shape[-1] != minutes.size:
        raise ValueError("minutes and values disagree on sample count")
    if minutes.size and (minutes.min() < 0 or minutes.max() >= MIN):
        raise ValueError("minute index outside [0, 1440)")
    C = values.shape[0]
    counts = np.bincount(minutes, minlength=MIN)
    out = np.zeros((C, MIN))
    for c in range(C):
        sums = np.bincount(minutes, weights=values[c], minlength=MIN)
        out[c] = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    missing = np.broadcast_to(counts == 0, (C, MIN)).copy()
    return out, missing


# ---------------------------------------------------------------------------
# windows


@dataclass
class Window:
    subject_id: int
    channels: tuple[str, ...]
    values: np.ndarray    # (C, W)
    missing: np.ndarray   # (C, W)
    start_date: dt.date   # date containing the window's first minute
    start_minute: int     # minute-of-day of the first minute

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def patch_datetimes(self, patch_len: int) -> np.ndarray:
        """(P, 4) cyclic date-time fractions at each time-patch start:
        minute-of-hour/60, hour-of-day/24, day-of-week/7, day-of-year/365."""
        if self.width % patch_len:
            raise ValueError(
                f"window width {self.width} not divisible by patch {patch_len}")
        p = self.width // patch_len
        offs = self.start_minute + np.arange(p) * patch_len
        out = np.empty((p, 4))
        for i, off in enumerate(offs):
            date = self.start_date + dt.timedelta(days=int(off // MIN))
            minute = int(off % MIN)
            out[i, 0] = (minute % 60) / 60.0
            out[i, 1] = (minute // 60) / 24.0
            out[i, 2] = date.weekday() / 7.0
            out[i, 3] = (date.timetuple().tm_yday - 1) / 365.0
        return out


def _segments(stream: SubjectStream) -> list[list[DayGrid]]:
    """Split a stream into runs of consecutive dates."""
    segs: list[list[DayGrid]] = []
    for day in sorted(stream.days, key=lambda d: d.date):
        if segs and (day.date - segs[-1][-1].date).days == 1:
            segs[-1].append(day)
        else:
            segs.append([day])
    return segs


def slide_windows(stream: SubjectStream, seed: int, window_minutes: int = 1440,
                  shift_lo: int = 8, shift_hi: int = 24,
                  max_missing_frac: float = MAX_WINDOW_MISSING) -> list[Window]:
    """Cut windows from each consecutive-day segment, stepping by window
    length plus a uniform random gap in [shift_lo, shift_hi] minutes. Windows
    whose missing fraction exceeds `max_missing_frac` are dropped."""
    if window_minutes < 1:
        raise ValueError(f"window_minutes must be positive, got {window_minutes}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, stream.subject_id)))
    out: list[Window] = []
    for seg in _segments(stream):
        vals = np.concatenate([d.values for d in seg], axis=1)
        miss = np.concatenate([d.missing for d in seg], axis=1)
        total = vals.shape[1]
        pos = 0
        while pos + window_minutes <= total:
            w_vals = vals[:, pos:pos + window_minutes].copy()
            w_miss = miss[:, pos:pos + window_minutes].copy()
            frac = w_miss.mean()
            if frac <= max_missing_frac:
                out.append(Window(
                    subject_id=stream.subject_id, channels=stream.channels,
                    values=w_vals, missing=w_miss,
                    start_date=seg[0].date + dt.timedelta(days=pos // MIN),
                    start_minute=pos % MIN,
                ))
            pos += window_minutes + int(rng.integers(shift_lo, shift_hi + 1))
    return out
