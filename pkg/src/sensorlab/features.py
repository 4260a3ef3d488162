"""Engineered daily features: 20 summary statistics per channel per day.

missing_rate is computed on the pre-imputation observation mask; every other
feature runs on the series after linear interpolation of interior gaps with
back/forward fill at the edges. Moments are population moments (ddof 0),
kurtosis is excess kurtosis, and the cosinor pair comes from a least-squares
fit of a 24 h cosine: y ~ M + a*cos(2*pi*t/1440) + b*sin(2*pi*t/1440), with
amplitude sqrt(a^2+b^2) and acrophase atan2(b, a) wrapped to [0, 2*pi).

A fully-missing channel-day keeps missing_rate = 1 and zeroes the remaining
19 features with the degenerate flag set; flags also mark features whose
definition divides by a vanishing denominator.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .curation import physio_mask
from .synth import SubjectStream

MIN = 1440

FEATURE_NAMES = (
    "missing_rate", "proportion_zeros", "mean", "std", "cv", "p05", "p95",
    "median", "iqr", "skewness", "kurtosis", "rms", "mean_abs_change",
    "rmssd_diff", "zero_crossing_rate", "hjorth_complexity",
    "intradaily_variability", "cosinor_amplitude", "cosinor_acrophase",
    "acf_lag1",
)
N_FEATURES = len(FEATURE_NAMES)
_EPS_MEAN = 1e-9

_T = np.arange(MIN, dtype=np.float64)
_COS = np.cos(2.0 * np.pi * _T / MIN)
_SIN = np.sin(2.0 * np.pi * _T / MIN)
_DESIGN = np.column_stack([np.ones(MIN), _COS, _SIN])


def cosinor_fit(y: np.ndarray) -> tuple[float, float]:
    """(amplitude, acrophase) of the 24 h cosinor least-squares fit."""
    if y.shape[0] != MIN:
        raise ValueError(f"cosinor fit expects a full day, got {y.shape[0]}")
    coef, *_ = np.linalg.lstsq(_DESIGN, y, rcond=None)
    _, a, b = coef
    amp = float(np.hypot(a, b))
    phase = float(np.arctan2(b, a) % (2.0 * np.pi))
    return amp, phase


def channel_day_features(values: np.ndarray, missing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(20,) feature vector and (20,) degenerate flags for one channel-day."""
    out = np.zeros(N_FEATURES)
    flags = np.zeros(N_FEATURES, dtype=bool)
    observed = ~np.asarray(missing, dtype=bool)
    out[0] = 1.0 - observed.mean()
    y, ok = kernels.linear_interp_fill(
        np.ascontiguousarray(values, dtype=np.float64), observed)
    if not ok:
        flags[1:] = True
        return out, flags

    d = np.diff(y)
    mu = y.mean()
    var = y.var()
    yc = y - mu

    out[1] = float((y == 0.0).mean())
    out[2] = mu
    out[3] = float(np.sqrt(var))
    if abs(mu) < _EPS_MEAN:
        flags[4] = True
    else:
        out[4] = out[3] / abs(mu)
    out[5] = float(np.percentile(y, 5))
    out[6] = float(np.percentile(y, 95))
    out[7] = float(np.median(y))
    out[8] = float(np.percentile(y, 75) - np.percentile(y, 25))
    if var == 0.0:
        flags[9] = flags[10] = True
    else:
        m3 = float((yc**3).mean())
        m4 = float((yc**4).mean())
        out[9] = m3 / var**1.5
        out[10] = m4 / var**2 - 3.0
    out[11] = float(np.sqrt((y * y).mean()))
    out[12] = float(np.abs(d).mean())
    out[13] = float(np.sqrt((d * d).mean()))
    # sign changes of the mean-centered series
    out[14] = float((yc[:-1] * yc[1:] < 0).sum() / (y.size - 1))
    var_d = d.var()
    if var == 0.0 or var_d == 0.0:
        flags[15] = True
    else:
        dd = np.diff(d)
        mob_y = np.sqrt(var_d / var)
        mob_d = np.sqrt(dd.var() / var_d)
        out[15] = mob_d / mob_y
    if var == 0.0:
        flags[16] = True
    else:
        out[16] = float((d * d).mean() / var)
    amp, phase = cosinor_fit(y)
    out[17] = amp
    out[18] = phase
    if var == 0.0:
        flags[19] = True
    else:
        out[19] = float((yc[:-1] * yc[1:]).sum() / (yc * yc).sum())
    return out, flags


@dataclass
class FeatureTable:
    subject_ids: np.ndarray   # (N,)
    dates: list               # (N,) iso strings
    values: np.ndarray        # (N, C * 20)
    flags: np.ndarray         # (N, C * 20) bool
    columns: tuple[str, ...]

    def save(self, path) -> None:
        lines = ["subject_id,date," + ",".join(self.columns)]
        for i in range(self.values.shape[0]):
            vals = ",".join(repr(float(v)) for v in self.values[i])
            lines.append(f"{self.subject_ids[i]},{self.dates[i]},{vals}")
        Path(path).write_text("\n".join(lines) + "\n")


def extract_features(streams: list[SubjectStream]) -> FeatureTable:
    """Daily feature rows over all streams, on physiologically-masked raw
    values."""
    if not streams:
        raise ValueError("no streams supplied")
    names = streams[0].channels
    columns = tuple(f"{c}__{f}" for c in names for f in FEATURE_NAMES)
    ids, dates, rows, flag_rows = [], [], [], []
    for s in streams:
        if s.channels != names:
            raise ValueError(f"stream {s.subject_id} channel set differs")
        for day in s.days:
            v, m = physio_mask(day.values, day.missing, names)
            vec = np.empty(len(names) * N_FEATURES)
            flg = np.empty(len(names) * N_FEATURES, dtype=bool)
            for c in range(len(names)):
                f, fl = channel_day_features(v[c], m[c])
                vec[c * N_FEATURES:(c + 1) * N_FEATURES] = f
                flg[c * N_FEATURES:(c + 1) * N_FEATURES] = fl
            ids.append(s.subject_id)
            dates.append(day.date.isoformat())
            rows.append(vec)
            flag_rows.append(flg)
    return FeatureTable(
        subject_ids=np.array(ids, dtype=np.int64), dates=dates,
        values=np.array(rows), flags=np.array(flag_rows), columns=columns)


def subject_feature_matrix(table: FeatureTable) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject mean of daily feature vectors (person-level convention).
    Returns (subject_ids (S,), matrix (S, C*20)); subjects keep their first
    appearance order."""
    ids = []
    rows = []
    for sid in dict.fromkeys(int(s) for s in table.subject_ids):
        sel = table.subject_ids == sid
        ids.append(sid)
        rows.append(table.values[sel].mean(axis=0))
    return np.array(ids, dtype=np.int64), np.array(rows)
