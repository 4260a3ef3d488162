"""Daily-metric recovery: can model infill repair aggregate day statistics?

A contiguous block of minutes is ablated across all channels of a raw day.
Three aggregate variants are compared per metric:

    truth      aggregates over all known-valid minutes (post validity rules)
    baseline   the same aggregate simply skipping the ablated minutes
    recovered  ablated minutes replaced by de-standardized model infill,
               clamped to the channel's physiological range

Metrics follow the wearable daily-summary conventions: total steps, sleep
stage minutes (stage channels carry seconds per minute), heart-rate exercise
zone minutes (light [95,114), aerobic [114,152), anaerobic >=152), SpO2
minutes above/below 90%, and wrist-temperature minutes below / at-or-above
37 degrees.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import channels as ch
from . import curation, masking, model as mdl
from .pretrain import RunArtifacts
from .synth import DayGrid, SubjectStream

MIN = ch.MINUTES_PER_DAY
ABLATION_MINUTES = 60

HR_LIGHT = (95.0, 114.0)
HR_AEROBIC = (114.0, 152.0)
HR_ANAEROBIC = 152.0
SPO2_SPLIT = 90.0
TEMP_SPLIT = 37.0


@dataclass(frozen=True)
class DailyMetric:
    name: str
    channel: str

    def compute(self, values: np.ndarray, valid: np.ndarray) -> float:
        v = values[valid]
        if self.name == "steps_total":
            return float(v.sum())
        if self.name.endswith("_sleep_minutes"):
            return float(v.sum() / 60.0)
        if self.name == "exercise_light_minutes":
            return float(((v >= HR_LIGHT[0]) & (v < HR_LIGHT[1])).sum())
        if self.name == "exercise_aerobic_minutes":
            return float(((v >= HR_AEROBIC[0]) & (v < HR_AEROBIC[1])).sum())
        if self.name == "exercise_anaerobic_minutes":
            return float((v >= HR_ANAEROBIC).sum())
        if self.name == "spo2_above_90_minutes":
            return float((v > SPO2_SPLIT).sum())
        if self.name == "spo2_below_90_minutes":
            return float((v < SPO2_SPLIT).sum())
        if self.name == "temp_below_37_minutes":
            return float((v < TEMP_SPLIT).sum())
        if self.name == "temp_at_or_above_37_minutes":
            return float((v >= TEMP_SPLIT).sum())
        raise KeyError(f"unknown daily metric '{self.name}'")


ALL_METRICS = (
    DailyMetric("steps_total", "steps"),
    DailyMetric("light_sleep_minutes", "stage_light"),
    DailyMetric("deep_sleep_minutes", "stage_deep"),
    DailyMetric("rem_sleep_minutes", "stage_rem"),
    DailyMetric("exercise_light_minutes", "heart_rate"),
    DailyMetric("exercise_aerobic_minutes", "heart_rate"),
    DailyMetric("exercise_anaerobic_minutes", "heart_rate"),
    DailyMetric("spo2_above_90_minutes", "spo2"),
    DailyMetric("spo2_below_90_minutes", "spo2"),
    DailyMetric("temp_below_37_minutes", "temperature"),
    DailyMetric("temp_at_or_above_37_minutes", "temperature"),
)


def metrics_for(channel_names) -> list[DailyMetric]:
    present = set(channel_names)
    return [m for m in ALL_METRICS if m.channel in present]


@dataclass
class DayRecovery:
    subject_id: int
    date: str
    ablate_start: int
    ablate_len: int
    rows: dict  # metric name -> (truth, baseline, recovered)


def _infill_window(run: RunArtifacts, v_raw, m_raw, day: DayGrid,
                   start_minute: int, names) -> tuple[np.ndarray, int]:
    """Model prediction in raw units for a window covering the ablation.
    Returns (pred values (C, W) raw units clamped to channel range, w0)."""
    cfg = run.config
    W = cfg.window_minutes
    w0 = int(np.clip(start_minute + ABLATION_MINUTES // 2 - W // 2, 0, MIN - W))
    z = curation.apply_zscore_clip(v_raw, run.stats)
    z = curation.blank_missing(z, m_raw)
    zw = z[:, w0:w0 + W]
    mw = m_raw[:, w0:w0 + W]
    win = curation.Window(subject_id=0, channels=tuple(names), values=zw,
                          missing=mw, start_date=day.date, start_minute=w0)
    abl = np.zeros((len(names), W), dtype=bool)
    abl[:, start_minute - w0:start_minute - w0 + ABLATION_MINUTES] = True
    tok = masking.patchify(abl, cfg.patch_len).any(axis=2)
    full = masking.token_inherited(mw, cfg.patch_len) | tok
    zpred = mdl.predict(run.params, cfg, zw, full,
                        win.patch_datetimes(cfg.patch_len))
    raw = zpred * run.stats.std[:, None] + run.stats.mean[:, None]
    for i, name in enumerate(names):
        spec = ch.spec(name)
        raw[i] = np.clip(raw[i], spec.lo, spec.hi)
    return raw, w0


def recover_day(run: RunArtifacts, day: DayGrid, names, ablate_start: int,
                oracle: bool = False) -> DayRecovery:
    """Score one day. `oracle=True` replaces model infill with the true raw
    values, which must make recovered equal truth exactly."""
    if not 0 <= ablate_start <= MIN - ABLATION_MINUTES:
        raise ValueError(f"ablation start {ablate_start} does not fit a day")
    v_raw, m_raw = curation.physio_mask(day.values, day.missing, names)
    valid = ~m_raw
    abl = np.zeros((len(names), MIN), dtype=bool)
    abl[:, ablate_start:ablate_start + ABLATION_MINUTES] = True

    if oracle:
        filled = v_raw
    else:
        pred, w0 = _infill_window(run, v_raw, m_raw, day, ablate_start, names)
        filled = v_raw.copy()
        span = slice(ablate_start, ablate_start + ABLATION_MINUTES)
        filled[:, span] = pred[:, ablate_start - w0:
                               ablate_start - w0 + ABLATION_MINUTES]

    rows = {}
    for metric in metrics_for(names):
        i = list(names).index(metric.channel)
        truth = metric.compute(v_raw[i], valid[i])
        baseline = metric.compute(v_raw[i], valid[i] & ~abl[i])
        recovered = metric.compute(filled[i], valid[i])
        rows[metric.name] = (truth, baseline, recovered)
    return DayRecovery(subject_id=0, date=day.date.isoformat(),
                       ablate_start=ablate_start,
                       ablate_len=ABLATION_MINUTES, rows=rows)


def recover_streams(run: RunArtifacts, streams: list[SubjectStream], seed: int,
                    oracle: bool = False,
                    start_range: tuple[int, int] | None = None) -> list[DayRecovery]:
    """One recovery per day over all given streams; ablation placement is
    drawn once per day from a seeded generator, uniformly over `start_range`
    (inclusive bounds; default anywhere in the day)."""
    lo, hi = start_range if start_range is not None \
        else (0, MIN - ABLATION_MINUTES)
    if not 0 <= lo <= hi <= MIN - ABLATION_MINUTES:
        raise ValueError(f"ablation start range ({lo}, {hi}) does not fit a day")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 29)))
    out = []
    for s in streams:
        for day in s.days:
            start = int(rng.integers(lo, hi + 1))
            rec = recover_day(run, day, s.channels, start, oracle=oracle)
            rec.subject_id = s.subject_id
            out.append(rec)
    return out


def write_recovery_csv(recs: list[DayRecovery], path) -> None:
    lines = ["subject_id,date,ablate_start,metric,truth,baseline,recovered"]
    for r in recs:
        for name in sorted(r.rows):
            t, b, rec = r.rows[name]
            lines.append(f"{r.subject_id},{r.date},{r.ablate_start},"
                         f"{name},{float(t)!r},{float(b)!r},{float(rec)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def summarize_recovery(recs: list[DayRecovery]) -> dict[str, dict]:
    """Per metric: mean absolute error of baseline and recovered vs truth,
    and the fraction of days where recovered is strictly closer."""
    by_metric: dict[str, dict] = {}
    for r in recs:
        for name, (t, b, rec) in r.rows.items():
            d = by_metric.setdefault(
                name, {"baseline_err": [], "recovered_err": [], "wins": 0,
                       "ties": 0, "days": 0})
            eb, er = abs(b - t), abs(rec - t)
            d["baseline_err"].append(eb)
            d["recovered_err"].append(er)
            d["days"] += 1
            if er < eb:
                d["wins"] += 1
            elif er == eb:
                d["ties"] += 1
    out = {}
    for name, d in by_metric.items():
        out[name] = {
            "days": d["days"],
            "baseline_mae": float(np.mean(d["baseline_err"])),
            "recovered_mae": float(np.mean(d["recovered_err"])),
            "win_frac": d["wins"] / d["days"],
            "win_or_tie_frac": (d["wins"] + d["ties"]) / d["days"],
        }
    return out
