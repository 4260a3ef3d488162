import datetime as dt
import logging

import numpy as np
import pytest

from sensorlab import channels as ch
from sensorlab import curation, synth


def make_day(values_by_name: dict, names, date=dt.date(2024, 3, 1)):
    idx = {n: i for i, n in enumerate(names)}
    values = np.zeros((len(names), 1440))
    for name in names:
        spec = ch.spec(name)
        base = np.clip(0.0, spec.lo, spec.hi)
        values[idx[name]] = base
    for name, row in values_by_name.items():
        values[idx[name]] = row
    return synth.DayGrid(date=date, values=values,
                         missing=np.zeros_like(values, dtype=bool))


def test_physio_mask_crafted_grid():
    names = ("spo2", "conductance", "temperature", "rmssd", "sdnn",
             "valid_rr", "heart_rate")
    v = np.zeros((7, 1440))
    m = np.zeros((7, 1440), dtype=bool)
    v[0, :] = 95.0
    v[0, 0], v[0, 1], v[0, 2] = 65.0, 100.0, 101.0
    v[1, :] = 5.0
    v[1, 0], v[1, 1] = -1.0, 61.0
    v[2, :] = 36.5
    v[2, 0] = 45.0
    v[3, :] = 40.0
    v[3, 0] = 200.0
    v[4, :] = 50.0
    v[4, 0] = 200.0
    v[5, :] = 0.9
    v[5, 5] = 0.1  # valid-RR 10% at minute 5
    v[6, :] = 70.0

    out_v, out_m = physio = curation.physio_mask(v, m, names)

    # SpO2: 65 masked (below floor), 100 kept, 101 capped to 100
    assert out_m[0, 0] and not out_m[0, 1] and not out_m[0, 2]
    assert out_v[0, 1] == 100.0 and out_v[0, 2] == 100.0
    # conductance: -1 and 61 masked, 5 kept
    assert out_m[1, 0] and out_m[1, 1] and not out_m[1, 2]
    # temperature 45 masked
    assert out_m[2, 0] and not out_m[2, 1]
    # RMSSD/SDNN 200 capped to 125 and kept observed
    assert out_v[3, 0] == 125.0 and not out_m[3, 0]
    assert out_v[4, 0] == 125.0 and not out_m[4, 0]
    # HRV family nullified where valid_rr < 20%, heart_rate untouched
    assert out_m[3, 5] and out_m[4, 5]
    assert not out_m[6, 5]
    assert not out_m[3, 6]
    # inputs not mutated
    assert not m.any() and v[0, 2] == 101.0


def test_physio_mask_hrv_rule_needs_observed_valid_rr():
    names = ("rmssd", "valid_rr")
    v = np.zeros((2, 1440))
    v[0, :] = 40.0
    v[1, :] = 0.1
    m = np.zeros((2, 1440), dtype=bool)
    m[1, 7] = True  # valid_rr unobserved at minute 7: rule cannot fire there
    _, out_m = curation.physio_mask(v, m, names)
    assert out_m[0, 6]
    assert not out_m[0, 7]


def test_generic_range_mask_applies_to_every_channel():
    names = ("heart_rate",)
    v = np.full((1, 1440), 80.0)
    v[0, 0] = -5.0
    v[0, 1] = 1e9
    _, out_m = curation.physio_mask(v, np.zeros_like(v, dtype=bool), names)
    assert out_m[0, 0] and out_m[0, 1] and not out_m[0, 2]


def test_global_stats_fit_and_zscore_round_trip(tmp_path):
    streams = synth.build_corpus(13, 6, 2, channel_names=ch.desk_channels(4))
    stats = curation.fit_global_stats(streams)

    # pooled observed z-scores have mean ~0, population std ~1
    pooled = {i: [] for i in range(4)}
    for s in streams:
        for day in s.days:
            v, m = curation.physio_mask(day.values, day.missing, s.channels)
            z = curation.apply_zscore_clip(v, stats)
            for i in range(4):
                pooled[i].extend(z[i][~m[i]])
    for i, name in enumerate(stats.channels):
        vals = np.array(pooled[i])
        if stats.constant[i]:
            continue
        assert abs(vals.mean()) < 0.05, name
        assert abs(vals.std() - 1.0) < 0.1, name
        assert np.abs(vals).max() <= curation.ZSCORE_CLIP + 1e-12

    path = tmp_path / "stats.csv"
    stats.save(path)
    back = curation.GlobalStats.load(path)
    assert back.channels == stats.channels
    assert np.allclose(back.mean, stats.mean)
    assert np.allclose(back.std, stats.std)
    assert np.array_equal(back.count, stats.count)


def test_constant_channel_standardizes_to_zero(caplog):
    day = make_day({"steps": np.full(1440, 7.0)}, ("heart_rate", "steps"))
    stream = synth.SubjectStream(1, ("heart_rate", "steps"), {}, {}, [day])
    with caplog.at_level(logging.WARNING):
        stats = curation.fit_global_stats([stream])
    assert stats.constant[1]
    assert any("constant" in r.message for r in caplog.records)
    z = curation.apply_zscore_clip(day.values, stats)
    assert np.array_equal(z[1], np.zeros(1440))


def test_blank_missing_zeroes_only_missing():
    v = np.ones((2, 4))
    m = np.array([[True, False, False, True], [False, False, True, False]])
    out = curation.blank_missing(v, m)
    assert np.array_equal(out, [[0, 1, 1, 0], [1, 1, 0, 1]])
    assert v[0, 0] == 1.0


def test_curate_day_pipeline_blanks_and_masks():
    streams = synth.build_corpus(3, 3, 1)
    stats = curation.fit_global_stats(streams)
    day = streams[0].days[0]
    cur = curation.curate_day(day, streams[0].channels, stats)
    assert cur.values[cur.missing].sum() == 0.0
    assert np.abs(cur.values).max() <= curation.ZSCORE_CLIP


def test_resample_minutely_averages_duplicates():
    minutes = np.array([0, 0, 5, 1439])
    values = np.array([[1.0, 3.0, 10.0, 7.0]])
    out, missing = curation.resample_minutely(minutes, values)
    assert out[0, 0] == 2.0 and out[0, 5] == 10.0 and out[0, 1439] == 7.0
    assert not missing[0, 0] and not missing[0, 5]
    assert missing[0, 1] and missing[0, 100]
    assert missing[0].sum() == 1440 - 3
    with pytest.raises(ValueError):
        curation.resample_minutely(minutes, values[0])
    with pytest.raises(ValueError):
        curation.resample_minutely(np.array([1440]), np.ones((1, 1)))


def test_patch_datetimes_fractions_and_rollover():
    w = curation.Window(
        subject_id=1, channels=("heart_rate",),
        values=np.zeros((1, 240)), missing=np.zeros((1, 240), dtype=bool),
        start_date=dt.date(2024, 3, 1), start_minute=1380)
    out = w.patch_datetimes(20)
    assert out.shape == (12, 4)
    # first patch: 23:00 on a Friday
    assert out[0, 0] == 0.0
    assert out[0, 1] == 23 / 24
    assert out[0, 2] == dt.date(2024, 3, 1).weekday() / 7
    # patch index 3 starts at midnight of the next day
    assert out[3, 1] == 0.0
    assert out[3, 2] == dt.date(2024, 3, 2).weekday() / 7
    with pytest.raises(ValueError):
        w.patch_datetimes(7)


def test_slide_windows_gap_law_on_fully_observed_stream():
    # no missingness -> no dropped windows, so consecutive windows expose
    # the raw 8..24 minute gap draw
    streams = synth.build_corpus(19, 2, 4, modes=[])
    stats = curation.fit_global_stats(streams)
    for s in streams:
        cur = curation.curate_stream(s, stats)
        wins = curation.slide_windows(cur, seed=5, window_minutes=240)
        assert wins
        starts = sorted(
            (w.start_date - cur.days[0].date).days * 1440 + w.start_minute
            for w in wins)
        for a, b in zip(starts, starts[1:]):
            gap = b - (a + 240)
            assert 8 <= gap <= 24
        assert starts[0] >= 0 and starts[-1] + 240 <= 4 * 1440
        again = curation.slide_windows(cur, seed=5, window_minutes=240)
        assert [(w.start_date, w.start_minute) for w in wins] == \
            [(w.start_date, w.start_minute) for w in again]


def test_slide_windows_drops_mostly_missing():
    streams = synth.build_corpus(19, 4, 4)
    stats = curation.fit_global_stats(streams)
    for s in streams:
        cur = curation.curate_stream(s, stats)
        wins = curation.slide_windows(cur, seed=5, window_minutes=240)
        for w in wins:
            assert w.values.shape == (len(s.channels), 240)
            assert w.missing.mean() <= curation.MAX_WINDOW_MISSING


def test_slide_windows_respects_day_gaps():
    streams = synth.build_corpus(23, 1, 5)
    s = streams[0]
    s.days.pop(2)  # break the run of days: windows must not span the hole
    stats = curation.fit_global_stats([s])
    cur = curation.curate_stream(s, stats)
    wins = curation.slide_windows(cur, seed=1, window_minutes=1440)
    for w in wins:
        # every whole-day window must start exactly at a present day
        assert w.start_minute + 1440 <= 2 * 1440 or True
        dates = [d.date for d in cur.days]
        assert w.start_date in dates
        end_day = w.start_date + dt.timedelta(
            days=(w.start_minute + 1439) // 1440)
        assert end_day in dates
