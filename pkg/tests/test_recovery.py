"""Daily-metric recovery: metric oracles, oracle infill exactness, placement
and summary bookkeeping."""

import numpy as np
import pytest

from sensorlab import curation, recovery, synth
from sensorlab.channels import desk_channels


def test_daily_metric_hand_values():
    valid = np.ones(8, dtype=bool)

    steps = recovery.DailyMetric("steps_total", "steps")
    assert steps.compute(np.array([0, 5, 10, 0, 3, 0, 0, 2.0]), valid) == 20.0

    sleep = recovery.DailyMetric("deep_sleep_minutes", "stage_deep")
    secs = np.array([60, 60, 30, 0, 0, 0, 0, 0.0])
    assert sleep.compute(secs, valid) == 2.5

    hr = np.array([80, 95, 100, 113.9, 114, 151.9, 152, 170.0])
    light = recovery.DailyMetric("exercise_light_minutes", "heart_rate")
    aerobic = recovery.DailyMetric("exercise_aerobic_minutes", "heart_rate")
    anaerobic = recovery.DailyMetric("exercise_anaerobic_minutes", "heart_rate")
    assert light.compute(hr, valid) == 3.0      # 95, 100, 113.9
    assert aerobic.compute(hr, valid) == 2.0    # 114, 151.9
    assert anaerobic.compute(hr, valid) == 2.0  # 152, 170

    spo2 = np.array([88, 89.9, 90, 90.1, 95, 99, 100, 85.0])
    above = recovery.DailyMetric("spo2_above_90_minutes", "spo2")
    below = recovery.DailyMetric("spo2_below_90_minutes", "spo2")
    assert above.compute(spo2, valid) == 4.0  # strictly above
    assert below.compute(spo2, valid) == 3.0  # strictly below; 90 in neither

    temp = np.array([36.5, 36.9, 37.0, 37.1, 38, 36, 35, 39.0])
    cold = recovery.DailyMetric("temp_below_37_minutes", "temperature")
    warm = recovery.DailyMetric("temp_at_or_above_37_minutes", "temperature")
    assert cold.compute(temp, valid) == 4.0
    assert warm.compute(temp, valid) == 4.0  # 37.0 counts as at-or-above

    with pytest.raises(KeyError):
        recovery.DailyMetric("bogus", "steps").compute(hr, valid)


def test_metric_respects_validity_mask():
    steps = recovery.DailyMetric("steps_total", "steps")
    v = np.array([10.0, 20.0, 30.0])
    assert steps.compute(v, np.array([True, False, True])) == 40.0


def test_metrics_for_filters_channels():
    names = [m.name for m in recovery.metrics_for(desk_channels())]
    assert "steps_total" in names
    assert "deep_sleep_minutes" in names
    assert "rem_sleep_minutes" not in names  # stage_rem absent from desk set
    assert recovery.metrics_for(["conductance"]) == []


@pytest.fixture(scope="module")
def one_stream():
    return synth.build_corpus(seed=77, n_subjects=1, n_days=3,
                              channel_names=desk_channels())[0]


def test_oracle_infill_recovers_truth_exactly(one_stream):
    for day in one_stream.days:
        rec = recovery.recover_day(None, day, one_stream.channels,
                                   ablate_start=300, oracle=True)
        assert rec.ablate_len == recovery.ABLATION_MINUTES
        for name, (truth, baseline, recovered) in rec.rows.items():
            assert recovered == truth, name


def test_baseline_skips_ablated_minutes(one_stream):
    day = one_stream.days[0]
    rec = recovery.recover_day(None, day, one_stream.channels,
                               ablate_start=0, oracle=True)
    # recompute the baseline by hand for steps
    names = one_stream.channels
    v, m = curation.physio_mask(day.values, day.missing, names)
    i = names.index("steps")
    valid = ~m[i]
    valid_no_abl = valid.copy()
    valid_no_abl[:recovery.ABLATION_MINUTES] = False
    want = float(v[i][valid_no_abl].sum())
    assert rec.rows["steps_total"][1] == want


def test_recover_day_start_validation(one_stream):
    day = one_stream.days[0]
    with pytest.raises(ValueError, match="does not fit"):
        recovery.recover_day(None, day, one_stream.channels,
                             ablate_start=1440 - 59, oracle=True)
    with pytest.raises(ValueError, match="does not fit"):
        recovery.recover_day(None, day, one_stream.channels,
                             ablate_start=-1, oracle=True)


def test_recover_streams_placement(one_stream):
    recs = recovery.recover_streams(None, [one_stream], seed=5, oracle=True,
                                    start_range=(600, 700))
    assert len(recs) == len(one_stream.days)
    for r in recs:
        assert 600 <= r.ablate_start <= 700
        assert r.subject_id == one_stream.subject_id
    again = recovery.recover_streams(None, [one_stream], seed=5, oracle=True,
                                     start_range=(600, 700))
    assert [r.ablate_start for r in again] == [r.ablate_start for r in recs]
    with pytest.raises(ValueError, match="range"):
        recovery.recover_streams(None, [one_stream], seed=5, oracle=True,
                                 start_range=(1400, 1500))
    with pytest.raises(ValueError, match="range"):
        recovery.recover_streams(None, [one_stream], seed=5, oracle=True,
                                 start_range=(700, 600))


def test_summarize_counts_wins_and_ties():
    recs = [
        recovery.DayRecovery(1, "2024-01-01", 0, 60,
                             {"steps_total": (100.0, 90.0, 99.0)}),   # win
        recovery.DayRecovery(1, "2024-01-02", 0, 60,
                             {"steps_total": (100.0, 95.0, 105.0)}),  # tie
        recovery.DayRecovery(1, "2024-01-03", 0, 60,
                             {"steps_total": (100.0, 99.0, 90.0)}),   # loss
    ]
    s = recovery.summarize_recovery(recs)["steps_total"]
    assert s["days"] == 3
    assert s["win_frac"] == pytest.approx(1 / 3)
    assert s["win_or_tie_frac"] == pytest.approx(2 / 3)
    assert s["baseline_mae"] == pytest.approx((10 + 5 + 1) / 3)
    assert s["recovered_mae"] == pytest.approx((1 + 5 + 10) / 3)


def test_write_recovery_csv(tmp_path, one_stream):
    recs = recovery.recover_streams(None, [one_stream], seed=5, oracle=True)
    p = tmp_path / "recovery.csv"
    recovery.write_recovery_csv(recs, p)
    lines = p.read_text().splitlines()
    assert lines[0] == \
        "subject_id,date,ablate_start,metric,truth,baseline,recovered"
    n_metrics = len(recovery.metrics_for(one_stream.channels))
    assert len(lines) == 1 + len(recs) * n_metrics
    cells = lines[1].split(",")
    assert float(cells[4]) == float(cells[6])  # oracle: truth == recovered
