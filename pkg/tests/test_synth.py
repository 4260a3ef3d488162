import numpy as np

from sensorlab import channels as ch
from sensorlab import synth


def corpus_equal(a, b) -> bool:
    if len(a) != len(b):
        return False
    for s, t in zip(a, b):
        if s.subject_id != t.subject_id or s.channels != t.channels:
            return False
        if s.traits != t.traits or s.demographics != t.demographics:
            return False
        for d, e in zip(s.days, t.days):
            if d.date != e.date:
                return False
            if not np.array_equal(d.values, e.values):
                return False
            if not np.array_equal(d.missing, e.missing):
                return False
    return True


def test_same_seed_same_corpus():
    a = synth.build_corpus(11, 3, 2)
    b = synth.build_corpus(11, 3, 2)
    assert corpus_equal(a, b)
    c = synth.build_corpus(12, 3, 2)
    assert not corpus_equal(a, c)


def test_channel_subset_is_bit_identical_to_full_rows():
    names = ch.desk_channels(6)
    full = synth.build_corpus(5, 2, 3)
    sub = synth.build_corpus(5, 2, 3, channel_names=names)
    rows = [ch.NAMES.index(n) for n in names]
    for f, s in zip(full, sub):
        assert s.channels == names
        for df, ds in zip(f.days, s.days):
            assert np.array_equal(df.values[rows], ds.values)
            assert np.array_equal(df.missing[rows], ds.missing)


def test_noiseless_continuous_channels_equal_mean_oracle():
    rng = np.random.default_rng(3)
    profile = synth.sample_profile(rng, n_days=2, noise_scale=0.0)
    stream = synth.synth_subject(21, profile, modes=[])
    root = np.random.SeedSequence(21)
    for d, (day, dseq) in enumerate(zip(stream.days, root.spawn(2))):
        ctx_ss, _, _ = dseq.spawn(3)
        ctx = synth.day_context(profile, np.random.default_rng(ctx_ss))
        means = synth.channel_means(profile, ctx)
        for i, spec in enumerate(ch.CHANNELS):
            if spec.name in synth.POISSON_CHANNELS:
                # stochastic counts: daily total near the mean total
                mu = means[i].sum()
                assert abs(day.values[i].sum() - mu) < 6 * np.sqrt(mu + 1)
            else:
                lo, hi = synth._GEN_CLIP.get(spec.name, (spec.lo, spec.hi))
                assert np.array_equal(day.values[i], np.clip(means[i], lo, hi))
        assert not day.missing.any()


def test_sampled_values_respect_generation_bounds():
    # no OutOfRange injection here; that mode deliberately breaks bounds
    modes = [synth.RandomMinutes(0.02), synth.DeviceOff(0.25)]
    for s in synth.build_corpus(7, 4, 2, modes=modes):
        for day in s.days:
            for i, name in enumerate(s.channels):
                spec = ch.spec(name)
                lo, hi = synth._GEN_CLIP.get(name, (spec.lo, spec.hi))
                obs = day.values[i][~day.missing[i]]
                if name in synth.POISSON_CHANNELS:
                    assert (obs >= 0).all()
                    assert np.array_equal(obs, np.round(obs))
                else:
                    assert (obs >= lo - 1e-9).all()
                    assert (obs <= hi + 1e-9).all()


def test_sleep_stage_minutes_consistent():
    profile = synth.sample_profile(np.random.default_rng(5), 1, 0.0)
    stream = synth.synth_subject(9, profile, modes=[])
    rows = {n: i for i, n in enumerate(stream.channels)}
    day = stream.days[0]
    total = sum(day.values[rows[f"stage_{s}"]]
                for s in ("awake", "light", "deep", "rem"))
    assert (total <= 60.0 + 1e-9).all()
    asleep = total - day.values[rows["stage_awake"]]
    # nightly sleep roughly matches the profile's sleep duration
    assert abs(asleep.sum() / 60.0 - profile.sleep_duration) < 150


def test_default_missingness_produces_gaps_and_out_of_range():
    streams = synth.build_corpus(42, 8, 3)
    frac = np.mean([s.days[d].missing.mean()
                    for s in streams for d in range(3)])
    assert 0.02 < frac < 0.6
    # OutOfRange mode leaves implausible values marked as observed
    bad = 0
    for s in streams:
        for day in s.days:
            for i, name in enumerate(s.channels):
                spec = ch.spec(name)
                obs = day.values[i][~day.missing[i]]
                bad += int(((obs < spec.lo) | (obs > spec.hi)).sum())
    assert bad > 0


def test_traits_and_demographics():
    streams = synth.build_corpus(100, 60, 1)
    keys = {"activity", "sleep_midpoint", "sleep_duration", "resting_hr",
            "stress", "hrv_base", "temp_base", "spo2_base"}
    assert all(keys <= set(s.traits) for s in streams)
    n_age = sum("age" in s.demographics for s in streams)
    n_gender = sum("gender_group" in s.demographics for s in streams)
    assert 0 < n_age < 60          # some absent, most present
    assert 0 < n_gender <= 60
    ages = [s.demographics["age"] for s in streams if "age" in s.demographics]
    assert min(ages) >= 18 and max(ages) <= 90
    assert len({s.subject_id for s in streams}) == 60


def test_device_off_mode_blanks_all_channels():
    mode = synth.DeviceOff(prob=1.0, start=100, length=50)
    values = np.zeros((3, ch.MINUTES_PER_DAY))
    missing = np.zeros_like(values, dtype=bool)
    mode.apply(values, missing, np.random.default_rng(0), ch.CHANNELS[:3])
    assert missing[:, 100:150].all()
    assert not missing[:, :100].any() and not missing[:, 150:].any()
