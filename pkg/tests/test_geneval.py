"""Generative evaluation: ablation construction, baseline scoring, pooling,
and bootstrap confidence intervals."""

import datetime as dt

import numpy as np
import pytest

from sensorlab import geneval, model as mdl
from sensorlab.curation import Window
from sensorlab.pretrain import RunArtifacts


def make_window(values, missing=None, sid=1, start_minute=0):
    C, W = values.shape
    if missing is None:
        missing = np.zeros((C, W), dtype=bool)
    return Window(subject_id=sid, channels=tuple(f"ch{i}" for i in range(C)),
                  values=values, missing=missing,
                  start_date=dt.date(2024, 3, 4), start_minute=start_minute)


def fake_run(n_channels=4, window=60):
    cfg = mdl.preset("nano", n_channels, window)
    return RunArtifacts(config=cfg, params={}, stats=None, run_dir=None)


NO_MODEL = ("mean_fill", "nn_fill", "linear_interp")


def test_task_validation_and_labels():
    assert geneval.GenTask("random_imp", 0.8).label == "random_imp_80"
    assert geneval.GenTask("temporal_interp", 60).label == "temporal_interp_60min"
    assert geneval.GenTask("temporal_extrap", 180).label == "temporal_extrap_180min"
    assert geneval.GenTask("signal_imp", 2).label == "signal_imp_2"
    with pytest.raises(geneval.TaskError):
        geneval.GenTask("random_imp", 0.5)
    with pytest.raises(geneval.TaskError):
        geneval.GenTask("temporal_interp", 45)
    with pytest.raises(geneval.TaskError):
        geneval.GenTask("signal_imp", 5)
    with pytest.raises(geneval.TaskError, match="unknown"):
        geneval.GenTask("spectral", 1)


def test_default_tasks_respect_dims():
    labels = [t.label for t in geneval.default_tasks(6, 240)]
    assert labels == [
        "random_imp_80",
        "temporal_interp_20min", "temporal_extrap_20min",
        "temporal_interp_60min", "temporal_extrap_60min",
        "temporal_interp_180min", "temporal_extrap_180min",
        "signal_imp_2", "signal_imp_6",
    ]
    small = [t.label for t in geneval.default_tasks(2, 60)]
    assert "temporal_interp_60min" not in small
    assert "signal_imp_6" not in small


def test_ablation_random_imp_patch_aligned(rng):
    task = geneval.GenTask("random_imp", 0.8)
    abl = geneval.ablation_minutes(task, (6, 240), 20, rng)
    tokens = abl.reshape(6, 12, 20)
    per_tok = tokens.any(axis=2)
    assert (tokens.all(axis=2) == per_tok).all()  # whole patches only
    assert per_tok.sum() == round(0.8 * 72)


def test_ablation_temporal_blocks(rng):
    interp = geneval.GenTask("temporal_interp", 20)
    for _ in range(30):
        abl = geneval.ablation_minutes(interp, (3, 60), 20, rng)
        cols = abl.any(axis=0)
        idx = np.flatnonzero(cols)
        assert len(idx) == 20 and np.array_equal(
            idx, np.arange(idx[0], idx[0] + 20))
        assert abl.all(axis=0)[cols].all()
        # interpolation needs context on both sides
        assert idx[0] >= 1 and idx[-1] <= 58
    extrap = geneval.GenTask("temporal_extrap", 20)
    abl = geneval.ablation_minutes(extrap, (3, 60), 20, rng)
    assert abl[:, 40:].all() and not abl[:, :40].any()


def test_ablation_signal_imp_whole_channels(rng):
    task = geneval.GenTask("signal_imp", 2)
    abl = geneval.ablation_minutes(task, (6, 240), 20, rng)
    rows = abl.any(axis=1)
    assert rows.sum() == 2
    assert abl[rows].all() and not abl[~rows].any()


def test_ablation_errors(rng):
    with pytest.raises(geneval.TaskError, match="does not fit"):
        geneval.ablation_minutes(geneval.GenTask("temporal_interp", 180),
                                 (3, 60), 20, rng)
    with pytest.raises(geneval.TaskError, match="channels"):
        geneval.ablation_minutes(geneval.GenTask("signal_imp", 6),
                                 (4, 240), 20, rng)


def test_baseline_scores_hand_case(rng):
    # one channel, linear ramp: linear interp recovers it exactly, mean fill
    # pays the squared values, nearest neighbour pays a known step error
    W = 60
    ramp = np.linspace(-1.0, 1.0, W)
    vals = np.vstack([ramp, ramp])
    wins = [make_window(vals.copy()) for _ in range(3)]
    run = fake_run(n_channels=2, window=W)
    task = geneval.GenTask("temporal_interp", 20)
    res = geneval.eval_generative(run, wins, task, seed=4, n_boot=0,
                                  methods=NO_MODEL)
    by = {r.method: r for r in res}
    assert by["linear_interp"].mse < 1e-22
    assert by["mean_fill"].mse > by["nn_fill"].mse > by["linear_interp"].mse
    # every method pooled over the identical position count
    assert len({r.n_positions for r in res}) == 1
    assert all(r.n_windows == 3 for r in res)


def test_mean_fill_is_zero_prediction(rng):
    vals = rng.normal(size=(2, 60))
    win = make_window(vals)
    run = fake_run(2, 60)
    task = geneval.GenTask("signal_imp", 2)
    res = geneval.eval_generative(run, [win], task, seed=0, n_boot=0,
                                  methods=("mean_fill",))
    want = float((vals ** 2).mean())
    assert abs(res[0].mse - want) < 1e-12
    assert res[0].n_positions == 120


def test_missing_minutes_never_scored(rng):
    vals = rng.normal(size=(2, 60))
    missing = np.zeros((2, 60), dtype=bool)
    missing[:, :30] = True
    win = make_window(vals, missing)
    run = fake_run(2, 60)
    task = geneval.GenTask("signal_imp", 2)
    res = geneval.eval_generative(run, [win], task, seed=0, n_boot=0,
                                  methods=("mean_fill",))
    want = float((vals[:, 30:] ** 2).mean())
    assert res[0].n_positions == 60
    assert abs(res[0].mse - want) < 1e-12


def test_unscorable_windows_dropped_and_all_unscorable_raises(rng):
    vals = rng.normal(size=(2, 60))
    all_missing = np.ones((2, 60), dtype=bool)
    good = make_window(vals)
    bad = make_window(vals, all_missing)
    run = fake_run(2, 60)
    task = geneval.GenTask("signal_imp", 2)
    res = geneval.eval_generative(run, [good, bad], task, seed=0, n_boot=0,
                                  methods=("mean_fill",))
    assert res[0].n_windows == 1
    with pytest.raises(geneval.TaskError, match="no scorable"):
        geneval.eval_generative(run, [bad], task, seed=0, n_boot=0,
                                methods=("mean_fill",))


def test_bootstrap_ci_brackets_point(rng):
    wins = [make_window(rng.normal(size=(2, 60))) for _ in range(12)]
    run = fake_run(2, 60)
    task = geneval.GenTask("signal_imp", 2)
    res = geneval.eval_generative(run, wins, task, seed=9, n_boot=200,
                                  methods=NO_MODEL)
    for r in res:
        assert r.ci_lo <= r.mse <= r.ci_hi
        assert r.ci_hi > r.ci_lo  # heterogeneous windows -> real spread
    # n_boot=0 collapses the interval onto the point estimate
    res0 = geneval.eval_generative(run, wins, task, seed=9, n_boot=0,
                                   methods=("mean_fill",))
    assert res0[0].ci_lo == res0[0].mse == res0[0].ci_hi


def test_eval_deterministic_in_seed(rng):
    wins = [make_window(rng.normal(size=(2, 60))) for _ in range(5)]
    run = fake_run(2, 60)
    task = geneval.GenTask("temporal_interp", 20)
    a = geneval.eval_generative(run, wins, task, seed=3, methods=NO_MODEL)
    b = geneval.eval_generative(run, wins, task, seed=3, methods=NO_MODEL)
    assert a == b
    c = geneval.eval_generative(run, wins, task, seed=4, methods=NO_MODEL)
    assert any(x.mse != y.mse for x, y in zip(a, c))


def test_model_method_runs_with_real_params(rng):
    cfg = mdl.preset("nano", 2, 60)
    params = mdl.init_params(cfg, rng)
    run = RunArtifacts(config=cfg, params=params, stats=None, run_dir=None)
    wins = [make_window(rng.normal(size=(2, 60))) for _ in range(2)]
    task = geneval.GenTask("temporal_interp", 20)
    res = geneval.eval_generative(run, wins, task, seed=1, n_boot=0)
    methods = [r.method for r in res]
    assert methods == list(geneval.METHODS)
    assert all(np.isfinite(r.mse) for r in res)


def test_write_csv_roundtrip(tmp_path, rng):
    wins = [make_window(rng.normal(size=(2, 60))) for _ in range(3)]
    run = fake_run(2, 60)
    res = geneval.eval_generative(run, wins, geneval.GenTask("signal_imp", 2),
                                  seed=0, n_boot=10, methods=NO_MODEL)
    p = tmp_path / "geneval.csv"
    geneval.write_geneval_csv(res, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "task,method,mse,ci_lo,ci_hi,n_windows,n_positions"
    assert len(lines) == 4
    cells = lines[1].split(",")
    assert cells[0] == "signal_imp_2" and cells[1] == "mean_fill"
    assert float(cells[2]) == res[0].mse
