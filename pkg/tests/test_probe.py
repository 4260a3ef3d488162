"""Linear probing: fold assignment, PCA, leakage hygiene, demographics
encoding, realizable tasks, few-shot identity."""

import numpy as np
import pytest
from sklearn.decomposition import PCA as SkPCA

from sensorlab import curation, model as mdl, probe, synth
from sensorlab.channels import desk_channels
from sensorlab.pretrain import RunArtifacts


def make_dataset(rng, n=60, d=24, kind="regression", weights=None,
                 noise=0.0, labels=None, seed=3):
    """TaskDataset over synthetic feature rows, bypassing the encoder."""
    X = rng.normal(size=(n, d))
    if labels is None:
        w = weights if weights is not None else rng.normal(size=d)
        y = X @ w + noise * rng.normal(size=n)
        if kind == "binary":
            y = (y > np.median(y)).astype(float)
    else:
        y = np.asarray(labels, dtype=float)
    ids = np.arange(1001, 1001 + n)
    task = probe.TaskSpec("resting_hr" if kind == "regression" else
                          "high_stress", kind)
    return probe.TaskDataset(
        task=task, subject_ids=ids, X=X,
        feature_names=tuple(f"f{i}" for i in range(d)), y=y,
        folds=np.array([probe.fold_of(s, seed) for s in ids]),
        demographics=[{} for _ in range(n)])


def test_fold_of_stable_and_balanced():
    assert probe.fold_of(1001, 0) == probe.fold_of(1001, 0)
    assert probe.fold_of(1001, 0) != probe.fold_of(1001, 1) or \
        probe.fold_of(1002, 0) != probe.fold_of(1002, 1)
    folds = [probe.fold_of(i, 7) for i in range(2000)]
    assert set(folds) == set(range(5))
    counts = np.bincount(folds)
    assert counts.min() > 300  # roughly uniform


def test_pca_matches_sklearn(rng):
    X = rng.normal(size=(40, 12)) @ rng.normal(size=(12, 12))
    proj = probe.pca_fit(X, 5)
    assert proj.components.shape == (12, 5)
    # orthonormal columns
    np.testing.assert_allclose(proj.components.T @ proj.components,
                               np.eye(5), atol=1e-10)
    sk = SkPCA(n_components=5).fit(X)
    np.testing.assert_allclose(np.abs(proj.components),
                               np.abs(sk.components_.T), atol=1e-8)
    np.testing.assert_allclose(proj.explained_ratio,
                               sk.explained_variance_ratio_, atol=1e-10)
    # projection reproduces sklearn transform up to the sign convention
    ours = probe.pca_apply(X, proj)
    theirs = sk.transform(X)
    for j in range(5):
        assert np.allclose(ours[:, j], theirs[:, j], atol=1e-8) or \
            np.allclose(ours[:, j], -theirs[:, j], atol=1e-8)


def test_pca_fit_k_bounds(rng):
    X = rng.normal(size=(10, 4))
    with pytest.raises(ValueError, match="principal components"):
        probe.pca_fit(X, 5)
    with pytest.raises(ValueError, match="principal components"):
        probe.pca_fit(X, 0)
    probe.pca_fit(X, 4)
    with pytest.raises(ValueError):
        probe.pca_fit(rng.normal(size=(3, 10)), 3)  # k > n-1


def test_probe_no_subject_leakage(rng):
    ds = make_dataset(rng, n=50)
    res = probe.train_probe(ds, n_components=10)
    for fm in res.fold_models:
        test_subjects = set(ds.subject_ids[fm.test_idx])
        train_subjects = set(ds.subject_ids[fm.train_idx])
        assert not test_subjects & train_subjects
        assert all(ds.folds[i] == fm.fold for i in fm.test_idx)
        assert all(ds.folds[i] != fm.fold for i in fm.train_idx)


def test_probe_recovers_linear_regression(rng):
    ds = make_dataset(rng, n=80, d=20, kind="regression", noise=0.05)
    res = probe.train_probe(ds, n_components=20)
    r = probe.primary_metric(res)
    assert r.kind == "pearson"
    assert r.mean > 0.9
    assert res.oof_valid.all()
    assert not res.skipped_folds


def test_probe_binary_separable(rng):
    ds = make_dataset(rng, n=80, d=10, kind="binary")
    res = probe.train_probe(ds, n_components=10)
    s = probe.primary_metric(res)
    assert s.kind == "auc"
    assert s.mean > 0.85


def test_probe_skips_single_class_fold(rng):
    ds = make_dataset(rng, n=50, kind="binary",
                      labels=np.zeros(50))
    # give positives only to fold-0 subjects: every other fold trains on a
    # mix, fold 0's own training split is all zeros
    pos = ds.folds == 0
    ds.y[pos] = 1.0
    res = probe.train_probe(ds, n_components=5)
    assert res.skipped_folds == (0,)
    assert not res.oof_valid[pos].any()
    assert res.oof_valid[~pos].all()


def test_probe_all_skipped_raises(rng):
    ds = make_dataset(rng, n=20, kind="binary", labels=np.zeros(20))
    with pytest.raises(ValueError, match="every fold"):
        probe.train_probe(ds, n_components=3)


def test_nan_imputation_uses_train_means(rng):
    ds = make_dataset(rng, n=40, d=6)
    ds.X[:, 2] = np.nan  # whole column undefined -> imputed to 0
    ds.X[5, 4] = np.nan
    res = probe.train_probe(ds, n_components=4)
    for fm in res.fold_models:
        assert fm.impute_means[2] == 0.0
        assert np.isfinite(fm.impute_means).all()


def test_encode_demographics_cases():
    demos = [
        {"age": 30.0, "bmi": 22.0, "gender_group": "A", "race_ethnicity": "x"},
        {"age": 50.0, "gender_group": "B", "race_ethnicity": "y"},
        {"bmi": 28.0, "gender_group": "A", "race_ethnicity": "x"},
        {"gender_group": "C", "race_ethnicity": "x"},
    ]
    train = np.array([0, 1, 2])
    M, names = probe.encode_demographics(demos, train)
    assert M.shape == (4, 2 + 2 + 2)
    ncol = dict(zip(names, M.T))
    # numeric: subject 2's age imputed to train mean, subject 1's bmi likewise
    assert ncol["age"][2] == pytest.approx(40.0)
    assert ncol["bmi"][1] == pytest.approx(25.0)
    # categorical vocab comes from the training rows only: no C column
    assert "gender_group=C" not in names
    assert set(n for n in names if n.startswith("gender_group=")) == \
        {"gender_group=A", "gender_group=B"}
    # subject 3's unseen C encodes as all-zeros over the train vocabulary
    assert ncol["gender_group=A"][3] == 0.0
    assert ncol["gender_group=B"][3] == 0.0


def test_encode_demographics_majority_imputation():
    demos = [{"gender_group": "A"}, {"gender_group": "A"},
             {"gender_group": "B"}, {}]
    M, names = probe.encode_demographics(demos, np.array([0, 1, 2]))
    col = dict(zip(names, M.T))
    assert col["gender_group=A"][3] == 1.0  # majority of train split
    empty, names2 = probe.encode_demographics([{}, {}], np.array([0, 1]))
    assert [n for n in names2 if "=" in n] == []


def test_probe_with_demographics_columns(rng):
    ds = make_dataset(rng, n=40, d=8)
    for i, d in enumerate(ds.demographics):
        d["age"] = 30.0 + (i % 20)
        d["gender_group"] = "A" if i % 2 else "B"
    res = probe.train_probe(ds, with_demographics=True, n_components=4)
    for fm in res.fold_models:
        assert "age" in fm.dem_names
        assert fm.beta_dem.shape == (len(fm.dem_names),)
        assert fm.dem_mu.shape == (len(fm.dem_names),)


def test_few_shot_full_row_identical_to_standard_cv(rng):
    ds = make_dataset(rng, n=60, d=10, kind="binary")
    res = probe.train_probe(ds, n_components=8)
    rows = probe.few_shot_sweep(ds, percentages=(30, 100), seed=9,
                                n_components=8)
    full = rows[-1]
    s = probe.primary_metric(res)
    assert full["pct"] == 100
    assert full["mean"] == s.mean
    assert full["err_minus"] == s.err_minus
    assert full["err_plus"] == s.err_plus
    assert full["n_components"] == res.n_components
    with pytest.raises(ValueError, match="percentage"):
        probe.few_shot_sweep(ds, percentages=(0,))


def test_few_shot_monotone_data_usage(rng):
    ds = make_dataset(rng, n=60, d=10, kind="binary")
    rows = probe.few_shot_sweep(ds, percentages=(10, 100), seed=5,
                                n_components=5)
    assert rows[0]["pct"] == 10 and rows[1]["pct"] == 100
    assert all(np.isfinite(r["mean"]) for r in rows)


def test_build_task_dataset_labels():
    streams = synth.build_corpus(seed=11, n_subjects=8, n_days=1,
                                 channel_names=("heart_rate", "steps"))
    embs = [probe.SubjectEmbedding(
        subject_id=s.subject_id, mean=np.arange(4.0), std=np.arange(4.0),
        n_tokens=5) for s in streams]
    ds = probe.build_task_dataset(embs, streams, "resting_hr", seed=0)
    assert ds.task.kind == "regression"
    assert len(ds.subject_ids) == 8
    want = [s.traits["resting_hr"] for s in streams]
    np.testing.assert_allclose(ds.y, want)
    hs = probe.build_task_dataset(embs, streams, "high_stress", seed=0)
    assert set(np.unique(hs.y)) <= {0.0, 1.0}
    with pytest.raises(KeyError, match="unknown task"):
        probe.build_task_dataset(embs, streams, "blood_type", seed=0)


def test_age_task_drops_missing_demographics():
    streams = synth.build_corpus(seed=11, n_subjects=30, n_days=1,
                                 channel_names=("heart_rate",))
    embs = [probe.SubjectEmbedding(
        subject_id=s.subject_id, mean=np.zeros(2), std=np.zeros(2),
        n_tokens=1) for s in streams]
    with_age = [s for s in streams if s.demographics.get("age") is not None]
    assume_some_missing = len(with_age) < len(streams)
    ds = probe.build_task_dataset(embs, streams, "age_over_45", seed=0)
    assert len(ds.subject_ids) == len(with_age)
    if assume_some_missing:
        dropped = {s.subject_id for s in streams} - set(ds.subject_ids)
        assert dropped


def test_aggregate_embeddings_end_to_end(rng):
    streams = synth.build_corpus(seed=13, n_subjects=3, n_days=2,
                                 channel_names=desk_channels())
    cfg = mdl.preset("nano", len(desk_channels()), 240)
    params = mdl.init_params(cfg, rng)
    stats = curation.fit_global_stats(streams)
    run = RunArtifacts(config=cfg, params=params, stats=stats, run_dir=None)
    embs = probe.aggregate_embeddings(run, streams)
    assert [e.subject_id for e in embs] == [s.subject_id for s in streams]
    for e in embs:
        assert e.mean.shape == (cfg.enc_hidden,)
        assert e.std.shape == (cfg.enc_hidden,)
        assert e.n_tokens > 0
        assert e.features.shape == (2 * cfg.enc_hidden,)
        assert np.isfinite(e.features).all()
    bad = synth.build_corpus(seed=13, n_subjects=1, n_days=1,
                             channel_names=("heart_rate",))
    with pytest.raises(ValueError, match="channels"):
        probe.aggregate_embeddings(run, bad)


def test_write_csvs(tmp_path, rng):
    ds = make_dataset(rng, n=12, d=4, kind="binary")
    res = probe.train_probe(ds, n_components=3)
    probe.write_dataset_csv(ds, tmp_path / "ds.csv")
    lines = (tmp_path / "ds.csv").read_text().splitlines()
    assert len(lines) == 13
    assert lines[0].startswith("subject,f0,f1,f2,f3,age,bmi,")
    probe.write_results_csv([res], tmp_path / "res.csv")
    rlines = (tmp_path / "res.csv").read_text().splitlines()
    assert rlines[0].startswith("task,kind,with_demographics,metric")
    assert any(",auc," in ln for ln in rlines[1:])
    rows = probe.few_shot_sweep(ds, percentages=(100,), n_components=3)
    probe.write_fewshot_csv(rows, tmp_path / "fs.csv")
    assert (tmp_path / "fs.csv").read_text().splitlines()[0] == \
        "pct,metric,mean,err_minus,err_plus,n_folds,n_components"
