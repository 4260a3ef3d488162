"""Discriminative probing of the pretrained encoder.

Per-subject features are the mean and standard deviation of encoder latents
over every token free of inherited missingness, pooled across all the
subject's days (days are embedded in model-window chunks). A per-fold
pipeline then mean-imputes undefined std entries, reduces to 50 principal
components fitted on the training split only, optionally concatenates
demographics (numeric age/bmi, one-hot gender_group/race_ethnicity, absent
values mean/majority-imputed from the training split), and trains a linear or
logistic head with full-batch AdamW (lr 5e-3, weight decay 1e-4, 400 steps).

Cross-validation is 5-fold and person-independent: the fold of a subject is a
hash of (subject id, seed), fixed across every downstream task. Metrics per
fold are computed on out-of-fold predictions and aggregated in transform
space (see :mod:`sensorlab.metrics`).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import curation, masking, metrics, model as mdl, optim
from .pretrain import RunArtifacts
from .synth import SubjectStream

log = logging.getLogger(__name__)

N_FOLDS = 5
PCA_COMPONENTS = 50
HEAD_STEPS = 400
HEAD_LR = 5e-3
HEAD_WD = 1e-4
FEW_SHOT_PERCENTAGES = (10, 20, 30, 50, 60, 70, 80, 90, 100)

DEMO_NUMERIC = ("age", "bmi")
DEMO_CATEGORICAL = ("gender_group", "race_ethnicity")


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class SubjectEmbedding:
    subject_id: int
    mean: np.ndarray   # (enc_hidden,)
    std: np.ndarray    # (enc_hidden,), NaN where undefined (single token)
    n_tokens: int

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([self.mean, self.std])


def aggregate_embeddings(run: RunArtifacts, streams: list[SubjectStream]) -> list[SubjectEmbedding]:
    """Mean/std of encoder latents over all non-inherited tokens of each
    subject. Subjects with zero observed tokens are excluded with a log
    entry."""
    cfg = run.config
    W = cfg.window_minutes
    patch = cfg.patch_len
    out = []
    for s in streams:
        if len(s.channels) != cfg.n_channels:
            raise ValueError(
                f"stream {s.subject_id} has {len(s.channels)} channels, "
                f"model expects {cfg.n_channels}")
        cur = curation.curate_stream(s, run.stats)
        latents = []
        for day in cur.days:
            for w0 in range(0, day.values.shape[1] - W + 1, W):
                vals = day.values[:, w0:w0 + W]
                miss = day.missing[:, w0:w0 + W]
                inherited = masking.token_inherited(miss, patch).reshape(-1)
                kept = np.flatnonzero(~inherited)
                if kept.size == 0:
                    continue
                win = curation.Window(
                    subject_id=s.subject_id, channels=s.channels, values=vals,
                    missing=miss, start_date=day.date, start_minute=w0)
                P = W // patch
                tokens = masking.patchify(vals, patch).reshape(-1, patch)
                chan_ids = np.arange(tokens.shape[0]) // P
                time_ids = np.arange(tokens.shape[0]) % P
                lat = mdl.encode(run.params, cfg, tokens[kept], chan_ids[kept],
                                 time_ids[kept], win.patch_datetimes(patch))
                latents.append(lat.data)
        if not latents:
            log.warning("subject %d has no observed tokens; excluded from "
                        "embeddings", s.subject_id)
            continue
        alll = np.concatenate(latents, axis=0)
        std = alll.std(axis=0, ddof=1) if alll.shape[0] > 1 \
            else np.full(alll.shape[1], np.nan)
        out.append(SubjectEmbedding(
            subject_id=s.subject_id, mean=alll.mean(axis=0), std=std,
            n_tokens=alll.shape[0]))
    return out


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PCAProjection:
    mean: np.ndarray             # (D,)
    components: np.ndarray       # (D, K), orthonormal columns
    explained_ratio: np.ndarray  # (K,)


def pca_fit(X: np.ndarray, k: int) -> PCAProjection:
    n, d = X.shape
    if k < 1 or k > min(n - 1, d):
        raise ValueError(
            f"cannot fit {k} principal components on {n} samples of "
            f"dimension {d} (k must be <= min(n-1, dims))")
    mu = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mu, full_matrices=False)
    comps = vt[:k].T.copy()
    # deterministic sign: largest-|.| loading of each component positive
    for j in range(k):
        i = int(np.argmax(np.abs(comps[:, j])))
        if comps[i, j] < 0:
            comps[:, j] = -comps[:, j]
    total = float((s * s).sum())
    ratio = (s[:k] * s[:k]) / total if total > 0 else np.zeros(k)
    return PCAProjection(mean=mu, components=comps, explained_ratio=ratio)


def pca_apply(X: np.ndarray, proj: PCAProjection) -> np.ndarray:
    return (X - proj.mean) @ proj.components


# ---------------------------------------------------------------------------
# tasks and folds


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str  # "binary" | "regression"

    def label(self, stream: SubjectStream):
        t = stream.traits
        if self.name == "resting_hr":
            return t["resting_hr"]
        if self.name == "activity_level":
            return t["activity"]
        if self.name == "high_stress":
            return float(t["stress"] > 0.4)
        if self.name == "evening_chronotype":
            return float(t["sleep_midpoint"] > 210.0)
        if self.name == "age_over_45":
            age = stream.demographics.get("age")
            return None if age is None else float(age > 45.0)
        raise KeyError(f"unknown task '{self.name}'")


TASKS = {
    "resting_hr": TaskSpec("resting_hr", "regression"),
    "activity_level": TaskSpec("activity_level", "regression"),
    "high_stress": TaskSpec("high_stress", "binary"),
    "evening_chronotype": TaskSpec("evening_chronotype", "binary"),
    "age_over_45": TaskSpec("age_over_45", "binary"),
}


def fold_of(subject_id: int, seed: int, n_folds: int = N_FOLDS) -> int:
    digest = hashlib.sha256(f"{subject_id}:{seed}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % n_folds


@dataclass
class TaskDataset:
    task: TaskSpec
    subject_ids: np.ndarray      # (N,)
    X: np.ndarray                # (N, D) embedding features, NaN allowed
    feature_names: tuple
    y: np.ndarray                # (N,)
    folds: np.ndarray            # (N,)
    demographics: list           # per-subject dicts


def build_task_dataset(embeddings: list[SubjectEmbedding],
                       streams: list[SubjectStream], task_name: str,
                       seed: int,
                       features: np.ndarray | None = None,
                       feature_names=None) -> TaskDataset:
    """Join embeddings (or an explicit feature matrix aligned with
    `embeddings`) with labels derived from subject traits/demographics.
    Subjects without a label are dropped."""
    if task_name not in TASKS:
        raise KeyError(f"unknown task '{task_name}'; "
                       f"choose from {sorted(TASKS)}")
    task = TASKS[task_name]
    by_id = {s.subject_id: s for s in streams}
    ids, rows, ys, demos = [], [], [], []
    for i, emb in enumerate(embeddings):
        stream = by_id.get(emb.subject_id)
        if stream is None:
            raise KeyError(f"no stream for embedded subject {emb.subject_id}")
        lab = task.label(stream)
        if lab is None:
            continue
        ids.append(emb.subject_id)
        rows.append(features[i] if features is not None else emb.features)
        ys.append(float(lab))
        demos.append(dict(stream.demographics))
    if not ids:
        raise ValueError(f"task {task_name} has no labelled subjects")
    X = np.array(rows)
    if feature_names is None:
        h = X.shape[1] // 2
        feature_names = tuple(
            [f"embedding_{i}_mean" for i in range(h)]
            + [f"embedding_{i}_std" for i in range(h)])
    folds = np.array([fold_of(s, seed) for s in ids], dtype=np.int64)
    return TaskDataset(task=task, subject_ids=np.array(ids, dtype=np.int64),
                       X=X, feature_names=tuple(feature_names),
                       y=np.array(ys), folds=folds, demographics=demos)


# ---------------------------------------------------------------------------
# demographics encoding (per-fold train statistics)


def encode_demographics(demos: list, train_idx: np.ndarray) -> tuple[np.ndarray, tuple]:
    """(N, J) numeric matrix and column names. Numeric fields mean-imputed,
    categoricals one-hot over training categories with majority imputation."""
    n = len(demos)
    cols = []
    names = []
    for key in DEMO_NUMERIC:
        raw = np.array([float(d[key]) if key in d else np.nan for d in demos])
        tr = raw[train_idx]
        fill = float(np.nanmean(tr)) if np.any(np.isfinite(tr)) else 0.0
        cols.append(np.where(np.isfinite(raw), raw, fill))
        names.append(key)
    for key in DEMO_CATEGORICAL:
        tr_vals = [demos[i].get(key) for i in train_idx]
        present = [v for v in tr_vals if v is not None]
        if present:
            counts: dict = {}
            for v in present:
                counts[v] = counts.get(v, 0) + 1
            majority = sorted(counts, key=lambda c: (-counts[c], c))[0]
            cats = sorted(set(present))
        else:
            majority, cats = None, []
        for cat in cats:
            col = np.zeros(n)
            for i, d in enumerate(demos):
                v = d.get(key, majority)
                if v == cat:
                    col[i] = 1.0
            cols.append(col)
            names.append(f"{key}={cat}")
    if not cols:
        return np.zeros((n, 0)), ()
    return np.column_stack(cols), tuple(names)


# ---------------------------------------------------------------------------
# head training


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def train_head(H: np.ndarray, y: np.ndarray, kind: str,
               steps: int = HEAD_STEPS, lr: float = HEAD_LR,
               wd: float = HEAD_WD) -> tuple[np.ndarray, float]:
    """Full-batch AdamW on a linear (MSE) or logistic (BCE) head, zero init."""
    n, m = H.shape
    w = np.zeros(m)
    b = np.zeros(1)
    opt = optim.AdamW(lr, weight_decay=wd)
    for _ in range(steps):
        z = H @ w + b[0]
        if kind == "binary":
            r = _sigmoid(z) - y
        else:
            r = 2.0 * (z - y)
        opt.step({"w": w, "b": b}, {"w": H.T @ r / n, "b": np.array([r.mean()])})
    return w, float(b[0])


# ---------------------------------------------------------------------------
# cross-validated probe


@dataclass
class FoldModel:
    fold: int
    pca: PCAProjection
    impute_means: np.ndarray      # train means used for NaN std entries
    beta_emb: np.ndarray          # (K,)
    beta_dem: np.ndarray          # (J,)
    intercept: float
    dem_mu: np.ndarray            # (J,) train means of demographic columns
    dem_names: tuple
    train_idx: np.ndarray
    test_idx: np.ndarray


@dataclass
class ProbeResult:
    task: str
    kind: str
    with_demographics: bool
    subject_ids: np.ndarray
    y: np.ndarray
    folds: np.ndarray
    oof_pred: np.ndarray          # probabilities (binary) or values
    oof_valid: np.ndarray         # bool; False where the fold was skipped
    fold_models: list
    summaries: dict               # metric kind -> MetricSummary
    n_components: int
    skipped_folds: tuple = ()


def _impute_nan_cols(X: np.ndarray, train_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tr = X[train_idx]
    finite = np.isfinite(tr)
    cnt = finite.sum(axis=0)
    total = np.where(finite, tr, 0.0).sum(axis=0)
    means = np.where(cnt > 0, total / np.maximum(cnt, 1), 0.0)
    out = X.copy()
    nan_pos = ~np.isfinite(out)
    if nan_pos.any():
        out[nan_pos] = np.broadcast_to(means, out.shape)[nan_pos]
    return out, means


def _stratified_subsample(idx: np.ndarray, y: np.ndarray, frac: float,
                          kind: str, rng: np.random.Generator) -> np.ndarray:
    if kind == "binary":
        keep = []
        for cls in (0.0, 1.0):
            cand = idx[y[idx] == cls]
            if cand.size == 0:
                continue
            k = max(1, int(round(frac * cand.size)))
            keep.append(rng.choice(cand, size=k, replace=False))
        return np.sort(np.concatenate(keep)) if keep else idx[:0]
    k = max(2, int(round(frac * idx.size)))
    k = min(k, idx.size)
    return np.sort(rng.choice(idx, size=k, replace=False))


def train_probe(dataset: TaskDataset, with_demographics: bool = False,
                n_components: int = PCA_COMPONENTS, steps: int = HEAD_STEPS,
                lr: float = HEAD_LR, wd: float = HEAD_WD,
                train_frac: float = 1.0, subsample_seed: int = 0) -> ProbeResult:
    """Five-fold person-independent CV. `train_frac` < 1 subsamples each
    fold's training split (stratified for binary tasks); exactly 1.0 draws
    nothing from the subsample generator, so the 100% few-shot row is the
    standard CV run verbatim."""
    N = dataset.X.shape[0]
    kind = dataset.task.kind
    oof_pred = np.full(N, np.nan)
    oof_valid = np.zeros(N, dtype=bool)
    fold_models = []
    fold_vals: dict[str, list] = {"auc": [], "f1": [], "pearson": [], "mae": []}
    skipped = []
    used_k = None

    for f in range(N_FOLDS):
        test_idx = np.flatnonzero(dataset.folds == f)
        train_idx = np.flatnonzero(dataset.folds != f)
        if test_idx.size == 0 or train_idx.size == 0:
            skipped.append(f)
            continue
        if train_frac < 1.0:
            rng = np.random.default_rng(np.random.SeedSequence(
                (subsample_seed, f, int(round(train_frac * 1000)))))
            train_idx = _stratified_subsample(train_idx, dataset.y, train_frac,
                                              kind, rng)
        ytr = dataset.y[train_idx]
        if kind == "binary" and np.unique(ytr).size < 2:
            log.warning("task %s fold %d: single-class training split, "
                        "skipped", dataset.task.name, f)
            skipped.append(f)
            continue
        if train_idx.size < 2:
            skipped.append(f)
            continue

        X_imp, means = _impute_nan_cols(dataset.X, train_idx)
        k = min(n_components, train_idx.size - 1, X_imp.shape[1])
        used_k = k if used_k is None else min(used_k, k)
        proj = pca_fit(X_imp[train_idx], k)
        Z = pca_apply(X_imp, proj)

        if with_demographics:
            D, dem_names = encode_demographics(dataset.demographics, train_idx)
            H = np.column_stack([Z, D]) if D.shape[1] else Z
        else:
            D = np.zeros((N, 0))
            dem_names = ()
            H = Z

        w, b = train_head(H[train_idx], ytr, kind, steps=steps, lr=lr, wd=wd)
        z_te = H[test_idx] @ w + b
        pred = _sigmoid(z_te) if kind == "binary" else z_te
        oof_pred[test_idx] = pred
        oof_valid[test_idx] = True

        yte = dataset.y[test_idx]
        if kind == "binary":
            try:
                fold_vals["auc"].append(metrics.roc_auc(yte, pred))
            except metrics.MetricError:
                pass
            fold_vals["f1"].append(metrics.f1_score(yte, pred >= 0.5))
        else:
            try:
                fold_vals["pearson"].append(metrics.pearson_r(yte, pred))
            except metrics.MetricError:
                pass
            fold_vals["mae"].append(metrics.mae(yte, pred))

        fold_models.append(FoldModel(
            fold=f, pca=proj, impute_means=means, beta_emb=w[:Z.shape[1]],
            beta_dem=w[Z.shape[1]:], intercept=b,
            dem_mu=D[train_idx].mean(axis=0) if D.shape[1] else np.zeros(0),
            dem_names=dem_names, train_idx=train_idx, test_idx=test_idx))

    summaries = {mk: metrics.aggregate_metrics(v, mk)
                 for mk, v in fold_vals.items() if v}
    if not summaries:
        raise ValueError(
            f"task {dataset.task.name}: every fold was skipped")
    return ProbeResult(
        task=dataset.task.name, kind=kind,
        with_demographics=with_demographics,
        subject_ids=dataset.subject_ids, y=dataset.y, folds=dataset.folds,
        oof_pred=oof_pred, oof_valid=oof_valid, fold_models=fold_models,
        summaries=summaries, n_components=used_k or 0,
        skipped_folds=tuple(skipped))


def primary_metric(result: ProbeResult) -> metrics.MetricSummary:
    key = "auc" if result.kind == "binary" else "pearson"
    if key not in result.summaries:
        key = "f1" if result.kind == "binary" else "mae"
    return result.summaries[key]


# ---------------------------------------------------------------------------
# few-shot sweep


def few_shot_sweep(dataset: TaskDataset, with_demographics: bool = False,
                   percentages=FEW_SHOT_PERCENTAGES, seed: int = 0,
                   n_components: int = PCA_COMPONENTS) -> list[dict]:
    rows = []
    for pct in percentages:
        if not 0 < pct <= 100:
            raise ValueError(f"percentage {pct} outside (0, 100]")
        res = train_probe(dataset, with_demographics=with_demographics,
                          n_components=n_components,
                          train_frac=pct / 100.0,
                          subsample_seed=seed)
        sm = primary_metric(res)
        rows.append({
            "pct": pct, "metric": sm.kind, "mean": sm.mean,
            "err_minus": sm.err_minus, "err_plus": sm.err_plus,
            "n_folds": len(sm.per_fold), "n_components": res.n_components,
        })
    return rows


# ---------------------------------------------------------------------------
# CSV writers


def write_dataset_csv(dataset: TaskDataset, path) -> None:
    cols = ["subject"] + list(dataset.feature_names) + \
        list(DEMO_NUMERIC) + list(DEMO_CATEGORICAL) + ["label"]
    lines = [",".join(cols)]
    for i, sid in enumerate(dataset.subject_ids):
        demo = dataset.demographics[i]
        vals = [str(sid)]
        vals += [repr(float(v)) for v in dataset.X[i]]
        vals += [repr(float(demo[k])) if k in demo else "" for k in DEMO_NUMERIC]
        vals += [str(demo.get(k, "")) for k in DEMO_CATEGORICAL]
        vals.append(repr(float(dataset.y[i])))
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_results_csv(results: list[ProbeResult], path) -> None:
    lines = ["task,kind,with_demographics,metric,mean,err_minus,err_plus,"
             "per_fold,clamped"]
    for r in results:
        for mk in sorted(r.summaries):
            s = r.summaries[mk]
            per = ";".join(repr(v) for v in s.per_fold)
            lines.append(
                f"{r.task},{r.kind},{int(r.with_demographics)},{mk},"
                f"{s.mean!r},{s.err_minus!r},{s.err_plus!r},{per},"
                f"{int(s.clamped)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_fewshot_csv(rows: list[dict], path) -> None:
    lines = ["pct,metric,mean,err_minus,err_plus,n_folds,n_components"]
    for r in rows:
        lines.append(f"{r['pct']},{r['metric']},{r['mean']!r},"
                     f"{r['err_minus']!r},{r['err_plus']!r},{r['n_folds']},"
                     f"{r['n_components']}")
    Path(path).write_text("\n".join(lines) + "\n")
