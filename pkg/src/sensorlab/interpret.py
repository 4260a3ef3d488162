"""Exact attribution for PCA + linear probe heads, task similarity, and
embedding geometry.

For a linear head on PCA scores the SHAP values under feature independence
have a closed form: collapse the projection and the head into one effective
weight vector per original dimension, multiply by centered features. The
attribution of subject i to dimension d is then w_d * (x_id - mu_d), and the
attributions sum to the prediction minus the intercept (local accuracy).
Out-of-fold attributions concatenate per-fold results, each computed with
that fold's own projection, head and centering statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .probe import (PCAProjection, ProbeResult, TaskDataset,
                    encode_demographics, pca_apply)

log = logging.getLogger(__name__)

CENTER_TOL = 1e-6
IDENTITY_TOL = 1e-10
EFFICIENCY_TOL = 1e-8


class ContractError(ValueError):
    """An analytical identity the attribution relies on does not hold."""


# ---------------------------------------------------------------------------
# weight collapse and exact SHAP


def effective_weights(proj: PCAProjection, beta: np.ndarray) -> np.ndarray:
    """Collapse a PCA projection and head coefficients into one weight per
    original dimension: scores are (X - mu) @ V, so X-space weights are
    V @ beta."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.shape[0] != proj.components.shape[1]:
        raise ValueError(
            f"head has {beta.shape} coefficients, projection rank is "
            f"{proj.components.shape[1]}")
    return proj.components @ beta


def verify_weight_collapse(proj: PCAProjection, beta: np.ndarray,
                           X: np.ndarray, tol: float = IDENTITY_TOL) -> float:
    """Max |two-stage prediction - collapsed prediction| over rows of X
    (intercepts cancel). Raises if above `tol`."""
    w = effective_weights(proj, beta)
    two_stage = pca_apply(X, proj) @ beta
    collapsed = (X - proj.mean) @ w
    gap = float(np.max(np.abs(two_stage - collapsed))) if len(X) else 0.0
    if gap > tol:
        raise ContractError(
            f"weight collapse identity violated: max gap {gap:.3e} > {tol}")
    return gap


def shap_exact(w_eff: np.ndarray, X: np.ndarray,
               check_centering: bool = True) -> np.ndarray:
    """Per-sample, per-dimension attributions Phi[i, d] = w_d * X[i, d] for
    centered X. With `check_centering`, column means above 1e-6 raise; skip
    the check only when rows were centered with statistics from a different
    (larger) sample, e.g. held-out rows centered by training means."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(w_eff, dtype=float)
    if X.ndim != 2 or w.ndim != 1 or X.shape[1] != w.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape} vs weights {w.shape}")
    if check_centering and X.size:
        worst = float(np.max(np.abs(X.mean(axis=0))))
        if worst > CENTER_TOL:
            raise ContractError(
                f"features not centered (max column mean {worst:.3e} > "
                f"{CENTER_TOL}); center with the PCA means first")
    phi = X * w
    if phi.size:
        resid = np.abs(phi.sum(axis=1) - X @ w).max()
        if resid > EFFICIENCY_TOL:
            raise ContractError(
                f"local accuracy violated: max residual {resid:.3e}")
    return phi


def multiclass_aggregate(phis: list[np.ndarray]) -> np.ndarray:
    """Mean over classes of |Phi|. Binary heads have one matrix; pass it
    alone and this is just |Phi|."""
    if not phis:
        raise ValueError("need at least one attribution matrix")
    shape = phis[0].shape
    for p in phis[1:]:
        if p.shape != shape:
            raise ValueError(
                f"attribution shapes differ: {p.shape} vs {shape}")
    return np.mean([np.abs(p) for p in phis], axis=0)


# ---------------------------------------------------------------------------
# out-of-fold attributions for a trained probe


@dataclass
class TaskAttribution:
    task: str
    columns: tuple            # embedding feature names + demographic columns
    n_emb: int                # leading columns that are embedding dims
    phi: np.ndarray           # (N_oof, len(columns))
    subject_ids: np.ndarray   # (N_oof,)
    y_hat: np.ndarray         # (N_oof,) linear scores (pre-sigmoid)


def oof_attributions(dataset: TaskDataset, result: ProbeResult) -> TaskAttribution:
    """Concatenated per-fold exact attributions for every out-of-fold subject.

    Each fold contributes Phi for its test rows, computed with its own
    imputation means, PCA projection, head and (when demographics were used)
    one-hot vocabulary. Demographic attributions are centered by the fold's
    training means, which moves mu_D . beta_dem into an effective intercept;
    local accuracy is asserted against that intercept."""
    emb_names = dataset.feature_names
    dem_union: list[str] = []
    for fm in result.fold_models:
        for name in fm.dem_names:
            if name not in dem_union:
                dem_union.append(name)
    columns = tuple(emb_names) + tuple(dem_union)
    dem_pos = {name: i for i, name in enumerate(dem_union)}

    blocks, sids, scores = [], [], []
    for fm in result.fold_models:
        X_imp = dataset.X.copy()
        nan_pos = ~np.isfinite(X_imp)
        if nan_pos.any():
            X_imp[nan_pos] = np.broadcast_to(fm.impute_means, X_imp.shape)[nan_pos]
        w = effective_weights(fm.pca, fm.beta_emb)
        verify_weight_collapse(fm.pca, fm.beta_emb, X_imp[fm.train_idx])

        Xc_te = X_imp[fm.test_idx] - fm.pca.mean
        phi_emb = shap_exact(w, Xc_te, check_centering=False)
        y_hat = Xc_te @ w + fm.intercept

        phi = np.zeros((fm.test_idx.size, len(columns)))
        phi[:, :len(emb_names)] = phi_emb
        b_eff = fm.intercept
        if fm.dem_names:
            D, names = encode_demographics(dataset.demographics, fm.train_idx)
            if names != fm.dem_names:
                raise ContractError(
                    "demographic encoding not reproducible for fold "
                    f"{fm.fold}: {names} vs {fm.dem_names}")
            Dc = D[fm.test_idx] - fm.dem_mu
            phi_dem = shap_exact(fm.beta_dem, Dc, check_centering=False)
            for j, name in enumerate(names):
                phi[:, len(emb_names) + dem_pos[name]] = phi_dem[:, j]
            y_hat = y_hat + D[fm.test_idx] @ fm.beta_dem
            b_eff = b_eff + float(fm.dem_mu @ fm.beta_dem)

        resid = np.abs(phi.sum(axis=1) - (y_hat - b_eff)).max() if len(phi) else 0.0
        if resid > EFFICIENCY_TOL:
            raise ContractError(
                f"fold {fm.fold} local accuracy violated: {resid:.3e}")
        blocks.append(phi)
        sids.append(dataset.subject_ids[fm.test_idx])
        scores.append(y_hat)

    if not blocks:
        raise ValueError(f"task {result.task}: no folds to attribute")
    return TaskAttribution(
        task=result.task, columns=columns, n_emb=len(emb_names),
        phi=np.concatenate(blocks, axis=0),
        subject_ids=np.concatenate(sids),
        y_hat=np.concatenate(scores))


# ---------------------------------------------------------------------------
# global importance and task similarity


@dataclass
class AttributionProfile:
    task: str
    importance: np.ndarray        # (n_emb,) mean |phi| per embedding dim
    normalized: np.ndarray        # importance / max(importance)
    max_importance: float
    dem_importance: dict = field(default_factory=dict)

    @property
    def dem_share(self) -> float:
        dem = sum(self.dem_importance.values())
        tot = float(self.importance.sum()) + dem
        return dem / tot if tot > 0 else 0.0


def attribution_profile(attr: TaskAttribution) -> AttributionProfile:
    """Global importance per dimension: mean over subjects of |phi|, then
    max-normalized over the embedding dims."""
    agg = multiclass_aggregate([attr.phi])
    imp_all = agg.mean(axis=0)
    imp = imp_all[:attr.n_emb]
    mx = float(imp.max()) if imp.size else 0.0
    norm = imp / mx if mx > 0 else np.zeros_like(imp)
    dem = {name: float(imp_all[attr.n_emb + j])
           for j, name in enumerate(attr.columns[attr.n_emb:])}
    return AttributionProfile(task=attr.task, importance=imp, normalized=norm,
                              max_importance=mx, dem_importance=dem)


@dataclass
class SimilarityMatrix:
    tasks: tuple
    values: np.ndarray    # (T, T)
    family: str           # "l1" | "cosine"
    excluded: tuple = ()


def task_similarity(profiles: list[AttributionProfile],
                    family: str = "l1") -> SimilarityMatrix:
    """Pairwise similarity of max-normalized attribution profiles.

    L1 family: S = 1 - d1 / max(d1) over profile pairs, so the most
    dissimilar pair scores 0 and identical profiles 1. Cosine is the plain
    cosine of the normalized profiles. All-zero profiles cannot be
    normalized and are excluded with a flag.
    """
    if family not in ("l1", "cosine"):
        raise ValueError(f"unknown similarity family '{family}'")
    keep, excluded = [], []
    for p in profiles:
        if p.max_importance <= 0:
            log.warning("task %s has an all-zero attribution profile; "
                        "excluded from similarity", p.task)
            excluded.append(p.task)
        else:
            keep.append(p)
    if len(keep) < 2:
        raise ValueError(
            f"need at least 2 non-degenerate profiles, have {len(keep)}")
    dims = {p.normalized.shape[0] for p in keep}
    if len(dims) != 1:
        raise ValueError(f"profiles have mixed dimensions: {sorted(dims)}")
    T = len(keep)
    P = np.stack([p.normalized for p in keep])
    S = np.ones((T, T))
    if family == "l1":
        d1 = np.zeros((T, T))
        for a in range(T):
            for b in range(a + 1, T):
                d1[a, b] = d1[b, a] = float(np.abs(P[a] - P[b]).sum())
        mx = d1.max()
        S = 1.0 - (d1 / mx if mx > 0 else d1)
    else:
        norms = np.linalg.norm(P, axis=1)
        S = (P @ P.T) / np.outer(norms, norms)
        np.fill_diagonal(S, 1.0)
    return SimilarityMatrix(tasks=tuple(p.task for p in keep), values=S,
                            family=family, excluded=tuple(excluded))


# ---------------------------------------------------------------------------
# embedding geometry


@dataclass
class GeometryResult:
    n_used: int
    n_components_99: int
    hist_edges: np.ndarray       # (B+1,)
    hist_counts: np.ndarray      # (B,)
    cumulative_variance: np.ndarray  # up to min(scree_max, rank)


def embedding_geometry(X: np.ndarray, subsample: int = 5000,
                       variance_keep: float = 0.99, scree_max: int = 75,
                       seed: int = 0, bins: int = 50) -> GeometryResult:
    """Distance structure of the subject embedding cloud: mean-impute,
    subsample, PCA keeping `variance_keep` of the variance, pairwise
    Euclidean distance histogram, plus the cumulative explained-variance
    curve up to min(scree_max, rank)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(
            f"geometry needs at least 2 subjects, got shape {X.shape}")
    X = X.copy()
    nan_pos = ~np.isfinite(X)
    if nan_pos.any():
        cnt = (~nan_pos).sum(axis=0)
        total = np.where(nan_pos, 0.0, X).sum(axis=0)
        mu = np.where(cnt > 0, total / np.maximum(cnt, 1), 0.0)
        X[nan_pos] = np.broadcast_to(mu, X.shape)[nan_pos]
    n = X.shape[0]
    if n > subsample:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 17)))
        X = X[np.sort(rng.choice(n, size=subsample, replace=False))]
        n = subsample

    mu = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mu, full_matrices=False)
    var = s * s
    total = float(var.sum())
    if total <= 0:
        cum = np.ones(1)
        k99 = 1
        Z = np.zeros((n, 1))
    else:
        ratios = var / total
        cum_full = np.cumsum(ratios)
        k99 = int(np.searchsorted(cum_full, variance_keep) + 1)
        k99 = min(k99, len(var))
        Z = (X - mu) @ vt[:k99].T
        cum = cum_full[:min(scree_max, len(var))]

    d = pdist(Z) if n > 1 else np.zeros(0)
    hi = float(d.max()) if d.size else 1.0
    hi = hi if hi > 0 else 1.0
    counts, edges = np.histogram(d, bins=bins, range=(0.0, hi))
    return GeometryResult(n_used=n, n_components_99=k99, hist_edges=edges,
                          hist_counts=counts, cumulative_variance=cum)


# ---------------------------------------------------------------------------
# CSV writers


def write_attribution_csv(profiles: list[AttributionProfile], path) -> None:
    lines = ["task,dim,importance,normalized"]
    for p in profiles:
        for d in range(p.importance.shape[0]):
            lines.append(f"{p.task},{d},{float(p.importance[d])!r},"
                         f"{float(p.normalized[d])!r}")
        for name in sorted(p.dem_importance):
            lines.append(f"{p.task},{name},{float(p.dem_importance[name])!r},")
    Path(path).write_text("\n".join(lines) + "\n")


def write_similarity_csv(mats: list[SimilarityMatrix], path) -> None:
    lines = ["task_a,task_b,similarity,family"]
    for m in mats:
        for a, ta in enumerate(m.tasks):
            for b, tb in enumerate(m.tasks):
                lines.append(f"{ta},{tb},{float(m.values[a, b])!r},"
                             f"{m.family}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_geometry_csvs(geo: GeometryResult, hist_path, scree_path) -> None:
    lines = ["bin_lo,bin_hi,count"]
    for i in range(geo.hist_counts.shape[0]):
        lines.append(f"{float(geo.hist_edges[i])!r},"
                     f"{float(geo.hist_edges[i + 1])!r},"
                     f"{int(geo.hist_counts[i])}")
    Path(hist_path).write_text("\n".join(lines) + "\n")
    lines = ["component,cumulative_variance"]
    for i, c in enumerate(geo.cumulative_variance, start=1):
        lines.append(f"{i},{float(c)!r}")
    Path(scree_path).write_text("\n".join(lines) + "\n")
