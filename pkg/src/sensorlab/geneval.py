"""Generative evaluation: reconstruction quality against naive baselines.

Tasks ablate part of a curated window; every method then predicts the hidden
minutes and is scored by MSE (standardized space) pooled over ablated minutes
that were originally observed. Methods:

    model          masked-autoencoder reconstruction (token-level dropout of
                   every token overlapping the ablation)
    mean_fill      constant 0 (the global per-channel mean in z-space)
    nn_fill        nearest observed minute within the same channel
    linear_interp  linear interpolation over observed minutes, back/forward
                   fill at the edges

Confidence intervals come from a bootstrap over windows (percentile 2.5/97.5
of the pooled MSE across resamples).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels, masking, model as mdl
from .curation import Window
from .pretrain import RunArtifacts

RANDOM_RATIOS = (0.8,)
BLOCK_MINUTES = (10, 20, 30, 60, 180)
SIGNAL_COUNTS = (2, 6, 12, 20)
METHODS = ("model", "mean_fill", "nn_fill", "linear_interp")

_KIND_CODES = {"random_imp": 1, "temporal_interp": 2, "temporal_extrap": 3,
               "signal_imp": 4}


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class GenTask:
    kind: str
    param: float

    def __post_init__(self):
        if self.kind == "random_imp":
            if self.param not in RANDOM_RATIOS:
                raise TaskError(
                    f"random imputation ratio {self.param} not in "
                    f"{RANDOM_RATIOS}")
        elif self.kind in ("temporal_interp", "temporal_extrap"):
            if int(self.param) not in BLOCK_MINUTES:
                raise TaskError(
                    f"block length {self.param} not in {BLOCK_MINUTES}")
        elif self.kind == "signal_imp":
            if int(self.param) not in SIGNAL_COUNTS:
                raise TaskError(
                    f"signal count {self.param} not in {SIGNAL_COUNTS}")
        else:
            raise TaskError(f"unknown generative task kind '{self.kind}'")

    @property
    def label(self) -> str:
        if self.kind == "random_imp":
            return f"random_imp_{int(self.param * 100)}"
        if self.kind == "signal_imp":
            return f"signal_imp_{int(self.param)}"
        return f"{self.kind}_{int(self.param)}min"


def default_tasks(n_channels: int, window_minutes: int) -> list[GenTask]:
    tasks = [GenTask("random_imp", 0.8)]
    for block in (20, 60, 180):
        if block <= window_minutes - 2:
            tasks.append(GenTask("temporal_interp", block))
            tasks.append(GenTask("temporal_extrap", block))
    for k in SIGNAL_COUNTS:
        if k <= n_channels:
            tasks.append(GenTask("signal_imp", k))
    return tasks


def ablation_minutes(task: GenTask, shape: tuple[int, int], patch_len: int,
                     rng: np.random.Generator) -> np.ndarray:
    """(C, W) bool mask of minutes the task hides."""
    C, W = shape
    out = np.zeros((C, W), dtype=bool)
    if task.kind == "random_imp":
        P = W // patch_len
        tok, _ = masking.artificial_mask(rng, C, P, strategy="random_patch")
        return masking.expand_tokens(tok, patch_len)
    if task.kind in ("temporal_interp", "temporal_extrap"):
        block = int(task.param)
        if block > W - 2:
            raise TaskError(
                f"block of {block} minutes does not fit window of {W} with "
                f"context")
        if task.kind == "temporal_extrap":
            start = W - block
        else:
            start = int(rng.integers(1, W - block))
        out[:, start:start + block] = True
        return out
    k = int(task.param)
    if k > C:
        raise TaskError(f"signal imputation of {k} channels needs at least "
                        f"{k} channels, window has {C}")
    rows = rng.choice(C, size=k, replace=False)
    out[rows, :] = True
    return out


@dataclass
class GenResult:
    task: str
    method: str
    mse: float
    ci_lo: float
    ci_hi: float
    n_windows: int
    n_positions: int


def _bootstrap_ci(sse: np.ndarray, cnt: np.ndarray, point: float,
                  n_boot: int, rng: np.random.Generator) -> tuple[float, float]:
    if n_boot <= 1 or sse.size < 2:
        return point, point
    draws = np.empty(n_boot)
    n = sse.size
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        draws[b] = sse[idx].sum() / cnt[idx].sum()
    lo, hi = np.percentile(draws, [2.5, 97.5])
    return min(float(lo), point), max(float(hi), point)


def eval_generative(run: RunArtifacts, windows: list[Window], task: GenTask,
                    seed: int, n_boot: int = 100,
                    methods=METHODS) -> list[GenResult]:
    """Score every method on one task over curated windows. Windows where the
    ablation hits no originally-observed minute are dropped for all methods,
    so every method is pooled over the identical position set."""
    cfg = run.config
    patch = cfg.patch_len
    rng = np.random.default_rng(np.random.SeedSequence(
        (seed, _KIND_CODES[task.kind], int(task.param * 100))))

    per_method_sse: dict[str, list[float]] = {m: [] for m in methods}
    counts: list[int] = []
    for w in windows:
        abl = ablation_minutes(task, w.values.shape, patch, rng)
        eval_mask = abl & ~w.missing
        n = int(eval_mask.sum())
        if n == 0:
            continue
        context_obs = ~w.missing & ~abl
        truth = w.values

        preds: dict[str, np.ndarray] = {}
        if "model" in methods:
            tok = masking.patchify(abl, patch).any(axis=2)
            full = masking.token_inherited(w.missing, patch) | tok
            preds["model"] = mdl.predict(run.params, cfg, w.values, full,
                                         w.patch_datetimes(patch))
        if "mean_fill" in methods:
            preds["mean_fill"] = np.zeros_like(truth)
        if "nn_fill" in methods or "linear_interp" in methods:
            nn = np.zeros_like(truth)
            li = np.zeros_like(truth)
            for c in range(truth.shape[0]):
                obs = np.ascontiguousarray(context_obs[c])
                row = np.ascontiguousarray(truth[c])
                nn[c], _ = kernels.nearest_fill(row, obs)
                li[c], _ = kernels.linear_interp_fill(row, obs)
            if "nn_fill" in methods:
                preds["nn_fill"] = nn
            if "linear_interp" in methods:
                preds["linear_interp"] = li

        counts.append(n)
        for m in methods:
            d = (preds[m] - truth)[eval_mask]
            per_method_sse[m].append(float(np.dot(d, d)))

    if not counts:
        raise TaskError(
            f"task {task.label} produced no scorable positions on the given "
            f"windows")

    cnt = np.array(counts, dtype=np.float64)
    boot_rng = np.random.default_rng(np.random.SeedSequence(
        (seed, 77, _KIND_CODES[task.kind], int(task.param * 100))))
    results = []
    for m in methods:
        sse = np.array(per_method_sse[m])
        point = float(sse.sum() / cnt.sum())
        lo, hi = _bootstrap_ci(sse, cnt, point, n_boot, boot_rng)
        results.append(GenResult(task=task.label, method=m, mse=point,
                                 ci_lo=lo, ci_hi=hi, n_windows=len(counts),
                                 n_positions=int(cnt.sum())))
    return results


def write_geneval_csv(results: list[GenResult], path) -> None:
    lines = ["task,method,mse,ci_lo,ci_hi,n_windows,n_positions"]
    for r in results:
        lines.append(
            f"{r.task},{r.method},{r.mse!r},{r.ci_lo!r},{r.ci_hi!r},"
            f"{r.n_windows},{r.n_positions}")
    Path(path).write_text("\n".join(lines) + "\n")
