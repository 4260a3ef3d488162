"""Masked-autoencoder pretraining loop and the model/corpus scaling sweep.

A run owns a directory with a resolved config snapshot, global standardization
stats, a step log, and best/last checkpoints. Everything written is
byte-deterministic for a given seed except `timing.txt`, which holds wall
clock numbers and is deliberately kept out of report manifests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import curation, masking, model as mdl, optim
from .synth import SubjectStream

VAL_STREAM_SALT = 101
MODEL_INIT_SALT = 7
BATCH_SALT = 3
VAL_PLAN_SALT = 11
VAL_PICK_SALT = 5
WINDOW_SALT = 13


class DataError(ValueError):
    pass


@dataclass
class TrainRunConfig:
    steps: int = 2000
    batch_size: int = 32
    base_lr: float = 5e-4
    weight_decay: float = 1e-4
    warmup_frac: float = 0.05
    eval_every: int = 100
    patience: int = 5
    seed: int = 0
    val_fraction: float = 0.2
    val_max_windows: int = 48
    window_minutes: int = 1440

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)       # int
    lrs: list = field(default_factory=list)         # float
    train_loss: list = field(default_factory=list)  # float or nan
    val_loss: list = field(default_factory=list)    # float or nan

    def append(self, step, lr, train_loss, val_loss):
        self.steps.append(int(step))
        self.lrs.append(float(lr))
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))

    def save(self, path) -> None:
        lines = ["step,lr,train_loss,val_loss"]
        for s, lr, tl, vl in zip(self.steps, self.lrs, self.train_loss,
                                 self.val_loss):
            lines.append(f"{s},{lr!r},{tl!r},{vl!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    def val_series(self) -> list[tuple[int, float]]:
        return [(s, v) for s, v in zip(self.steps, self.val_loss)
                if np.isfinite(v)]


@dataclass
class TrainResult:
    run_dir: Path
    best_val: float
    first_val: float
    last_val: float
    param_count: int
    steps_run: int
    log: TrainLog
    best_path: Path
    last_path: Path


def split_subjects(streams: list[SubjectStream], val_fraction: float,
                   seed: int) -> tuple[list[SubjectStream], list[SubjectStream]]:
    """Person-level split; with a single subject train and val coincide."""
    if not streams:
        raise DataError("no subject streams supplied")
    if len(streams) == 1:
        return list(streams), list(streams)
    order = sorted(range(len(streams)), key=lambda i: streams[i].subject_id)
    rng = np.random.default_rng(np.random.SeedSequence((seed, VAL_STREAM_SALT)))
    rng.shuffle(order)
    n_val = max(1, int(round(val_fraction * len(streams))))
    n_val = min(n_val, len(streams) - 1)
    val_idx = set(order[:n_val])
    train = [streams[i] for i in range(len(streams)) if i not in val_idx]
    val = [streams[i] for i in sorted(val_idx)]
    return train, val


def _windows_for(streams, stats, cfg: TrainRunConfig):
    out = []
    for s in streams:
        cur = curation.curate_stream(s, stats)
        out.extend(curation.slide_windows(
            cur, seed=cfg.seed + WINDOW_SALT,
            window_minutes=cfg.window_minutes))
    return out


def _eval_loss(params, config, windows, plans, dts) -> float:
    losses = []
    for w, plan, dt in zip(windows, plans, dts):
        try:
            out = mdl.reconstruct(params, config, w.values, plan, dt)
        except mdl.SampleSkipped:
            continue
        losses.append(out.loss.item())
    if not losses:
        raise DataError("validation produced no scorable windows")
    return float(np.mean(losses))


def _write_config(path, model_cfg: mdl.ModelConfig, cfg: TrainRunConfig,
                  channels, n_train_subj, n_val_subj, n_train_win, n_val_win):
    kv = {}
    for k, v in asdict(model_cfg).items():
        kv[f"model.{k}"] = v
    for k, v in asdict(cfg).items():
        kv[f"train.{k}"] = v
    kv["data.channels"] = ",".join(channels)
    kv["data.train_subjects"] = n_train_subj
    kv["data.val_subjects"] = n_val_subj
    kv["data.train_windows"] = n_train_win
    kv["data.val_windows"] = n_val_win
    lines = [f"{k}={kv[k]}" for k in sorted(kv)]
    Path(path).write_text("\n".join(lines) + "\n")


def pretrain(streams: list[SubjectStream], model_cfg: mdl.ModelConfig,
             cfg: TrainRunConfig, run_dir) -> TrainResult:
    """Train from scratch on the given raw streams; returns the run summary.

    The run directory receives config.txt, stats.csv, train_log.csv,
    best.ckpt, last.ckpt and timing.txt.
    """
    t0 = time.monotonic()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    channels = streams[0].channels
    if len(channels) != model_cfg.n_channels:
        raise DataError(
            f"streams carry {len(channels)} channels but the model expects "
            f"{model_cfg.n_channels}")

    train_streams, val_streams = split_subjects(streams, cfg.val_fraction,
                                                cfg.seed)
    stats = curation.fit_global_stats(train_streams)
    stats.save(run_dir / "stats.csv")

    train_windows = _windows_for(train_streams, stats, cfg)
    val_windows = _windows_for(val_streams, stats, cfg)
    if not train_windows:
        raise DataError("curation produced no training windows")
    if not val_windows:
        raise DataError("curation produced no validation windows")

    pick_rng = np.random.default_rng(
        np.random.SeedSequence((cfg.seed, VAL_PICK_SALT)))
    if len(val_windows) > cfg.val_max_windows:
        keep = np.sort(pick_rng.choice(len(val_windows), cfg.val_max_windows,
                                       replace=False))
        val_windows = [val_windows[i] for i in keep]

    patch = model_cfg.patch_len
    val_plan_rng = np.random.default_rng(
        np.random.SeedSequence((cfg.seed, VAL_PLAN_SALT)))
    val_plans = [masking.plan_masks(val_plan_rng, w.missing, patch)
                 for w in val_windows]
    val_dts = [w.patch_datetimes(patch) for w in val_windows]
    train_dts = [w.patch_datetimes(patch) for w in train_windows]

    params = mdl.init_params(model_cfg, np.random.default_rng(
        np.random.SeedSequence((cfg.seed, MODEL_INIT_SALT))))
    opt = optim.AdamW(cfg.base_lr, weight_decay=cfg.weight_decay)
    batch_rng = np.random.default_rng(
        np.random.SeedSequence((cfg.seed, BATCH_SALT)))

    _write_config(run_dir / "config.txt", model_cfg, cfg, channels,
                  len(train_streams), len(val_streams), len(train_windows),
                  len(val_windows))

    log = TrainLog()
    first_val = _eval_loss(params, model_cfg, val_windows, val_plans, val_dts)
    log.append(0, 0.0, float("nan"), first_val)
    best_val = first_val
    best_path = run_dir / "best.ckpt"
    last_path = run_dir / "last.ckpt"
    mdl.save_checkpoint(best_path, model_cfg, params)
    evals_since_best = 0
    steps_run = 0

    try:
        for step in range(cfg.steps):
            lr = optim.cosine_lr(step, cfg.steps, cfg.base_lr, cfg.warmup_frac)
            idx = batch_rng.integers(0, len(train_windows), size=cfg.batch_size)
            n_ok = 0
            loss_sum = 0.0
            for i in idx:
                w = train_windows[i]
                plan = masking.plan_masks(batch_rng, w.missing, patch)
                try:
                    out = mdl.reconstruct(params, model_cfg, w.values, plan,
                                          train_dts[i])
                except mdl.SampleSkipped:
                    continue
                out.loss.backward()
                loss_sum += out.loss.item()
                n_ok += 1
            steps_run = step + 1
            if n_ok == 0:
                log.append(step + 1, lr, float("nan"), float("nan"))
                continue
            grads = {}
            arrays = {}
            for name, t in params.items():
                arrays[name] = t.data
                grads[name] = (t.grad / n_ok) if t.grad is not None \
                    else np.zeros_like(t.data)
            opt.step(arrays, grads, lr=lr)
            for t in params.values():
                t.grad = None

            val = float("nan")
            if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
                val = _eval_loss(params, model_cfg, val_windows, val_plans,
                                 val_dts)
                if val < best_val:
                    best_val = val
                    evals_since_best = 0
                    mdl.save_checkpoint(best_path, model_cfg, params)
                else:
                    evals_since_best += 1
            log.append(step + 1, lr, loss_sum / n_ok, val)
            if evals_since_best >= cfg.patience:
                break
    finally:
        log.save(run_dir / "train_log.csv")
        mdl.save_checkpoint(last_path, model_cfg, params)
        (run_dir / "timing.txt").write_text(
            f"wall_seconds={time.monotonic() - t0:.3f}\n")

    series = log.val_series()
    return TrainResult(
        run_dir=run_dir, best_val=best_val, first_val=first_val,
        last_val=series[-1][1], param_count=mdl.param_census(params),
        steps_run=steps_run, log=log, best_path=best_path,
        last_path=last_path,
    )


# ---------------------------------------------------------------------------
# trained-run loading


@dataclass
class RunArtifacts:
    config: mdl.ModelConfig
    params: dict
    stats: curation.GlobalStats
    run_dir: Path

    @property
    def channels(self) -> tuple[str, ...]:
        return self.stats.channels


def load_run(run_dir, which: str = "best") -> RunArtifacts:
    run_dir = Path(run_dir)
    ckpt = run_dir / f"{which}.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(
            f"no {which}.ckpt under {run_dir}; run pretraining first "
            f"(sensorlab pretrain)")
    config, params = mdl.load_checkpoint(ckpt)
    stats = curation.GlobalStats.load(run_dir / "stats.csv")
    return RunArtifacts(config=config, params=params, stats=stats,
                        run_dir=run_dir)


# ---------------------------------------------------------------------------
# scaling sweep


def scaling_sweep(corpora: dict[str, list[SubjectStream]],
                  model_tags: list[str], cfg: TrainRunConfig,
                  out_dir) -> list[dict]:
    """Cross every corpus with every model size; one pretraining run each.

    `corpora` maps a label (e.g. subject count) to its stream list, assumed
    ordered smallest to largest; `model_tags` likewise. Returns one row per
    cell with losses, and writes sweep.csv under out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for corpus_label, streams in corpora.items():
        for tag in model_tags:
            model_cfg = mdl.preset(tag, len(streams[0].channels),
                                   cfg.window_minutes)
            run_dir = out_dir / f"run_{corpus_label}_{tag}"
            res = pretrain(streams, model_cfg, cfg, run_dir)
            rows.append({
                "corpus": corpus_label,
                "model": tag,
                "params": res.param_count,
                "first_val": res.first_val,
                "best_val": res.best_val,
                "last_val": res.last_val,
                "steps_run": res.steps_run,
            })
    header = ["corpus", "model", "params", "first_val", "best_val",
              "last_val", "steps_run"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(
            repr(float(r[k])) if isinstance(r[k], float) else str(r[k])
            for k in header))
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    return rows
