"""Single command line entry point for the whole pipeline.

Every command writes a resolved-config snapshot into its output directory
before doing any work, never mutates its inputs, and is deterministic given
the same inputs and seed. `report` gathers the CSV artifacts of earlier
commands into one directory with a sha256 manifest; repeating a pipeline
with the same seed reproduces the manifest byte for byte (wall-clock timing
files are excluded for exactly that reason).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import (channels, curation, features, geneval, interpret,
               model as mdl, pretrain, probe, recovery, streamio, synth)

log = logging.getLogger(__name__)


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# plumbing


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ("true", "false"):
        return text == "true"
    return text


def read_config_file(path) -> dict:
    """Plain key=value lines; '#' starts a comment."""
    out = {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file {p} does not exist")
    for ln, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{p}:{ln}: expected key=value, got '{line}'")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = _coerce(val.strip())
    return out


def write_resolved_config(args: argparse.Namespace, out_dir: Path) -> None:
    """Snapshot of every resolved option, written before any work."""
    out_dir.mkdir(parents=True, exist_ok=True)
    skip = {"func", "config"}
    lines = [f"{k}={v}" for k, v in sorted(vars(args).items())
             if k not in skip]
    (out_dir / "resolved_config.txt").write_text("\n".join(lines) + "\n")


def _load_corpus(path) -> list:
    try:
        return streamio.read_corpus(path)
    except FileNotFoundError as e:
        raise CliError(f"{e} -- produce it with: sensorlab synth --out {path}")


def _load_run(path) -> pretrain.RunArtifacts:
    try:
        return pretrain.load_run(path)
    except FileNotFoundError as e:
        raise CliError(
            f"{e} -- produce it with: sensorlab pretrain --out {path}")


def _channel_names(n: int) -> tuple:
    if n <= 0 or n >= len(channels.NAMES):
        return channels.NAMES
    return channels.desk_channels(n)


def _eval_windows(run: pretrain.RunArtifacts, streams, seed: int):
    wins = []
    for s in streams:
        cur = curation.curate_stream(s, run.stats)
        wins.extend(curation.slide_windows(
            cur, seed=seed, window_minutes=run.config.window_minutes))
    if not wins:
        raise CliError("no evaluation windows survived curation")
    return wins


def _train_cfg(args) -> pretrain.TrainRunConfig:
    return pretrain.TrainRunConfig(
        steps=args.steps, batch_size=args.batch, base_lr=args.lr,
        eval_every=args.eval_every, patience=args.patience, seed=args.seed,
        val_fraction=args.val_fraction, window_minutes=args.window_min)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    names = _channel_names(args.channels)
    streams = synth.build_corpus(args.seed, args.subjects, args.days,
                                 channel_names=names,
                                 noise_scale=args.noise)
    streamio.write_corpus(streams, out)
    print(f"wrote {len(streams)} subject streams "
          f"({args.days} days, {len(names)} channels) to {out}")
    return 0


def cmd_curate(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    streams = _load_corpus(args.corpus)
    stats = curation.fit_global_stats(streams)
    stats.save(out / "stats.csv")
    curated = [curation.curate_stream(s, stats) for s in streams]
    streamio.write_corpus(curated, out / "curated")
    print(f"curated {len(streams)} streams -> {out}/curated "
          f"(stats over {len(stats.channels)} channels)")
    return 0


def cmd_pretrain(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    streams = _load_corpus(args.corpus)
    model_cfg = mdl.preset(args.size, len(streams[0].channels),
                           args.window_min)
    res = pretrain.pretrain(streams, model_cfg, _train_cfg(args), out)
    print(f"pretrained {args.size} ({res.param_count} params) for "
          f"{res.steps_run} steps: val {res.first_val:.4f} -> "
          f"{res.best_val:.4f}")
    return 0


def cmd_sweep(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    corpora = {}
    for spec_item in args.corpus:
        if "=" not in spec_item:
            raise CliError(
                f"--corpus wants label=dir, got '{spec_item}'")
        label, path = spec_item.split("=", 1)
        corpora[label] = _load_corpus(path)
    tags = [t.strip() for t in args.sizes.split(",") if t.strip()]
    if not corpora or not tags:
        raise CliError("sweep needs at least one corpus and one size")
    rows = pretrain.scaling_sweep(corpora, tags, _train_cfg(args), out)
    for r in rows:
        print(f"{r['corpus']} x {r['model']}: best_val {r['best_val']:.4f}")
    return 0


def cmd_geneval(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    run = _load_run(args.run)
    streams = _load_corpus(args.corpus)
    wins = _eval_windows(run, streams, args.seed)
    tasks = geneval.default_tasks(run.config.n_channels,
                                  run.config.window_minutes)
    results = []
    for task in tasks:
        results.extend(geneval.eval_generative(run, wins, task, args.seed,
                                               n_boot=args.n_boot))
    geneval.write_geneval_csv(results, out / "geneval.csv")
    print(f"scored {len(tasks)} tasks x {len(geneval.METHODS)} methods over "
          f"{len(wins)} windows -> {out}/geneval.csv")
    return 0


def cmd_recover(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    rng_range = None
    if args.start_lo is not None or args.start_hi is not None:
        if args.start_lo is None or args.start_hi is None:
            raise CliError("--start-lo and --start-hi must be given together")
        rng_range = (args.start_lo, args.start_hi)
    run = _load_run(args.run)
    streams = _load_corpus(args.corpus)
    recs = recovery.recover_streams(run, streams, args.seed,
                                    oracle=args.oracle,
                                    start_range=rng_range)
    recovery.write_recovery_csv(recs, out / "recovery.csv")
    summary = recovery.summarize_recovery(recs)
    lines = ["metric,days,baseline_mae,recovered_mae,win_frac,win_or_tie_frac"]
    for name in sorted(summary):
        s = summary[name]
        lines.append(f"{name},{s['days']},{float(s['baseline_mae'])!r},"
                     f"{float(s['recovered_mae'])!r},{float(s['win_frac'])!r},"
                     f"{float(s['win_or_tie_frac'])!r}")
    (out / "recovery_summary.csv").write_text("\n".join(lines) + "\n")
    print(f"recovered {len(recs)} days -> {out}/recovery.csv")
    return 0


def cmd_features(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    streams = _load_corpus(args.corpus)
    table = features.extract_features(streams)
    table.save(out / "features.csv")
    print(f"extracted {table.values.shape[0]} day rows x "
          f"{table.values.shape[1]} features -> {out}/features.csv")
    return 0


def _task_list(arg: str) -> list:
    names = [t.strip() for t in arg.split(",") if t.strip()]
    for t in names:
        if t not in probe.TASKS:
            raise CliError(
                f"unknown task '{t}'; choose from {sorted(probe.TASKS)}")
    return names


def _probe_datasets(args):
    run = _load_run(args.run)
    streams = _load_corpus(args.corpus)
    embs = probe.aggregate_embeddings(run, streams)
    if not embs:
        raise CliError("no subject produced any observed tokens")
    tasks = _task_list(args.tasks)
    return [(t, probe.build_task_dataset(embs, streams, t, args.seed))
            for t in tasks], embs


def cmd_probe(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    datasets, _ = _probe_datasets(args)
    results = []
    for name, ds in datasets:
        probe.write_dataset_csv(ds, out / f"probe_{name}_dataset.csv")
        res = probe.train_probe(ds, with_demographics=args.demographics,
                                n_components=args.components)
        results.append(res)
        sm = probe.primary_metric(res)
        print(f"{name} [{res.kind}]: {sm.kind} {sm.mean:.4f} "
              f"(-{sm.err_minus:.4f}/+{sm.err_plus:.4f})")
    probe.write_results_csv(results, out / "probe_results.csv")
    return 0


def cmd_fewshot(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    datasets, _ = _probe_datasets(args)
    pcts = tuple(int(p) for p in args.percentages.split(","))
    for name, ds in datasets:
        rows = probe.few_shot_sweep(ds, with_demographics=args.demographics,
                                    percentages=pcts, seed=args.seed,
                                    n_components=args.components)
        probe.write_fewshot_csv(rows, out / f"fewshot_{name}.csv")
        print(f"{name}: {len(rows)} percentages -> {out}/fewshot_{name}.csv")
    return 0


def cmd_interpret(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    datasets, embs = _probe_datasets(args)
    profiles = []
    for name, ds in datasets:
        res = probe.train_probe(ds, with_demographics=args.demographics,
                                n_components=args.components)
        attr = interpret.oof_attributions(ds, res)
        profiles.append(interpret.attribution_profile(attr))
    interpret.write_attribution_csv(profiles, out / "attributions.csv")
    mats = []
    if len(profiles) >= 2:
        for family in ("l1", "cosine"):
            mats.append(interpret.task_similarity(profiles, family=family))
        interpret.write_similarity_csv(mats, out / "similarity.csv")
    X = np.stack([e.features for e in embs])
    geo = interpret.embedding_geometry(X, seed=args.seed)
    interpret.write_geometry_csvs(geo, out / "geometry_hist.csv",
                                  out / "geometry_scree.csv")
    print(f"attributed {len(profiles)} tasks; geometry over {geo.n_used} "
          f"subjects kept {geo.n_components_99} components -> {out}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    write_resolved_config(args, out)
    copied = {}
    for src in args.inputs:
        src = Path(src)
        if not src.is_dir():
            raise CliError(f"report input {src} is not a directory")
        for f in sorted(src.rglob("*.csv")):
            rel = f.relative_to(src).as_posix().replace("/", "__")
            dest = f"{src.name}__{rel}"
            if dest in copied:
                raise CliError(
                    f"report name collision: {dest} from {f} and "
                    f"{copied[dest]}")
            copied[dest] = f
            shutil.copyfile(f, out / dest)
    lines = []
    for name in sorted(copied):
        digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
        lines.append(f"{digest}  {name}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(f"report: {len(copied)} artifacts, manifest at {out}/manifest.txt")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, out_required=True):
    p.add_argument("--config", default=None,
                   help="key=value file applied as defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=out_required, help="output directory")


def _add_train_flags(p):
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--window-min", type=int, default=240)


def _add_probe_flags(p):
    p.add_argument("--run", required=True, help="pretraining run directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tasks", default=",".join(sorted(probe.TASKS)))
    p.add_argument("--demographics", action="store_true")
    p.add_argument("--components", type=int, default=probe.PCA_COMPONENTS)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sensorlab",
        description="synthetic wearable-sensor pretraining and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--channels", type=int, default=6,
                   help="leading priority channels; 0 = full registry")
    p.add_argument("--noise", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)
    subparsers["synth"] = p

    p = sub.add_parser("curate", help="fit global stats and curate a corpus")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_curate)
    subparsers["curate"] = p

    p = sub.add_parser("pretrain", help="masked-autoencoder pretraining")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", default="desk",
                   choices=sorted(mdl.preset_tags()))
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)
    subparsers["pretrain"] = p

    p = sub.add_parser("sweep", help="capacity x data scaling grid")
    _add_common(p)
    p.add_argument("--corpus", action="append", required=True,
                   metavar="LABEL=DIR")
    p.add_argument("--sizes", default="nano,desk")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    subparsers["sweep"] = p

    p = sub.add_parser("geneval", help="generative evaluation vs baselines")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--n-boot", type=int, default=100)
    p.set_defaults(func=cmd_geneval)
    subparsers["geneval"] = p

    p = sub.add_parser("recover", help="daily-metric recovery")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--start-lo", type=int, default=None)
    p.add_argument("--start-hi", type=int, default=None)
    p.set_defaults(func=cmd_recover)
    subparsers["recover"] = p

    p = sub.add_parser("features", help="engineered daily features")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_features)
    subparsers["features"] = p

    p = sub.add_parser("probe", help="linear probes over embeddings")
    _add_common(p)
    _add_probe_flags(p)
    p.set_defaults(func=cmd_probe)
    subparsers["probe"] = p

    p = sub.add_parser("fewshot", help="label-efficiency sweep")
    _add_common(p)
    _add_probe_flags(p)
    p.add_argument("--percentages",
                   default=",".join(str(x) for x in
                                    probe.FEW_SHOT_PERCENTAGES))
    p.set_defaults(func=cmd_fewshot)
    subparsers["fewshot"] = p

    p = sub.add_parser("interpret", help="attributions, similarity, geometry")
    _add_common(p)
    _add_probe_flags(p)
    p.set_defaults(func=cmd_interpret)
    subparsers["interpret"] = p

    p = sub.add_parser("report", help="merge artifacts with a manifest")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="artifact directories")
    p.set_defaults(func=cmd_report)
    subparsers["report"] = p

    return parser, subparsers


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    parser, subparsers = build_parser()

    try:
        # config file values become defaults, explicit flags still win
        if argv and argv[0] in subparsers and "--config" in argv:
            cfg_path = argv[argv.index("--config") + 1]
            values = read_config_file(cfg_path)
            target = subparsers[argv[0]]
            dests = {a.dest for a in target._actions}
            unknown = set(values) - dests
            if unknown:
                raise CliError(f"config keys not recognized by "
                               f"'{argv[0]}': {sorted(unknown)}")
            target.set_defaults(**values)

        args = parser.parse_args(argv)
        return args.func(args)
    except (CliError, FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
