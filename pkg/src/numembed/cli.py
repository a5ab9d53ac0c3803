"""Command-line entry point.

Subcommands: train, eval, gradcheck, synth, export, ablate. Every
command is driven by a flat config file plus ``--section.key=value``
overrides and is deterministic given config and seed. Exit codes:
0 success, 2 user/config error, 3 runtime divergence.
"""

from __future__ import annotations

import argparse
import collections
import os
import sys

import numpy as np

from . import config as config_mod
from . import data, model as model_mod, nn, report, training

EXIT_OK = 0
EXIT_USER = 2
EXIT_DIVERGED = 3

_USER_ERRORS = (
    config_mod.ConfigError,
    data.DataError,
    model_mod.ModelError,
    model_mod.CheckpointError,
    training.MetricError,
    FileNotFoundError,
    IsADirectoryError,
    ValueError,
)


def _split_dataset(ds, fraction, seed):
    idx = np.random.default_rng(seed).permutation(ds.n)
    n_valid = max(1, int(round(ds.n * fraction)))
    va, tr = idx[:n_valid], idx[n_valid:]
    make = lambda sel: data.Dataset(ds.schema, ds.cat[sel], ds.num[sel],
                                    ds.labels[sel])
    return make(tr), make(va)


def _prepare_data(cfg):
    """Returns (train_ds, valid_ds, stats_by_field, cat_maps); both
    splits are mean-imputed with train-split statistics."""
    cat_maps = None
    if cfg["data.train"]:
        schema = cfg.schema()
        mode = cfg["data.cat_mode"]
        maps_in = None
        if cfg["data.cat_maps"]:
            maps_in = data.load_cat_maps(cfg["data.cat_maps"],
                                         len(data.cat_fields(schema)))
        train_ds, cat_maps = data.load_tabular(
            cfg["data.train"], schema, cfg["data.delimiter"], mode, maps_in)
        if cfg["data.valid"]:
            valid_ds, _ = data.load_tabular(
                cfg["data.valid"], schema, cfg["data.delimiter"], mode,
                cat_maps if mode == "dict" else None)
        else:
            train_ds, valid_ds = _split_dataset(
                train_ds, cfg["data.valid_fraction"], cfg["train.seed"])
    elif cfg["synth.n"] > 0:
        full = data.gen_synthetic(cfg.synth_spec(), cfg["synth.seed"])
        train_ds, valid_ds = _split_dataset(
            full, cfg["data.valid_fraction"], cfg["train.seed"])
    else:
        raise config_mod.ConfigError(
            "no data source: set data.train or synth.n")
    stats = data.compute_all_stats(train_ds)
    return (data.impute_missing(train_ds, stats),
            data.impute_missing(valid_ds, stats), stats, cat_maps)


def cmd_train(args):
    cfg = config_mod.load_config(args.config, args.overrides)
    train_ds, valid_ds, stats, cat_maps = _prepare_data(cfg)
    mc = cfg.model_config()
    tc = cfg.train_config()
    model = model_mod.Model(train_ds.schema, mc, stats,
                            rng=np.random.default_rng(tc.seed),
                            train_dataset=train_ds)
    history, diverged = training.train(model, train_ds, valid_ds, tc)
    outdir = cfg["output.dir"]
    os.makedirs(outdir, exist_ok=True)
    model_mod.save_checkpoint(model, os.path.join(outdir, "checkpoint.txt"))
    training.write_history(history, os.path.join(outdir, "history.txt"))
    if history:
        report.history_figure(history, os.path.join(outdir, "history.png"))
    cfg.snapshot(os.path.join(outdir, "config_resolved.txt"))
    extra = {
        fid: {f"bnd{i}": b for i, b in enumerate(d.boundaries)}
        for fid, d in model.discretizers.items() if d.boundaries
    }
    data.save_stats_file(os.path.join(outdir, "stats.txt"), stats, extra)
    if cat_maps:
        data.save_cat_maps(os.path.join(outdir, "cat_maps.txt"), cat_maps)
    for rec in history:
        print(f"epoch {rec['epoch']} train_loss {rec['train_loss']:.6f} "
              f"valid_auc {rec['valid_auc']:.6f} "
              f"valid_logloss {rec['valid_logloss']:.6f}")
    if diverged:
        print("training diverged; last finite checkpoint written",
              file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(args):
    model = model_mod.load_checkpoint(args.checkpoint)
    cfg = config_mod.load_config(args.config, args.overrides) if args.config \
        else config_mod.RunConfig()
    mode = cfg["data.cat_mode"]
    maps_in = None
    if cfg["data.cat_maps"]:
        maps_in = data.load_cat_maps(cfg["data.cat_maps"],
                                     len(model.cat_fields))
    ds, _ = data.load_tabular(args.data, model.schema,
                              cfg["data.delimiter"], mode, maps_in)
    ds = data.impute_missing(ds, model.stats)
    rep = training.evaluate(model, ds)
    first = next(data.make_batches(ds, min(ds.n, cfg["train.batch_size"])))
    count, ms = training.measure_complexity(model, first)
    print(f"auc {rep.auc!r}")
    print(f"logloss {rep.logloss!r}")
    print(f"param_count {count}")
    print(f"batch_inference_ms {ms!r}")
    return EXIT_OK


def run_gradcheck(cfg, seed, tol=1e-4):
    """Finite-difference check of the full model on a small random
    batch; returns (per-group max errors, all_passed)."""
    v = cfg.values
    if v["train.batch_size"] > 8 or v["model.dim"] > 8 or \
            v["encoder.buckets"] > 8:
        raise config_mod.ConfigError(
            "gradcheck requires desk-scale config (batch<=8, dim<=8, "
            "buckets<=8)")
    schema = cfg.schema()
    rng = np.random.default_rng(seed)
    n_sample = 64
    cat = np.column_stack([
        rng.integers(0, f.vocab_size, size=n_sample)
        for f in data.cat_fields(schema)
    ]) if data.cat_fields(schema) else np.zeros((n_sample, 0), dtype=np.int64)
    num = rng.uniform(0.0, 1.0, size=(n_sample, len(data.num_fields(schema))))
    labels = rng.integers(0, 2, size=n_sample).astype(np.float64)
    sample = data.Dataset(schema, cat, num, labels)
    stats = data.compute_all_stats(sample) if data.num_fields(schema) else {}
    mc = cfg.model_config()
    model = model_mod.Model(schema, mc, stats, rng=rng, train_dataset=sample)
    B = v["train.batch_size"]
    batch = next(data.make_batches(sample, B))
    _, cache = model.forward(batch)
    grads = model.backward(cache, batch.labels)
    reports = nn.finite_diff_check(
        lambda: model.loss_on_batch(batch), model.params, grads, step=1e-4)
    groups = collections.defaultdict(float)
    for rep in reports:
        g = model_mod.param_group(rep.parameter_name)
        groups[g] = max(groups[g], rep.max_rel_error)
    return dict(groups), all(e < tol for e in groups.values())


def cmd_gradcheck(args):
    cfg = config_mod.load_config(args.config, args.overrides)
    groups, ok = run_gradcheck(cfg, args.seed)
    for g in sorted(groups):
        print(f"{g} max_rel_error {groups[g]:.3e}")
    return EXIT_OK if ok else 1


def cmd_synth(args):
    cfg = config_mod.load_config(args.config, args.overrides)
    ds = data.gen_synthetic(cfg.synth_spec(), cfg["synth.seed"])
    data.write_dataset(ds, args.out, cfg["data.delimiter"])
    print(f"wrote {ds.n} instances to {args.out}")
    return EXIT_OK


def cmd_export(args):
    model = model_mod.load_checkpoint(args.checkpoint)
    if args.values:
        grid = np.array([float(t) for t in args.values.split(",")])
    else:
        grid = np.linspace(0.0, 1.0, args.points)
    if args.kind == "embeddings":
        rows = training.export_embeddings(model, args.field, grid, args.out)
        report.embedding_figure(rows, args.out + ".png")
    elif args.kind == "softdist":
        rows = training.export_soft_distribution(model, args.field, grid,
                                                 args.out)
        report.soft_distribution_figure(rows, args.out + ".png")
    else:
        raise config_mod.ConfigError(f"unknown export kind {args.kind!r}")
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = config_mod.load_config(args.config, args.overrides)
    train_ds, valid_ds, _, _ = _prepare_data(cfg)
    nf = [f.field_id for f in data.num_fields(train_ds.schema)]
    if args.order is None:
        order = nf
    elif args.order.startswith("random:"):
        order = list(np.random.default_rng(
            int(args.order.split(":", 1)[1])).permutation(nf))
    else:
        order = [int(t) for t in args.order.split(",")]
    reports = training.ablation_fields(train_ds, valid_ds,
                                       cfg.model_config(),
                                       cfg.train_config(), order)
    outdir = cfg["output.dir"]
    os.makedirs(outdir, exist_ok=True)
    rows = [(k, r.auc, r.logloss) for k, r in enumerate(reports)]
    training.write_table(os.path.join(outdir, "ablation.txt"),
                         ["fields_included", "auc", "logloss"], rows)
    report.ablation_figure(reports, os.path.join(outdir, "ablation.png"))
    for k, r in enumerate(reports):
        print(f"fields {k} auc {r.auc:.6f} logloss {r.logloss:.6f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="numembed",
        description="CTR prediction with learned numerical-feature "
                    "embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of all gradients")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export",
                       help="export embeddings or soft distributions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=["embeddings", "softdist"],
                   required=True)
    p.add_argument("--field", type=int, required=True)
    p.add_argument("--points", type=int, default=250)
    p.add_argument("--values", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("ablate", help="cumulative numerical-field ablation")
    p.add_argument("--config", required=True)
    p.add_argument("--order", default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides = []
    for item in extra:
        if item.startswith("--") and "=" in item:
            overrides.append(item)
        else:
            parser.error(f"unrecognized argument {item!r}")
    args.overrides = overrides
    try:
        return args.func(args)
    except training.TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
