"""Command-line interface: ``trusttransfer <subcommand> ...``.

Settings come from built-in defaults, then an optional JSON config file, then
flags. Floats are printed with 6 significant digits; files keep full precision.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import features as feat
from .data import DatasetError, SyntheticConfig, build_batch, generate_synthetic, load_dataset, save_dataset
from .evaluation import make_folds_e1, make_folds_e2, read_detail, run_experiment, write_summary
from .models import MODEL_NAMES, ModelSpec, participant_trust, unpack
from .training import (
    CheckpointError,
    TrainConfig,
    gradcheck,
    load_checkpoint,
    save_checkpoint,
    train,
)

log = logging.getLogger("trusttransfer")


class CLIError(Exception):
    pass


def _fmt(x):
    return f"{float(x):.6g}"


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CLIError(f"config {path} must hold a JSON object")
    return cfg


def _overlay(cls, base, config: dict, flags: dict):
    names = {f.name for f in fields(cls)}
    known = {f.name for c in (TrainConfig, ModelSpec, SyntheticConfig) for f in fields(c)} | {"models"}
    unknown = set(config) - known
    if unknown:
        raise CLIError(f"unknown config keys {sorted(unknown)}")
    values = {k: v for k, v in config.items() if k in names}
    values.update({k: v for k, v in flags.items() if k in names and v is not None})
    return replace(base, **values)


def _train_config(args, config):
    flags = {
        "learning_rate": getattr(args, "lr", None),
        "max_epochs": getattr(args, "max_epochs", None),
        "patience": getattr(args, "patience", None),
        "validation_fraction": getattr(args, "validation_fraction", None),
        "seed": getattr(args, "seed", None),
    }
    return _overlay(TrainConfig, TrainConfig(), config, flags)


def _model_spec(name, config):
    return _overlay(ModelSpec, ModelSpec(name), config, {})


def _embedding_table(path):
    path = path or feat.default_embedding_path()
    if path is None:
        raise CLIError(f"no embedding file given (use --glove or set {feat.GLOVE_ENV})")
    if not Path(path).exists():
        raise CLIError(f"embedding file {path} does not exist")
    return feat.load_embeddings(path)


def _load_data(args):
    features = feat.load_features(args.features)
    catalog = feat.load_task_catalog(args.catalog) if getattr(args, "catalog", None) else []
    return load_dataset(args.data, features, catalog)


def cmd_embed(args):
    catalog = feat.load_task_catalog(args.catalog)
    out = {}
    if catalog:
        table = _embedding_table(args.glove)
        out = {t.id: feat.embed_task(t, table) for t in catalog}
    feat.save_features(out, args.out)
    print(f"wrote {len(out)} task features to {args.out}")


def cmd_simulate(args):
    cfg = _load_config(args.config)
    flags = {"n_participants": args.participants, "n_tasks": args.tasks, "n_groups": args.groups,
             "noise": args.noise, "seed": args.seed}
    syn = _overlay(SyntheticConfig, SyntheticConfig(), cfg, flags)
    ds = generate_synthetic(syn)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset.csv")
    feat.save_features(ds.features, out / "features.csv")
    feat.write_catalog(ds.catalog, out / "catalog.csv")
    print(f"wrote {len(ds)} participants, {len(ds.features)} tasks to {out}")


def cmd_train(args):
    config = _load_config(args.config)
    cfg = _train_config(args, config)
    spec = _model_spec(args.model, config)
    out = Path(args.out)
    log_path = out.with_suffix(out.suffix + ".log.csv")
    try:
        batch = build_batch(_load_data(args))
        result = train(spec, batch, cfg)
        save_checkpoint(out, spec, result.params, extra={"train_config": cfg.__dict__, "best_epoch": result.best_epoch})
        with log_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for row in result.log:
                w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])])
    except BaseException:
        for p in (out, log_path):
            p.unlink(missing_ok=True)
        raise
    best = result.log[result.best_epoch - 1]
    print(f"{spec.name}: best epoch {result.best_epoch}, val loss {_fmt(best['val_loss'])}; wrote {out}")


def cmd_eval(args):
    config = _load_config(args.config)
    cfg = _train_config(args, config)
    names = args.models.split(",") if args.models else config.get("models", list(MODEL_NAMES))
    specs = [_model_spec(n.strip(), config) for n in names]
    ds = _load_data(args)
    if args.experiment == "e1":
        folds = make_folds_e1(ds, cfg.seed)
    else:
        folds = make_folds_e2(ds)
    report = run_experiment(specs, ds, folds, cfg, jobs=args.jobs)
    metrics_path, detail_path = report.write(args.out)
    for model, entry in report.summary().items():
        print(f"{model:6s} NLL {_fmt(entry['nll'])} ({_fmt(entry['nll_se'])})  MAE {_fmt(entry['mae'])} "
              f"({_fmt(entry['mae_se'])})  MAE_DfB {_fmt(entry['mae_dfb'])}")
    print(f"wrote {metrics_path} and {detail_path}")


def _parse_history(text):
    history = []
    if not text:
        return history
    for item in text.split(";"):
        if not item.strip():
            continue
        desc, sep, outcome = item.rpartition(":")
        if not sep:
            raise CLIError(f"history entry {item!r} must look like 'task:+1' or 'task:-1'")
        try:
            c = float(outcome)
        except ValueError:
            raise CLIError(f"history entry {item!r}: outcome {outcome!r} is not a number") from None
        if not -1 <= c <= 1:
            raise CLIError(f"history entry {item!r}: outcome must lie in [-1, 1]")
        history.append((desc.strip(), c))
    return history


def cmd_predict(args):
    spec, params, _ = load_checkpoint(args.checkpoint)
    model = unpack(spec, {k: np.asarray(v) for k, v in params.items()})
    history = _parse_history(args.history)
    features = feat.load_features(args.features) if args.features else {}
    table = None

    def resolve(text):
        nonlocal table
        if text in features:
            return features[text]
        if spec.name in ("lg", "ct"):
            return np.zeros(1)
        if table is None:
            table = _embedding_table(args.glove)
        return feat.embed_description(text, table)

    query = args.task_id if args.task_id else args.task_description
    x = resolve(query)
    obs_x = np.array([resolve(d) for d, _ in history]).reshape(len(history), -1) if history else np.zeros((0, len(x)))
    obs_c = np.array([c for _, c in history], dtype=np.float64)
    tau = participant_trust(spec, model, obs_x, obs_c, np.asarray(x, dtype=np.float64)[None, :])[-1, 0]
    print(_fmt(tau))


def cmd_gradcheck(args):
    from .data import SyntheticConfig as SC

    ds = generate_synthetic(SC(n_participants=3, dim=args.dim, seed=args.seed))
    batch = build_batch(ds)
    spec = ModelSpec(args.model)
    errors = gradcheck(spec, batch, seed=args.seed)
    ok = True
    for name, err in errors.items():
        status = "PASS" if err < args.tol else "FAIL"
        ok &= status == "PASS"
        print(f"{status} {spec.name} {name} max_rel_err={_fmt(err)}")
    if not ok:
        raise CLIError(f"gradient check failed for {spec.name}")


def cmd_report(args):
    report = read_detail(args.detail)
    write_summary(report.summary(), args.out)
    for model, entry in report.summary().items():
        print(f"{model:6s} NLL {_fmt(entry['nll'])} MAE {_fmt(entry['mae'])} "
              f"NLL_DfB {_fmt(entry['nll_dfb'])} MAE_DfB {_fmt(entry['mae_dfb'])}")
    print(f"wrote {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="trusttransfer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="average word vectors of task descriptions")
    p.add_argument("--catalog", required=True)
    p.add_argument("--glove", help=f"embedding file (default: ${feat.GLOVE_ENV})")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("simulate", help="generate a synthetic study-shaped dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--participants", type=int)
    p.add_argument("--tasks", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_simulate)

    def data_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--features", required=True)
        p.add_argument("--catalog")
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--validation-fraction", type=float)

    p = sub.add_parser("train", help="train one model on a dataset")
    p.add_argument("--model", required=True, choices=MODEL_NAMES)
    p.add_argument("--out", required=True)
    data_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cross-validate models (e1: held-out participants, e2: held-out tasks)")
    p.add_argument("--experiment", required=True, choices=("e1", "e2"))
    p.add_argument("--models", help="comma-separated subset of " + ",".join(MODEL_NAMES))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    data_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="trust in a task after an observation history")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", default="", help="'task:+1;other task:-1' (task ids or descriptions)")
    q = p.add_mutually_exclusive_group(required=True)
    q.add_argument("--task-description")
    q.add_argument("--task-id")
    p.add_argument("--features")
    p.add_argument("--glove")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--model", required=True, choices=MODEL_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--dim", type=int, default=6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="summary table from a per-fold detail file")
    p.add_argument("--detail", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CLIError, feat.FeatureError, DatasetError, CheckpointError, ValueError, FloatingPointError,
            RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
