"""Command-line interface.

Every command writes ``run.json`` (the resolved configuration, derived seeds
and library versions) into its output directory before doing any work.
Passing that file back with ``--config`` reproduces the run; explicit flags
override values from the config file.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import resolve_threads
from ._rng import derive_seed
from .baselines import AGGREGATIONS, DEFAULT_ENSEMBLE_SIZE, DEFAULT_PASSES, EnsembleUq, McDropoutUq, fit_ensemble
from .data import DataError, load_csv, split, write_csv
from .harness import (
    DEFAULT_DISCARD,
    EvalContext,
    misprediction_report,
    ood_report,
    selective_prediction,
    write_mispredict,
    write_ood,
    write_selective,
)
from .meta import DEFAULT_ANCHORS, MetaModel, SurvUnc, load_meta_model, save_anchors, save_meta_model
from .metrics import BOOTSTRAP_ITERATIONS, bootstrap, ibs_grid
from .models import MODEL_KINDS, load_model, make_model, save_model
from .models.serialization import read_json, write_json
from .synth import HazardMixtureSpec, default_shift, generate, generate_ood

logger = logging.getLogger("survunc")

UQ_KINDS = ("survunc-rf", "survunc-mlp", "ensemble", "mcdropout")
# flags that never influence numeric output and are not echoed into run.json
_RUNTIME_KEYS = ("config", "out", "threads", "command", "verbose")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- parsing

def _fraction(text):
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1)")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return v


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _data_args(p, required=True):
    p.add_argument("--data", required=required, help="CSV file with one row per subject")
    p.add_argument("--duration-col", default="duration")
    p.add_argument("--event-col", default="event")
    p.add_argument("--categorical-cols", default="", help="comma-separated categorical columns")


def _common(p):
    p.add_argument("--config", help="JSON file (e.g. a previous run.json) supplying defaults")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: SURVUNC_THREADS or hardware count)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="survunc", description="Post-hoc uncertainty for survival models.")
    parser.add_argument("--version", action="version", version=f"survunc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw synthetic survival data with ground truth")
    _common(p)
    p.add_argument("--n", type=_positive_int, default=5000)
    p.add_argument("--d", type=_positive_int, default=8)
    p.add_argument("--censoring", type=_fraction, default=0.37)
    p.add_argument("--ood", action="store_true", help="draw covariate-shifted data")
    p.add_argument("--shift", type=float, default=1.0, help="mean shift (std units) on half the features")

    p = sub.add_parser("fit", help="fit a base survival model")
    _common(p)
    _data_args(p)
    p.add_argument("--model", required=True, choices=sorted(MODEL_KINDS))
    p.add_argument("--split-seed", type=int, default=None, help="train/val/test split seed (default: --seed)")
    p.add_argument("--n-estimators", type=_positive_int, default=100)
    p.add_argument("--min-samples-split", type=_positive_int, default=20)
    p.add_argument("--min-samples-leaf", type=_positive_int, default=5)
    p.add_argument("--features-per-split", type=_positive_int, default=None)
    p.add_argument("--hidden", type=_int_list, default=[32])
    p.add_argument("--dropout", type=_fraction, default=0.1)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--batch-size", type=_positive_int, default=256)
    p.add_argument("--patience", type=_positive_int, default=10)
    p.add_argument("--no-standardize", action="store_true")

    p = sub.add_parser("predict", help="predict survival curves")
    _common(p)
    _data_args(p)
    p.add_argument("--model", required=True, help=".survmodel.json file")
    p.add_argument("--grid", type=_float_list, default=None, help="comma-separated times")
    p.add_argument("--grid-points", type=_positive_int, default=32,
                   help="without --grid: this many quantiles of the observed times")

    p = sub.add_parser("uq-fit", help="fit an uncertainty quantifier")
    _common(p)
    _data_args(p)
    p.add_argument("--uq", required=True, choices=UQ_KINDS)
    p.add_argument("--model", required=True, help=".survmodel.json file")
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--meta-train-data", default=None,
                   help="CSV to build meta-labels from instead of the training partition of --data")
    p.add_argument("--anchors", type=_positive_int, default=DEFAULT_ANCHORS)
    p.add_argument("--stratify-anchors", action="store_true")
    p.add_argument("--meta-n-estimators", type=_positive_int, default=100)
    p.add_argument("--meta-min-samples-leaf", type=_positive_int, default=5)
    p.add_argument("--meta-min-samples-split", type=_positive_int, default=10)
    p.add_argument("--meta-lr", type=float, default=0.001)
    p.add_argument("--meta-hidden", type=_int_list, default=[32, 32])
    p.add_argument("--ensemble-size", type=_positive_int, default=DEFAULT_ENSEMBLE_SIZE)
    p.add_argument("--mc-passes", type=_positive_int, default=DEFAULT_PASSES)
    p.add_argument("--aggregate", choices=AGGREGATIONS, default="max_std")

    p = sub.add_parser("uq-score", help="score covariates with a fitted quantifier")
    _common(p)
    _data_args(p)
    p.add_argument("--quantifier", required=True, help="quantifier.json written by uq-fit")

    p = sub.add_parser("eval", help="run an evaluation protocol")
    _common(p)
    p.add_argument("protocol", choices=("selective", "mispredict", "ood"))
    _data_args(p)
    p.add_argument("--model", default=None, help=".survmodel.json (selective, mispredict)")
    p.add_argument("--quantifier", required=True, help="quantifier.json written by uq-fit")
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--ood-data", default=None, help="CSV of out-of-distribution subjects (ood)")
    p.add_argument("--bootstrap", type=int, default=BOOTSTRAP_ITERATIONS)
    p.add_argument("--discard", type=_float_list, default=list(DEFAULT_DISCARD))
    p.add_argument("--ibs-points", type=_positive_int, default=64)
    p.add_argument("--ibs-upper", type=float, default=None, help="IBS upper limit (default: max test time)")

    p = sub.add_parser("metrics", help="C^td and IBS of a model on the test partition")
    _common(p)
    _data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--bootstrap", type=int, default=BOOTSTRAP_ITERATIONS)
    p.add_argument("--ibs-points", type=_positive_int, default=64)
    p.add_argument("--ibs-upper", type=float, default=None)
    return parser, sub.choices


def parse_args(argv):
    parser, subparsers = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in subparsers), None)
    if known.config and command is not None:
        path = Path(known.config)
        if not path.is_file():
            parser.error(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            parser.error(f"config file is not valid JSON: {exc}")
        values = doc.get("args", doc)
        if doc.get("command", command) != command:
            parser.error(f"config was written by '{doc['command']}', not '{command}'")
        sp = subparsers[command]
        actions = {a.dest: a for a in sp._actions}
        unknown = set(values) - set(actions)
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        if command == "eval" and "protocol" in values:
            pos = argv.index(command)
            if not any(a in ("selective", "mispredict", "ood") for a in argv[pos + 1:]):
                argv = argv[:pos + 1] + [values["protocol"]] + argv[pos + 1:]
        values = {k: v for k, v in values.items() if k not in _RUNTIME_KEYS and k != "protocol"}
        for k in values:
            actions[k].required = False
        sp.set_defaults(**values)
    return parser.parse_args(argv)


# --------------------------------------------------------------- helpers

def _config_echo(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _RUNTIME_KEYS}


def _versions():
    import numba
    import scipy

    return {"survunc": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _write_run_json(args, out, seeds, notes=None):
    doc = {"command": args.command, "args": _config_echo(args), "seeds": seeds, "versions": _versions()}
    if notes:
        doc["notes"] = notes
    write_json(doc, out / "run.json")


def _require_file(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _load_data(args, path=None):
    path = _require_file(path or args.data, "data file")
    cats = [c for c in args.categorical_cols.split(",") if c.strip()]
    return load_csv(path, args.duration_col, args.event_col, cats)


def _split_seed(args):
    return args.seed if args.split_seed is None else args.split_seed


def _partitions(args, ds):
    sp = split(ds.n, seed=_split_seed(args))
    return sp, ds.subset(sp.train_indices), ds.subset(sp.val_indices), ds.subset(sp.test_indices)


def _write_csv_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _model_params(args):
    if args.model == "rsf":
        return {"n_estimators": args.n_estimators, "min_samples_split": args.min_samples_split,
                "min_samples_leaf": args.min_samples_leaf, "features_per_split": args.features_per_split,
                "seed": derive_seed(args.seed, "model") & 0x7FFFFFFF, "threads": args.threads}
    if args.model == "deepsurv":
        return {"hidden": tuple(args.hidden), "dropout": args.dropout, "lr": args.lr, "epochs": args.epochs,
                "batch_size": args.batch_size, "patience": args.patience,
                "seed": derive_seed(args.seed, "model") & 0x7FFFFFFF, "standardize": not args.no_standardize}
    return {"standardize": not args.no_standardize}


def _with_threads(model, threads):
    if hasattr(model, "threads"):
        model.threads = threads
    return model


# ----------------------------------------------------------- quantifiers

def _load_quantifier(path, threads):
    path = _require_file(path, "quantifier file")
    doc = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    kind = doc.get("kind")
    if kind in ("survunc-rf", "survunc-mlp"):
        meta = load_meta_model(base / doc["meta_model"])
        meta.threads = threads
        return SurvUnc(meta)
    if kind == "ensemble":
        members = [_with_threads(load_model(base / f), threads) for f in doc["members"]]
        return EnsembleUq(members, aggregate=doc["aggregate"])
    if kind == "mcdropout":
        return McDropoutUq(load_model(base / doc["model"]), doc["passes"], doc["seed"], aggregate=doc["aggregate"])
    raise UsageError(f"{path}: unknown quantifier kind {kind!r}")


# -------------------------------------------------------------- commands

def cmd_simulate(args, out):
    spec = HazardMixtureSpec(d=args.d, censoring=args.censoring, seed=args.seed)
    _write_run_json(args, out, {"spec": args.seed})
    if args.ood:
        ds, oracle = generate_ood(spec, args.n, default_shift(args.d, args.shift))
        name = "ood.csv"
    else:
        ds, oracle = generate(spec, args.n)
        name = "data.csv"
    write_csv(ds, out / name)
    oracle.save(out / "oracle.json")
    logger.info("wrote %d subjects (%.1f%% censored) to %s", ds.n, 100 * (1 - ds.event.mean()), out / name)


def cmd_fit(args, out):
    ds = _load_data(args)
    params = _model_params(args)
    _write_run_json(args, out, {"split": _split_seed(args), "model": params.get("seed")})
    sp, train, val, test = _partitions(args, ds)
    model = make_model(args.model, **params).fit(train, val)
    save_model(model, out / "model.survmodel.json")
    log = {"model": args.model, "split_sizes": list(sp.sizes)}
    if hasattr(model, "convergence_"):
        log["convergence"] = {"iterations": model.convergence_[0], "grad_norm": model.convergence_[1]}
    if hasattr(model, "best_epoch_"):
        log["best_epoch"] = model.best_epoch_
    try:
        ctx = EvalContext.build(model, val)
        log["val_c_td"] = ctx.c_td()
        log["val_ibs_uncensored"] = ctx.ibs()
    except ValueError as exc:
        log["val_metrics_error"] = str(exc)
    write_json(log, out / "fit_log.json")
    write_json(sp.to_dict(), out / "split.json")
    logger.info("fit %s: %s", args.model, {k: v for k, v in log.items() if k.startswith("val")})


def cmd_predict(args, out):
    model_path = _require_file(args.model, "model file")
    ds = _load_data(args)
    _write_run_json(args, out, {})
    model = load_model(model_path)
    grid = np.unique(args.grid) if args.grid else np.unique(np.quantile(ds.time, np.linspace(0, 1, args.grid_points)))
    surv = model.predict_survival(ds.X, grid)
    _write_csv_rows(out / "survival.csv", ["row"] + [repr(float(t)) for t in grid],
                    [[i] + [repr(float(v)) for v in row] for i, row in enumerate(surv)])


def cmd_uq_fit(args, out):
    model_path = _require_file(args.model, "model file")
    ds = _load_data(args)
    seeds = {"split": _split_seed(args), "quantifier": derive_seed(args.seed, "uq")}
    _write_run_json(args, out, seeds)
    threads = args.threads
    model = _with_threads(load_model(model_path), threads)
    _, train, val, _ = _partitions(args, ds)
    manifest = {"kind": args.uq, "base_model": str(model_path)}
    if args.uq.startswith("survunc"):
        meta_train = _load_data(args, args.meta_train_data) if args.meta_train_data else train
        kind = args.uq.split("-")[1]
        params = ({"n_estimators": args.meta_n_estimators, "min_samples_leaf": args.meta_min_samples_leaf,
                   "min_samples_split": args.meta_min_samples_split} if kind == "rf"
                  else {"lr": args.meta_lr, "hidden": tuple(args.meta_hidden)})
        q = SurvUnc.fit(meta_train, model, kind, args.anchors, seeds["quantifier"], args.stratify_anchors,
                        threads, **params)
        save_meta_model(q.meta_model, out / "quantifier.metamodel.json")
        save_anchors(q.anchors, out / "anchors.json")
        manifest.update(meta_model="quantifier.metamodel.json", anchors="anchors.json", meta_info=q.meta_info)
    elif args.uq == "ensemble":
        members = fit_ensemble(model, train, val, args.ensemble_size, seeds["quantifier"], threads)
        names = []
        for i, m in enumerate(members):
            names.append(f"member_{i:02d}.survmodel.json")
            save_model(m, out / names[-1])
        manifest.update(members=names, aggregate=args.aggregate)
    else:
        McDropoutUq(model, args.mc_passes)
        save_model(model, out / "model.survmodel.json")
        manifest.update(model="model.survmodel.json", passes=args.mc_passes, seed=seeds["quantifier"],
                        aggregate=args.aggregate)
    write_json(manifest, out / "quantifier.json")


def cmd_uq_score(args, out):
    qpath = _require_file(args.quantifier, "quantifier file")
    ds = _load_data(args)
    _write_run_json(args, out, {})
    q = _load_quantifier(qpath, args.threads)
    scores = q.score(ds.X)
    _write_csv_rows(out / "scores.csv", ["row", "score"], [[i, repr(float(s))] for i, s in enumerate(scores)])


def cmd_eval(args, out):
    qpath = _require_file(args.quantifier, "quantifier file")
    if args.protocol != "ood":
        _require_file(args.model, "model file (--model)")
    else:
        _require_file(args.ood_data, "OOD data file (--ood-data)")
    ds = _load_data(args)
    notes = {"bootstrap": "discard first, then bootstrap the retained uncensored subjects",
             "censoring_weights": "Kaplan-Meier of censoring fitted on the full test partition"}
    _write_run_json(args, out, {"split": _split_seed(args), "bootstrap": args.seed}, notes)
    _, _, _, test = _partitions(args, ds)
    q = _load_quantifier(qpath, args.threads)
    if args.protocol == "ood":
        ood = _load_data(args, args.ood_data)
        write_ood(ood_report(q, test.X, ood.X), out)
        return
    model = _with_threads(load_model(args.model), args.threads)
    grid = ibs_grid(test.time, test.event, args.ibs_points, args.ibs_upper)
    ctx = EvalContext.build(model, test, eval_times=grid)
    if args.protocol == "selective":
        if any(not 0.0 <= p < 1.0 for p in args.discard):
            raise UsageError("--discard fractions must lie in [0, 1)")
        pts = selective_prediction(model, q, test, args.discard, args.bootstrap, args.seed, ctx, args.threads)
        write_selective(pts, out)
    else:
        write_mispredict(misprediction_report(model, q, test, ctx), out)


def cmd_metrics(args, out):
    _require_file(args.model, "model file")
    ds = _load_data(args)
    _write_run_json(args, out, {"split": _split_seed(args), "bootstrap": args.seed})
    _, _, _, test = _partitions(args, ds)
    model = _with_threads(load_model(args.model), args.threads)
    grid = ibs_grid(test.time, test.event, args.ibs_points, args.ibs_upper)
    from .metrics import c_td, ibs

    surv_grid = np.union1d(test.time, grid)
    surv = model.predict_survival(test.X, surv_grid)
    idx = np.arange(test.n)
    fns = {
        "c_td": lambda i: c_td(surv, surv_grid, test.time, test.event, i).value,
        "ibs": lambda i: ibs(surv, surv_grid, test.time, test.event, grid, None, i).value,
    }
    summary, rows = [], []
    for name, fn in fns.items():
        b = bootstrap(fn, idx, args.bootstrap, derive_seed(args.seed, "metrics"), args.threads)
        summary.append({"name": name, "value": fn(idx), "mean": b.mean, "std": b.std, "n_used": int(test.n),
                        "skipped": b.n_skipped})
        rows.extend([name, r, repr(float(v))] for r, v in enumerate(b.replicates))
    _write_csv_rows(out / "metrics.csv", ["metric", "replicate", "value"], rows)
    write_json({"metrics": summary, "ibs_grid": [float(g) for g in grid]}, out / "metrics.json")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "uq-fit": cmd_uq_fit,
    "uq-score": cmd_uq_score,
    "eval": cmd_eval,
    "metrics": cmd_metrics,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.threads = resolve_threads(args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"survunc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, RuntimeError, OSError) as exc:
        print(f"survunc {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
