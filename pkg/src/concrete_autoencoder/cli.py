"""Command-line interface: ``cae {train,select,impute,eval,ablate,groups}``."""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .cae import ABLATION_KINDS, PARAMETRIZATIONS, TrainConfig, impute, schedule_ablation, select_features, train
from .errors import CaeError, TrainingDivergenceError
from .evaluation import METHODS, compare, write_results_csv
from .nn import DecoderSpec
from .selector import AnnealSchedule, feature_groups

log = logging.getLogger("concrete_autoencoder")

DEFAULTS = {
    "k": None,
    "seed": 0,
    "decoder": "auto",
    "mode": "unsup",
    "epochs": 300,
    "max_epochs": None,
    "t0": 10.0,
    "tb": 0.01,
    "stop_threshold": 0.99,
    "lr": 1e-3,
    "batch_size": 256,
    "normalize": "auto",
    "split": "0.72,0.08,0.20",
    "fit_rows": None,
    "labels_col": None,
    "refit_val": False,
    "alpha_param": "direct",
    "methods": "cae,pca,variance-filter,random-selection",
    "top": 3,
}
_TYPES = {"k": int, "seed": int, "epochs": int, "max_epochs": int, "t0": float, "tb": float,
          "stop_threshold": float, "lr": float, "batch_size": int, "fit_rows": int, "top": int}
_METHOD_ALIASES = {"random": "random-selection", "variance": "variance-filter"}


class UsageError(CaeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _help(text, key):
    return f"{text} (default: {DEFAULTS[key]})"


def _add_data_flags(p, labels=True):
    p.add_argument("--data", help="CSV file (header auto-detected)")
    p.add_argument("--idx-images", help="IDX image file, optionally gzipped")
    if labels:
        p.add_argument("--labels-col", help=_help("CSV label column name or index", "labels_col"))
        p.add_argument("--idx-labels", help="IDX label file, optionally gzipped")


def _add_split_flags(p):
    p.add_argument("--split", help=_help("train,val,test fractions", "split"))
    p.add_argument("--fit-rows", type=_positive_int,
                   help=_help("use N shuffled rows for train+val (90/10) and hold out the rest; "
                              "overrides --split", "fit_rows"))
    p.add_argument("--normalize", choices=("auto", "minmax", "zscore", "none"),
                   help=_help("feature scaling fitted on train; auto = none for IDX, "
                              "minmax for CSV", "normalize"))


def _add_train_flags(p):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--k", type=_positive_int, help="number of features to select (required)")
    p.add_argument("--seed", type=int, help=_help("random seed", "seed"))
    p.add_argument("--decoder", help=_help("'linear' or 'hidden:<n>[,<n>]'; auto = linear "
                                           "(unsup) or hidden:3k/2 (sup)", "decoder"))
    p.add_argument("--mode", choices=("unsup", "sup"), help=_help("training objective", "mode"))
    p.add_argument("--epochs", type=_positive_int, help=_help("annealing length B", "epochs"))
    p.add_argument("--max-epochs", type=_positive_int,
                   help=_help("hard epoch cap; unset = 3 * epochs", "max_epochs"))
    p.add_argument("--t0", type=float, help=_help("initial temperature", "t0"))
    p.add_argument("--tb", type=float, help=_help("final temperature", "tb"))
    p.add_argument("--stop-threshold", type=float,
                   help=_help("stop once the mean-max statistic exceeds this", "stop_threshold"))
    p.add_argument("--lr", type=float, help=_help("Adam learning rate", "lr"))
    p.add_argument("--batch-size", type=_positive_int, help=_help("minibatch size", "batch_size"))
    p.add_argument("--alpha-param", choices=PARAMETRIZATIONS,
                   help=_help("optimize selector weights directly or through their log",
                              "alpha_param"))
    p.add_argument("--refit-val", action="store_true", default=None,
                   help="validation loss from a least-squares refit instead of the decoder")


def build_parser():
    parser = _Parser(prog="cae", description="Concrete autoencoder feature selection.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write model.json + reports")
    _add_data_flags(p)
    _add_split_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="reuse a non-empty output directory")

    p = sub.add_parser("select", help="extract the selected features from data")
    p.add_argument("--model", required=True, help="model.json from 'train'")
    _add_data_flags(p, labels=False)
    p.add_argument("--out", required=True, help="output CSV (k columns, model scale)")
    p.add_argument("--force", action="store_true", help="overwrite an existing output file")

    p = sub.add_parser("impute", help="reconstruct all features from the selected ones")
    p.add_argument("--model", required=True, help="model.json from 'train'")
    p.add_argument("--data", required=True, help="CSV with the k selected columns")
    p.add_argument("--denormalize", action="store_true",
                   help="write reconstructions in the original units")
    p.add_argument("--out", required=True, help="output CSV (d columns)")
    p.add_argument("--force", action="store_true", help="overwrite an existing output file")

    p = sub.add_parser("eval", help="compare selection methods on a held-out split")
    _add_data_flags(p)
    _add_split_flags(p)
    _add_train_flags(p)
    p.add_argument("--methods", help=_help(f"comma list from {', '.join(METHODS)}", "methods"))
    p.add_argument("--out", required=True, help="output directory (results.csv)")
    p.add_argument("--force", action="store_true", help="reuse a non-empty output directory")

    p = sub.add_parser("ablate", help="train under the four annealing schedules")
    _add_data_flags(p)
    _add_split_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="output directory (report_<schedule>.csv)")
    p.add_argument("--force", action="store_true", help="reuse a non-empty output directory")

    p = sub.add_parser("groups", help="top-weighted features of every selector node")
    p.add_argument("--model", required=True, help="model.json from 'train'")
    p.add_argument("--top", type=_positive_int, help=_help("features per node", "top"))
    p.add_argument("--out", required=True, help="output directory (groups.csv)")
    p.add_argument("--force", action="store_true", help="reuse a non-empty output directory")
    return parser


def read_config_file(path):
    parser = configparser.ConfigParser()
    parser.optionxform = lambda key: key.strip().replace("-", "_")
    with open(path, encoding="utf-8") as f:
        parser.read_string("[run]\n" + f.read())
    values = {}
    for key, raw in parser["run"].items():
        if key not in DEFAULTS and key not in ("data", "idx_images", "idx_labels"):
            raise UsageError(f"{path}: unknown key {key!r}")
        if key == "refit_val":
            values[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif key in _TYPES:
            try:
                values[key] = _TYPES[key](raw)
            except ValueError:
                raise UsageError(f"{path}: bad value for {key}: {raw!r}") from None
        else:
            values[key] = raw.strip()
    return values


def resolve_options(args):
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        opts.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if value is not None and key != "config":
            opts[key] = value
    return opts


def _prepare_out_dir(path, force):
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())) and not force:
        raise UsageError(f"output directory {out} exists and is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_out_file(path, force):
    if Path(path).exists() and not force:
        raise UsageError(f"{path} exists (use --force to overwrite)")


def load_dataset(opts):
    if opts.get("idx_images"):
        return dataio.load_idx(opts["idx_images"], opts.get("idx_labels")), "idx"
    if opts.get("data"):
        return dataio.load_csv(opts["data"], label_column=opts.get("labels_col")), "csv"
    raise UsageError("give --data or --idx-images")


def prepare_splits(opts):
    """Load, split and normalize; returns ``(train, val, test, record)``."""
    dataset, source = load_dataset(opts)
    if opts.get("fit_rows"):
        parts = dataio.subsample_split(dataset, opts["fit_rows"], 0.1, seed=opts["seed"])
    else:
        try:
            fractions = tuple(float(f) for f in str(opts["split"]).split(","))
        except ValueError:
            raise UsageError(f"bad --split {opts['split']!r}") from None
        parts = dataio.split(dataset, dataio.SplitSpec(fractions, opts["seed"]))
    kind = opts["normalize"]
    if kind == "auto":
        kind = "none" if source == "idx" else "minmax"
    *parts, record = dataio.normalize_fit_apply(*parts, kind=kind)
    return (*parts, record)


def make_config(opts, d):
    k = opts.get("k")
    if k is None:
        raise UsageError("--k is required")
    if not 1 <= k <= d:
        raise UsageError(f"--k must be between 1 and the number of features ({d}), got {k}")
    mode = "supervised" if opts["mode"] in ("sup", "supervised") else "unsupervised"
    hidden = None
    if opts["decoder"] != "auto":
        hidden = DecoderSpec.parse(opts["decoder"], 1).hidden_sizes
    schedule = AnnealSchedule(opts["t0"], opts["tb"], opts["epochs"])
    return TrainConfig(k=k, schedule=schedule, learning_rate=opts["lr"],
                       batch_size=opts["batch_size"], max_epochs=opts["max_epochs"],
                       stop_threshold=opts["stop_threshold"], hidden_sizes=hidden, mode=mode,
                       seed=opts["seed"], refit_val=bool(opts["refit_val"]),
                       parametrization=opts["alpha_param"])


def _train_kwargs(config, train_ds, val_ds):
    kwargs = {"feature_names": train_ds.feature_names}
    if config.mode == "supervised":
        if train_ds.labels is None:
            raise UsageError("supervised mode needs labels (--labels-col or --idx-labels)")
        kwargs.update(y_train=train_ds.labels, y_val=val_ds.labels)
    return kwargs


def write_selected(path, model):
    names = model.feature_names or [f"f{j}" for j in range(model.d)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("node", "feature_index", "feature_name"))
        for node, idx in enumerate(model.selected_indices()):
            w.writerow((node, int(idx), names[idx]))


def cmd_train(args):
    opts = resolve_options(args)
    train_ds, val_ds, _test_ds, record = prepare_splits(opts)
    config = make_config(opts, train_ds.d)
    out = _prepare_out_dir(args.out, args.force)
    model, report = train(train_ds.features, val_ds.features, config,
                          **_train_kwargs(config, train_ds, val_ds))
    model.normalization = record.to_dict()
    dataio.save_model(model, out / "model.json")
    report.to_csv(out / "train_report.csv")
    write_selected(out / "selected_features.csv", model)
    log.info("stopped after %d epochs (%s); selected %s", len(report.records),
             report.stop_reason, report.selected)
    return 0


def _model_normalization(model):
    if model.normalization is None:
        return None
    return dataio.Normalization.from_dict(model.normalization)


def cmd_select(args):
    model = dataio.load_model(args.model)
    _check_out_file(args.out, args.force)
    dataset, _ = load_dataset({"data": args.data, "idx_images": args.idx_images})
    x = dataset.features
    norm = _model_normalization(model)
    if x.shape[1] != model.d:
        raise UsageError(f"model expects {model.d} columns, data has {x.shape[1]}")
    if norm is not None:
        x = norm.apply(x)
    xs, idx = select_features(model, x)
    names = model.feature_names or [f"f{j}" for j in range(model.d)]
    dataio.save_csv(args.out, xs, header=[names[i] for i in idx])
    return 0


def cmd_impute(args):
    model = dataio.load_model(args.model)
    _check_out_file(args.out, args.force)
    xs = dataio.load_csv(args.data).features
    if xs.shape[1] != model.k:
        raise UsageError(f"model expects {model.k} selected columns, data has {xs.shape[1]}")
    x_hat = impute(model, xs)
    norm = _model_normalization(model)
    if args.denormalize and norm is not None:
        x_hat = norm.invert(x_hat)
    names = model.feature_names or [f"f{j}" for j in range(model.d)]
    dataio.save_csv(args.out, x_hat, header=names)
    return 0


def cmd_eval(args):
    opts = resolve_options(args)
    methods = [_METHOD_ALIASES.get(m.strip(), m.strip()) for m in opts["methods"].split(",")]
    train_ds, val_ds, test_ds, _ = prepare_splits(opts)
    config = make_config(opts, train_ds.d)
    out = _prepare_out_dir(args.out, args.force)
    results = compare(methods, train_ds, val_ds, test_ds, config.k, config=config,
                      seed=config.seed)
    write_results_csv(out / "results.csv", results)
    for r in results:
        log.info("%-18s mse=%.6g", r.method, r.reconstruction_mse)
    return 0


def cmd_ablate(args):
    opts = resolve_options(args)
    train_ds, val_ds, _test_ds, _ = prepare_splits(opts)
    config = make_config(opts, train_ds.d)
    out = _prepare_out_dir(args.out, args.force)
    results = schedule_ablation(train_ds.features, val_ds.features, config,
                                **_train_kwargs(config, train_ds, val_ds))
    for name in ABLATION_KINDS:
        results[name][1].to_csv(out / f"report_{name}.csv")
    return 0


def cmd_groups(args):
    opts = resolve_options(args)
    model = dataio.load_model(args.model)
    top = opts["top"]
    if top > model.d:
        raise UsageError(f"--top {top} exceeds the number of features ({model.d})")
    out = _prepare_out_dir(args.out, args.force)
    groups = feature_groups(model.selector, top)
    with open(out / "groups.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("node", "rank", "feature_index", "alpha"))
        for node, row in enumerate(groups):
            for rank, idx in enumerate(row):
                w.writerow((node, rank, int(idx), repr(float(model.selector.alpha[node, idx]))))
    return 0


COMMANDS = {
    "train": cmd_train,
    "select": cmd_select,
    "impute": cmd_impute,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "groups": cmd_groups,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TrainingDivergenceError as exc:
        print(f"cae {args.command}: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cae {args.command}: {exc}", file=sys.stderr)
        return 1
    except (CaeError, OSError) as exc:
        print(f"cae {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
