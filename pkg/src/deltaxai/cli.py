"""Command-line pipeline: gen-data, train, attribute, evaluate, report.

Every subcommand accepts ``--config FILE`` holding a JSON object of option
values (keys use underscores, e.g. ``"n_samples": 50``); explicit flags
override the file.

Exit codes:
  0  success
  1  unexpected failure
  2  invalid command line
  3  missing input file
  4  input file does not match its schema
  5  unknown attribution method
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen
from .baselines import METHODS, UnknownMethodError, make_attributor
from .core import SchemaError, WindowSpec, read_series_jsonl, write_attributions_jsonl, write_series_jsonl
from .metrics import DEFAULT_K, METRIC_NAMES, MetricReport, consecutive_targets, evaluate_suite
from .models import RecurrentClassifier, TrainConfig, WindowMLP, accuracy, load_model, save_model, train_sgd

log = logging.getLogger("deltaxai")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MISSING, EXIT_SCHEMA, EXIT_METHOD = 0, 1, 2, 3, 4, 5


class MissingInput(FileNotFoundError):
    pass


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"no such file: {p}")
    return p


def _out(root, sub) -> Path:
    d = Path(root) / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_splits(data_path: Path):
    split_file = data_path.with_name(data_path.stem + ".splits.json")
    if not split_file.exists():
        return None
    with open(split_file, encoding="utf-8") as fh:
        return json.load(fh)


def _select(series, data_path, split, max_series):
    splits = _load_splits(data_path)
    if split != "all":
        if splits is None:
            raise SchemaError(f"{data_path} has no split file; use --split all")
        if split not in splits:
            raise SchemaError(f"split {split!r} not in {sorted(splits)}")
        series = [series[i] for i in splits[split]]
    if max_series is not None:
        series = series[:max_series]
    if not series:
        raise SchemaError(f"split {split!r} of {data_path} is empty")
    return series


def cmd_gen_data(args) -> int:
    if args.dataset == "switch":
        cfg = datagen.SwitchFeatureConfig(num_series=args.num_series, seq_len=args.seq_len, seed=args.seed)
        series = datagen.gen_switch_feature(cfg)
    else:
        cfg = datagen.DelayedSpikeConfig(num_series=args.num_series, seq_len=args.seq_len, seed=args.seed)
        series = datagen.gen_delayed_spike(cfg)
    out = _out(args.out, "data")
    path = out / f"{args.name or args.dataset}.jsonl"
    write_series_jsonl(path, series)
    path.with_name(path.stem + ".config.json").write_text(datagen.config_sidecar(cfg))
    tr, va, te = datagen.make_splits(series, (0.6, 0.2, 0.2), args.seed)
    path.with_name(path.stem + ".splits.json").write_text(
        json.dumps({"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}))
    print(f"wrote {len(series)} series to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    data_path = _require(args.data)
    series = _select(read_series_jsonl(data_path), data_path, args.split, None)
    X, y = datagen.sliding_windows(series, args.window)
    D = X.shape[2]
    C = max(2, int(y.max()) + 1)
    if args.kind == "rnn":
        model = RecurrentClassifier.init(args.window, D, args.hidden, C, args.seed)
    else:
        model = WindowMLP.init(args.window, D, args.hidden, C, args.seed)
    cfg = TrainConfig(args.lr, args.epochs, args.batch_size, args.seed, args.l2)
    model, trace = train_sgd(model, (X, y), cfg)
    out = _out(args.out, "models")
    path = out / f"{args.name or args.kind}.json"
    save_model(path, model, args.seed)
    path.with_name(path.stem + ".trace.json").write_text(json.dumps({"loss": trace}))
    print(f"trained {args.kind} on {len(y)} windows; loss {trace[0]:.4f} -> {trace[-1]:.4f}; "
          f"train accuracy {accuracy(model, X, y):.3f}; saved {path}")
    return EXIT_OK


def _spec_for(model) -> WindowSpec:
    return WindowSpec(model.window_size, model.num_classes)


def cmd_attribute(args) -> int:
    make_attributor(args.method)  # validate before loading anything
    data_path = _require(args.data)
    model = load_model(_require(args.model))
    series = _select(read_series_jsonl(data_path), data_path, args.split, args.max_series)
    spec = _spec_for(model)
    out = _out(args.out, "attrib")
    for seed in args.seeds:
        attributor = make_attributor(args.method, args.n_samples, args.offset, seed)
        maps = []
        for s in series:
            for tgt in consecutive_targets(model, s, spec, args.offset, args.t_gap):
                m = attributor(model, s, spec, tgt)
                maps.append(type(m)(m.start_time, m.values, m.target, m.method_name,
                                    {**m.params, "series_id": s.series_id}))
        path = out / f"{args.method}-seed{seed}.jsonl"
        write_attributions_jsonl(path, maps)
        print(f"wrote {len(maps)} attribution maps to {path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    make_attributor(args.method)
    data_path = _require(args.data)
    model = load_model(_require(args.model))
    series = _select(read_series_jsonl(data_path), data_path, args.split, args.max_series)
    spec = _spec_for(model)
    ids, vals = [], {m: [] for m in METRIC_NAMES}
    for seed in args.seeds:
        attributor = make_attributor(args.method, args.n_samples, args.offset, seed)
        rep = evaluate_suite(model, series, spec, attributor, args.K, args.t_gap, args.offset,
                             args.substitution, args.method, jobs=args.jobs)
        ids.extend(f"seed{seed}/{sid}" for sid in rep.sample_ids)
        for m in METRIC_NAMES:
            vals[m].append(rep.values[m])
    report = MetricReport(args.method, ids, {m: np.concatenate(v) for m, v in vals.items()}, args.K,
                          args.substitution,
                          meta={"n_samples": args.n_samples, "offset": args.offset, "t_gap": args.t_gap,
                                "seeds": list(args.seeds)})
    out = _out(args.out, "reports")
    (out / f"{args.method}.csv").write_text(report.to_csv())
    (out / f"{args.method}.json").write_text(report.summary_json())
    print(_format_table([(args.method, report.summary())]))
    return EXIT_OK


def _format_table(rows) -> str:
    header = ["method", *METRIC_NAMES]
    lines = [" ".join(f"{h:>14}" for h in header)]
    for method, summary in rows:
        cells = [f"{method:>14}"]
        for m in METRIC_NAMES:
            s = summary[m]
            scale = s.get("scale", 1.0)
            cells.append(f"{s['mean'] * scale:>7.2f}±{s['stderr'] * scale:<6.2f}")
        lines.append(" ".join(cells))
    return "\n".join(lines)


def cmd_report(args) -> int:
    rows = []
    for p in args.reports:
        path = _require(p)
        try:
            doc = json.loads(path.read_text())
            rows.append((doc["method"], doc["metrics"]))
            for m in METRIC_NAMES:
                doc["metrics"][m]["mean"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaError(f"{path}: not a metric summary ({exc})") from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *(f"{m}_{k}" for m in METRIC_NAMES for k in ("mean", "stderr")), "scale_non_corr"])
    for method, summary in rows:
        w.writerow([method, *(repr(summary[m][k]) for m in METRIC_NAMES for k in ("mean", "stderr")),
                    summary["CPD"].get("scale", 1000.0)])
    out = _out(args.out, "reports")
    (out / "comparison.csv").write_text(buf.getvalue())
    print(_format_table(rows))
    return EXIT_OK


def _add_common(p, *fields):
    if "data" in fields:
        p.add_argument("--data", required=True, help="series JSON-Lines file")
    if "model" in fields:
        p.add_argument("--model", required=True, help="model checkpoint JSON")
    if "method" in fields:
        p.add_argument("--method", required=True,
                       help=f"attribution method: {', '.join(METHODS)}")
        p.add_argument("--n-samples", type=int, default=50, dest="n_samples")
        p.add_argument("--offset", type=int, default=1, help="baseline offset d")
        p.add_argument("--t-gap", type=int, default=1, dest="t_gap", help="t2 - t1")
        p.add_argument("--seeds", type=int, nargs="+", default=[0])
        p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
        p.add_argument("--max-series", type=int, default=None, dest="max_series")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deltaxai", description="Explain prediction changes of online time-series classifiers.",
        epilog="exit codes: 0 ok, 1 unexpected error, 2 bad arguments, 3 missing file, "
               "4 schema mismatch, 5 unknown method",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, epilog=parser.epilog)
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--out", default="out", help="output root (default: out)")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic benchmark")
    p.add_argument("--dataset", choices=["switch", "spike"], default="switch")
    p.add_argument("--num-series", type=int, default=100, dest="num_series")
    p.add_argument("--seq-len", type=int, default=100, dest="seq_len")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default=None)

    p = add("train", cmd_train, "train a classifier on sliding windows")
    _add_common(p, "data")
    p.add_argument("--kind", choices=["rnn", "mlp"], default="rnn")
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=128, dest="batch_size")
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=["train", "val", "test", "all"])
    p.add_argument("--name", default=None)

    p = add("attribute", cmd_attribute, "write attribution maps for every consecutive target")
    _add_common(p, "data", "model", "method")

    p = add("evaluate", cmd_evaluate, "score a method with the nine-metric suite")
    _add_common(p, "data", "model", "method")
    p.add_argument("--K", type=int, default=DEFAULT_K)
    p.add_argument("--substitution", default="forward-fill", choices=["forward-fill", "zero", "average"])
    p.add_argument("--jobs", type=int, default=1)

    p = add("report", cmd_report, "join metric summaries into one comparison table")
    p.add_argument("reports", nargs="+", help="summary JSON files written by evaluate")
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    cfg_path = _require(known.config)
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{cfg_path}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise SchemaError(f"{cfg_path}: config must be a JSON object")
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if command is None:
        return parser.parse_args(argv)
    sub = choices[command]
    sub.set_defaults(**cfg)
    # required flags supplied only by the config file
    for action in sub._actions:
        if action.required and action.dest in cfg and action.option_strings:
            action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:
            return EXIT_USAGE if exc.code else EXIT_OK
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except MissingInput as exc:
        print(f"deltaxai: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except UnknownMethodError as exc:
        print(f"deltaxai: {exc}", file=sys.stderr)
        return EXIT_METHOD
    except SchemaError as exc:
        print(f"deltaxai: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except Exception as exc:  # noqa: BLE001
        print(f"deltaxai: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
