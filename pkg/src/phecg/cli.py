"""Command-line entry point: ``phecg stats|cohort|split|train|eval|screen``.

Exit codes: 0 success, 2 input/data error, 3 training divergence,
4 model/record incompatibility.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from collections import Counter
from pathlib import Path

import numpy as np

from . import dnn, features, metrics
from . import preprocess as pp
from . import synth
from . import wfdb_ingest as ingest
from .errors import DivergenceError, PhecgError

EXIT_OK, EXIT_DATA, EXIT_DIVERGED, EXIT_INCOMPATIBLE = 0, 2, 3, 4
METADATA_FILE = "ptbxl_database.csv"


class Incompatible(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing

def _common(p):
    p.add_argument("--dataset-root", help="PTB-XL directory (default: $PTBXL_ROOT)")
    p.add_argument("--output-dir", default="out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampling-rate", type=int, choices=ingest.SAMPLING_RATES, default=100)
    p.add_argument("--threshold", type=float, default=50.0, help="SCP likelihood threshold")
    p.add_argument("--positive-codes", default="RVH,RAO/RAE")
    p.add_argument("--control-policy", choices=ingest.CONTROL_POLICIES, default="norm-matched")
    p.add_argument("--lenient", action="store_true", help="skip metadata rows that fail to parse")
    p.add_argument("--synthetic", action="store_true", help="use generated records instead of PTB-XL")
    p.add_argument("--n", type=int, default=200, help="synthetic record count")
    p.add_argument("--class-margin", type=float, default=2.0)
    p.add_argument("--noise-std", type=float, default=0.01)


def _dataset_opts(p):
    p.add_argument("--fraction", type=float, default=0.75)
    p.add_argument("--three-way", action="store_true", help="hold out a separate validation part")
    p.add_argument("--paper-faithful", action="store_true",
                   help="normalize over all records before splitting; validate on the test part")
    p.add_argument("--include-demographics", action="store_true")


def _train_opts(p):
    defaults = dnn.TrainConfig()
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--lr0", type=float, default=defaults.lr0)
    p.add_argument("--decay-rate", type=float, default=defaults.decay_rate)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--patience", type=int, default=defaults.patience)
    p.add_argument("--min-delta", type=float, default=defaults.min_delta)
    p.add_argument("--hidden-sizes", default=",".join(map(str, defaults.hidden_sizes)))
    p.add_argument("--multilabel", action="store_true", help="separate RVH and RAE outputs")
    p.add_argument("--cache", type=Path, help="train from an ECGP cache written by `split`")
    p.add_argument("--no-plots", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="phecg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="label, age and sex distribution tables")
    _common(p)
    p.add_argument("--cohort-only", action="store_true")

    p = sub.add_parser("cohort", help="select positives and matched controls")
    _common(p)

    p = sub.add_parser("split", help="build normalized examples, split and cache them")
    _common(p)
    _dataset_opts(p)

    p = sub.add_parser("train", help="train the screening network and write its report")
    _common(p)
    _dataset_opts(p)
    _train_opts(p)

    p = sub.add_parser("eval", help="evaluate a model on the test part of a cache")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--cache", type=Path, required=True)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("screen", help="screening probability and rule criteria for one record")
    p.add_argument("record", type=Path, help="WFDB record stem or .hea path")
    p.add_argument("--model", type=Path, required=True)
    return parser


# ---------------------------------------------------------------------------
# data plumbing

def _codes(args):
    return {c.strip() for c in args.positive_codes.split(",") if c.strip()}


def _metadata(args):
    root = ingest.dataset_root_from_env(args.dataset_root)
    if not root:
        raise FileNotFoundError("no dataset root: pass --dataset-root or set PTBXL_ROOT")
    path = Path(root) / METADATA_FILE
    return Path(root), ingest.load_metadata(path.read_bytes(), lenient=args.lenient)


def _source(args):
    """(records, catalog) from PTB-XL or the synthetic generator."""
    if args.synthetic:
        cases = synth.generate_training_set(args.n, args.class_margin, args.seed,
                                            args.sampling_rate, args.noise_std)
        return [c.record for c in cases], synth.synthetic_catalog(cases)
    root, meta = _metadata(args)
    catalog = ingest.select_cohort(meta, _codes(args), args.threshold, args.control_policy, args.seed)
    by_id = catalog.by_id()
    records = []
    for rid in catalog.ids:
        record = ingest.read_record(ingest.record_path(root, by_id[rid], args.sampling_rate))
        record.record_id = rid
        records.append(record)
    return records, catalog


def build_dataset(records, catalog, args):
    val_fraction = 0.1 if args.three_way else 0.0
    dsplit = pp.split([r.record_id for r in records], args.fraction, args.seed, val_fraction)
    by_id = {r.record_id: r for r in records}
    basis = records if args.paper_faithful else [by_id[i] for i in dsplit.train_ids]
    stats = pp.compute_norm_stats(basis)
    examples = pp.make_examples(records, catalog, stats, args.include_demographics)
    return examples, dsplit, stats


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return buf.getvalue()


def _stats_path(cache):
    return Path(str(cache) + ".norm.json")


def _echo(text=""):
    print(text)


# ---------------------------------------------------------------------------
# commands

def _category(meta, threshold):
    rvh = meta.has_code(ingest.RVH_CODE, threshold)
    rae = meta.has_code(ingest.RAE_CODE, threshold)
    if rvh and rae:
        return "RVH+RAO/RAE"
    if rvh:
        return "RVH"
    if rae:
        return "RAO/RAE"
    if ingest.is_norm_only(meta, threshold):
        return "NORM"
    return "other"


def _age_bin(age):
    if age is None:
        return "unknown"
    if age >= 90:
        return "90+"
    lo = int(age // 10) * 10
    return f"{lo}-{lo + 9}"


def distribution_tables(entries, threshold):
    labels = Counter(_category(m, threshold) for m in entries)
    ages = Counter(_age_bin(m.age) for m in entries)
    sexes = Counter(m.sex for m in entries)

    def age_key(b):
        return (b == "unknown", b == "90+", int(b.split("-")[0]) if "-" in b else 0)

    return {
        "label_counts": (["label", "count"], sorted(labels.items())),
        "age_histogram": (["age_bin", "count"], [(b, ages[b]) for b in sorted(ages, key=age_key)]),
        "sex_counts": (["sex", "count"], sorted(sexes.items())),
    }


def cmd_stats(args):
    if args.synthetic:
        _, catalog = _source(args)
        entries = catalog.entries
    else:
        _, entries = _metadata(args)
        if args.cohort_only and entries:
            catalog = ingest.select_cohort(entries, _codes(args), args.threshold,
                                           args.control_policy, args.seed)
            keep = set(catalog.ids)
            entries = [m for m in entries if m.record_id in keep]
    for name, (header, rows) in distribution_tables(entries, args.threshold).items():
        text = _write_csv(args.output_dir / f"{name}.csv", header, rows)
        _echo(f"# {name}")
        sys.stdout.write(text)
    return EXIT_OK


def cmd_cohort(args):
    if args.synthetic:
        _, catalog = _source(args)
    else:
        _, meta = _metadata(args)
        catalog = ingest.select_cohort(meta, _codes(args), args.threshold, args.control_policy, args.seed)
    rows = [(rid, catalog.label(rid), int(rid in catalog.rvh_ids), int(rid in catalog.rae_ids))
            for rid in catalog.ids]
    _write_csv(args.output_dir / "cohort.csv", ["record_id", "label", "rvh", "rae"], rows)
    _echo(f"positives={len(catalog.positive_ids)} controls={len(catalog.control_ids)} "
          f"rvh={len(catalog.rvh_ids)} rae={len(catalog.rae_ids)}")
    return EXIT_OK


def _save_stats(stats, path):
    path.write_text(json.dumps({"mean": stats.mean.tolist(), "std": stats.std.tolist()}))


def _load_stats(path):
    if not path.exists():
        return None
    data = json.loads(path.read_text())
    return pp.NormStats(data["mean"], data["std"])


def cmd_split(args):
    records, catalog = _source(args)
    examples, dsplit, stats = build_dataset(records, catalog, args)
    cache = args.output_dir / "dataset.ecgp"
    pp.cache_write(examples, dsplit, cache)
    _save_stats(stats, _stats_path(cache))
    rows = [(i, "train") for i in dsplit.train_ids] + [(i, "test") for i in dsplit.test_ids]
    rows += [(i, "val") for i in dsplit.val_ids]
    _write_csv(args.output_dir / "split.csv", ["record_id", "part"], rows)
    _echo(f"train={len(dsplit.train_ids)} test={len(dsplit.test_ids)} val={len(dsplit.val_ids)} "
          f"cache={cache}")
    return EXIT_OK


def _scores(model, X):
    p = np.asarray(dnn.forward(model, X)[0])
    return p.max(axis=1)


def _binary_labels(y):
    return (np.asarray(y).max(axis=1) > 0.5).astype(np.int64)


def cmd_train(args):
    if args.cache:
        examples, dsplit = pp.cache_read(args.cache)
        stats = _load_stats(_stats_path(args.cache))
        rate = args.sampling_rate
    else:
        records, catalog = _source(args)
        examples, dsplit, stats = build_dataset(records, catalog, args)
        rate = records[0].sampling_rate
    hidden = tuple(int(h) for h in args.hidden_sizes.split(",") if h.strip())
    config = dnn.TrainConfig(epochs=args.epochs, lr0=args.lr0, decay_rate=args.decay_rate,
                             batch_size=args.batch_size, patience=args.patience, seed=args.seed,
                             min_delta=args.min_delta, hidden_sizes=hidden)
    X_tr, y_tr = pp.stack(examples, dsplit.train_ids, args.multilabel)
    X_val, y_val = pp.stack(examples, dsplit.validation_ids, args.multilabel)
    X_te, y_te = pp.stack(examples, dsplit.test_ids, args.multilabel)

    model, history = dnn.train(X_tr, y_tr, X_val, y_val, config)

    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    bundle = dnn.ModelBundle(model, rate, args.include_demographics,
                             None if stats is None else stats.mean,
                             None if stats is None else stats.std)
    dnn.save_model(bundle, out / "model.ecgm")
    report = metrics.evaluate(_scores(model, X_te), _binary_labels(y_te))
    train_report = metrics.evaluate(_scores(model, X_tr), _binary_labels(y_tr))
    report.extra = {"train_accuracy": train_report.accuracy, "epochs_run": len(history),
                    "best_epoch": history.best_epoch, "stopped_early": history.stopped_early}
    metrics.emit_report(report, history, str(out) + "/", plots=not args.no_plots)

    best = history.rows[history.best_epoch - 1]
    _echo(f"epochs={len(history)} best_epoch={history.best_epoch} "
          f"train_acc={best['train_acc']:.4f} val_acc={best['val_acc']:.4f} "
          f"test_acc={report.accuracy:.4f} test_auc={report.auc if report.auc is None else round(report.auc, 4)}")
    return EXIT_OK


def cmd_eval(args):
    bundle = dnn.load_model(args.model)
    examples, dsplit = pp.cache_read(args.cache)
    multilabel = bundle.model.n_outputs == 2
    X, y = pp.stack(examples, dsplit.test_ids, multilabel)
    if X.shape[1] != bundle.model.n_inputs:
        raise Incompatible(f"cache inputs have width {X.shape[1]}, model expects {bundle.model.n_inputs}")
    report = metrics.evaluate(_scores(bundle.model, X), _binary_labels(y))
    metrics.emit_report(report, None, str(args.output_dir) + "/", plots=not args.no_plots)
    _echo(json.dumps({"accuracy": report.accuracy, "f1": report.f1, "auc": report.auc,
                      "confusion": report.to_dict()["confusion"]}, sort_keys=True))
    return EXIT_OK


def screen(record, bundle: dnn.ModelBundle):
    """Network probability and rule-based criteria for one record, as a dict."""
    model = bundle.model
    if bundle.sampling_rate and record.sampling_rate != bundle.sampling_rate:
        raise Incompatible(f"record sampled at {record.sampling_rate} Hz, model trained at "
                           f"{bundle.sampling_rate} Hz")
    if bundle.norm_mean is None:
        raise Incompatible("model file carries no normalization statistics")
    stats = pp.NormStats(bundle.norm_mean, bundle.norm_std)
    x = pp.make_input(record, stats, None, bundle.include_demographics)
    if x.size != model.n_inputs:
        raise Incompatible(f"record gives {x.size} inputs, model expects {model.n_inputs}")
    probs = np.atleast_1d(dnn.predict(model, x))
    probability = float(probs.max())
    result = {
        "record_id": record.record_id,
        "probability": probability,
        "label": int(dnn.hard_label(probability)),
        "outputs": [float(p) for p in probs],
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            fid, crit = features.screen_record(record)
            result["criteria"] = crit.as_dict()
            result["fiducials"] = {
                "beats": int(len(fid.r_peak_indices)),
                "r_amp_v1_mv": fid.r_amp_v1,
                "s_amp_v1_mv": fid.s_amp_v1,
                "qrs_duration_ms": fid.qrs_duration,
                "frontal_axis_deg": fid.frontal_axis,
                "p_amp_ii_mv": fid.p_amp_ii,
            }
        except PhecgError as exc:
            result["criteria"] = None
            result["criteria_error"] = str(exc)
    return result


def cmd_screen(args):
    record = ingest.read_record(args.record)
    bundle = dnn.load_model(args.model)
    _echo(json.dumps(screen(record, bundle), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "stats": cmd_stats,
    "cohort": cmd_cohort,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "screen": cmd_screen,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Incompatible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (PhecgError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
