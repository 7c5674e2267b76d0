"""Command-line interface: ingest, build, train, evaluate, predict, inspect.

Machine-readable results go to stdout as one JSON line; logs go to stderr.
Exit status: 0 ok, 2 data error, 3 numeric error, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path


from . import __version__
from .dataset import (
    BuildConfig,
    build_dataset,
    length_histogram,
    read_dataset,
    write_dataset,
)
from .errors import DataError, NumericError, OutputUnwritable, ProtclassError, VocabularyMismatch
from .nn import CHECKPOINT_MAGIC, ModelConfig, count_parameters, load_checkpoint, read_checkpoint_header
from .pdbml import TOKEN_SEP, ingest_corpus, open_gzip_text, read_sequences
from .seq_core import Vocabulary
from .train import (
    TrainConfig,
    confusion_by_length,
    default_report_paths,
    evaluate,
    export_history,
    predict,
    train,
)

log = logging.getLogger("protclass")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 3, 64

PATH_KEYS = {
    "input", "output", "out_train", "out_test", "out_vocab", "train", "test", "vocab",
    "checkpoint", "metrics_csv", "plot_svg", "data", "plot", "jobs", "log_level",
}
CONFIG_KEYS = (
    {f.name for f in fields(BuildConfig)}
    | {f.name for f in fields(ModelConfig) if f.name not in ("vocab_size", "input_len")}
    | {f.name for f in fields(TrainConfig) if f.name != "checkpoint_path"}
    | PATH_KEYS
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _resolve(args, names, defaults_from) -> dict:
    """Pick each value from the command line, else the config file, else the dataclass default."""
    out = {}
    defaults = {f.name: f.default for f in fields(defaults_from)}
    for name in names:
        value = getattr(args, name, None)
        if value is None:
            value = args.file_config.get(name)
        if value is None and name == "seed" and os.environ.get("PSC_SEED"):
            try:
                value = int(os.environ["PSC_SEED"])
            except ValueError:
                raise UsageError("PSC_SEED must be an integer") from None
        if value is None:
            value = defaults[name]
        out[name] = value
    return out


def _path(args, name, required=True):
    value = getattr(args, name, None)
    if value is None:
        value = args.file_config.get(name)
    if value is None and required:
        raise UsageError(f"--{name.replace('_', '-')} is required")
    return value


def _output(path):
    """Create the parent directory of an output file; returns the path unchanged."""
    if path is not None:
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputUnwritable(f"cannot create directory for {path}: {exc}") from exc
    return path


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


# -- subcommands ------------------------------------------------------------------


def cmd_ingest(args) -> int:
    report = ingest_corpus(_path(args, "input"), _output(_path(args, "output")), jobs=_path(args, "jobs", required=False))
    _emit(report.as_dict())
    return EXIT_OK


def _iter_lengths(path):
    """Sequence lengths of a table, counted without splitting the token strings."""
    fh, closers = open_gzip_text(path, "r")
    try:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            yield row[1].count(TOKEN_SEP) + 1
    finally:
        for obj in closers:
            obj.close()


def _stats_only(path, max_len) -> dict:
    lengths = []
    retained = 0
    for n in _iter_lengths(path):
        lengths.append(n)
        retained += n <= max_len
    hist = length_histogram(lengths)
    total = hist.total
    return {
        "total_sequences": total,
        "retained": retained,
        "retention": round(retained / total, 4) if total else 0.0,
        "histogram": hist.as_dict(),
    }


def cmd_build(args) -> int:
    cfg = BuildConfig(**_resolve(args, [f.name for f in fields(BuildConfig)], BuildConfig))
    table = _path(args, "input")
    if not Path(table).is_file():
        raise DataError(f"sequence table {table} does not exist")
    if args.stats_only:
        _emit(_stats_only(table, cfg.max_len))
        return EXIT_OK
    out_train, out_test = _output(_path(args, "out_train")), _output(_path(args, "out_test"))
    out_vocab = _output(_path(args, "out_vocab", required=False) or str(Path(out_train).with_name("vocab.tsv")))
    result = build_dataset(read_sequences(table), cfg)
    write_dataset(result.train, out_train)
    write_dataset(result.test, out_test)
    try:
        result.vocab.save(out_vocab)
    except OSError as exc:
        raise OutputUnwritable(f"cannot write {out_vocab}: {exc}") from exc
    stats = result.stats()
    stats["vocab_path"] = out_vocab
    _emit(stats)
    return EXIT_OK


def _model_config(args, vocab_size, input_len) -> ModelConfig:
    names = [f.name for f in fields(ModelConfig) if f.name not in ("vocab_size", "input_len")]
    return ModelConfig(vocab_size=vocab_size, input_len=input_len, **_resolve(args, names, ModelConfig))


def cmd_train(args) -> int:
    train_path, test_path = _path(args, "train"), _path(args, "test")
    vocab_path = _path(args, "vocab", required=False) or str(Path(train_path).with_name("vocab.tsv"))
    checkpoint = _output(_path(args, "checkpoint"))
    vocab = Vocabulary.load(vocab_path) if Path(vocab_path).is_file() else None
    if vocab is None:
        raise DataError(f"vocabulary file {vocab_path} not found")
    train_set = read_dataset(train_path, vocab, "train")
    test_set = read_dataset(test_path, vocab, "test")
    if train_set.max_len != test_set.max_len:
        raise DataError("train and test sets have different sample lengths")
    model_cfg = _model_config(args, len(vocab), train_set.max_len)
    names = [f.name for f in fields(TrainConfig) if f.name != "checkpoint_path"]
    train_cfg = TrainConfig(checkpoint_path=checkpoint, **_resolve(args, names, TrainConfig))
    log.info("model has %d parameters", count_parameters(model_cfg))

    result = train(model_cfg, train_set, test_set, train_cfg)
    csv_default, svg_default = default_report_paths(checkpoint)
    metrics_csv = _output(_path(args, "metrics_csv", required=False) or str(csv_default))
    plot_svg = _output(_path(args, "plot_svg", required=False) or str(svg_default))
    export_history(result.history, metrics_csv, plot_svg)
    last = result.history[-1]
    _emit({
        "epochs": len(result.history),
        "parameters": count_parameters(model_cfg),
        "best_epoch": result.best.epoch,
        "best_val_acc": result.best.val_acc,
        "final": {"train_loss": last.train_loss, "train_acc": last.train_acc,
                  "val_loss": last.val_loss, "val_acc": last.val_acc},
        "checkpoint": checkpoint,
        "metrics_csv": metrics_csv,
        "plot_svg": plot_svg,
    })
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_checkpoint(_path(args, "checkpoint"))
    vocab_path = _path(args, "vocab", required=False)
    if vocab_path and Vocabulary.load(vocab_path) != model.vocab:
        raise VocabularyMismatch("dataset vocabulary differs from the checkpoint's")
    ds = read_dataset(_path(args, "data"), model.vocab)
    threshold = args.threshold if args.threshold is not None else args.file_config.get("threshold", 0.5)
    ev = evaluate(model, ds, threshold)
    out = ev.as_dict()
    out["samples"] = len(ds)
    out["positives"] = ds.positives
    out["negatives"] = ds.negatives
    out["by_length"] = {k: v.as_dict() for k, v in confusion_by_length(ds, ev.probabilities, threshold).items()}
    plot = _output(_path(args, "plot", required=False))
    if plot:
        from .plotting import plot_confusion

        plot_confusion(ev.confusion, plot)
        out["plot"] = plot
    _emit(out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(_path(args, "checkpoint"))
    text = args.sequence if args.sequence is not None else sys.stdin.read()
    text = text.strip()
    if not text:
        raise DataError("empty sequence")
    tokens = [t.strip().upper() for t in text.split(TOKEN_SEP)]
    threshold = args.threshold if args.threshold is not None else 0.5
    p, label = predict(model, tokens, threshold)
    _emit({"probability": p, "label": label, "length": len(tokens)})
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise DataError(f"{path} does not exist")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == CHECKPOINT_MAGIC:
        header, _ = read_checkpoint_header(path)
        header["parameters"] = count_parameters(ModelConfig.from_dict(header["config"]))
        header["kind"] = "checkpoint"
        _emit(header)
    elif head[:2] == b"\x1f\x8b":
        _emit(_inspect_table(path))
    else:
        vocab = Vocabulary.load(path)
        _emit({"kind": "vocabulary", "size": len(vocab), "codes": list(vocab.codes)})
    return EXIT_OK


def _inspect_table(path) -> dict:
    fh, closers = open_gzip_text(path, "r")
    try:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header == ("id", "tokens"):
            n = longest = 0
            for row in reader:
                n += 1
                longest = max(longest, row[1].count(TOKEN_SEP) + 1)
            return {"kind": "sequence_table", "sequences": n, "longest": longest}
        if header == ("id", "label", "indices"):
            n = pos = 0
            width = None
            for row in reader:
                n += 1
                pos += row[1] == "1"
                width = width or len(row[2].split())
            return {"kind": "dataset", "samples": n, "positives": pos, "negatives": n - pos, "max_len": width}
        raise DataError(f"{path}: unrecognised table header {','.join(header)}")
    finally:
        for obj in closers:
            obj.close()


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with flat keys; command-line flags take precedence")
    common.add_argument("--log-level", default=None, help="logging level for stderr (default INFO)")
    common.add_argument("--jobs", type=int, default=None, help="worker cap (default: available CPUs)")

    parser = _Parser(prog="protclass", description="Real-vs-fake protein sequence classification with a 1D CNN.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("ingest", parents=[common], help="extract sequences from a PDBML directory")
    p.add_argument("--input", help="directory searched recursively for *.xml and *.xml.gz")
    p.add_argument("--output", help="gzip CSV sequence table to write")
    p.set_defaults(func=cmd_ingest, parser=p)

    p = sub.add_parser("build", parents=[common], help="build balanced train/test datasets")
    p.add_argument("--input", help="sequence table from `ingest`")
    p.add_argument("--out-train", dest="out_train", help="train split (gzip CSV)")
    p.add_argument("--out-test", dest="out_test", help="test split (gzip CSV)")
    p.add_argument("--out-vocab", dest="out_vocab", help="vocabulary file (default: vocab.tsv beside --out-train)")
    p.add_argument("--max-len", dest="max_len", type=int, help="fixed sample length (default 1500)")
    p.add_argument("--seed", type=int, help="random seed (falls back to $PSC_SEED, then 0)")
    p.add_argument("--train-ratio", dest="train_ratio", type=float, help="train fraction (default 0.8)")
    p.add_argument("--mutation-frac-lo", dest="mutation_frac_lo", type=float, help="min mutated fraction (default 0.05)")
    p.add_argument("--mutation-frac-hi", dest="mutation_frac_hi", type=float, help="max mutated fraction (default 0.07)")
    p.add_argument("--stats-only", action="store_true", help="only print the length histogram and retention")
    p.set_defaults(func=cmd_build, parser=p)

    p = sub.add_parser("train", parents=[common], help="train the network")
    p.add_argument("--train", help="train split from `build`")
    p.add_argument("--test", help="held-out split used for validation")
    p.add_argument("--vocab", help="vocabulary file (default: vocab.tsv beside --train)")
    p.add_argument("--checkpoint", help="best-validation-accuracy checkpoint to write")
    p.add_argument("--metrics-csv", dest="metrics_csv", help="per-epoch metrics CSV (default beside checkpoint)")
    p.add_argument("--plot-svg", dest="plot_svg", help="loss/accuracy figure (default beside checkpoint)")
    p.add_argument("--epochs", type=int, help="default 50")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="default 50")
    p.add_argument("--seed", type=int, help="random seed (falls back to $PSC_SEED, then 0)")
    p.add_argument("--embed-dim", dest="embed_dim", type=int, help="default 32")
    p.add_argument("--conv1-filters", dest="conv1_filters", type=int, help="default 32")
    p.add_argument("--conv2-filters", dest="conv2_filters", type=int, help="default 32")
    p.add_argument("--conv3-filters", dest="conv3_filters", type=int, help="default 32")
    p.add_argument("--pool1-window", dest="pool1_window", type=int, help="default 5")
    p.add_argument("--pool2-window", dest="pool2_window", type=int, help="default 5")
    p.add_argument("--dtype", choices=("float64", "float32"), help="default float64")
    p.add_argument("--rho", type=float, help="Adadelta decay (default 0.95)")
    p.add_argument("--lr", type=float, help="Adadelta learning rate (default 1.0)")
    p.add_argument("--eps", type=float, help="Adadelta epsilon (default 1e-6)")
    p.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")
    p.set_defaults(func=cmd_train, parser=p)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--data", help="dataset file (gzip CSV)")
    p.add_argument("--vocab", help="optional vocabulary to check against the checkpoint")
    p.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")
    p.add_argument("--plot", help="write a confusion-matrix figure (svg/png/pdf)")
    p.set_defaults(func=cmd_evaluate, parser=p)

    p = sub.add_parser("predict", parents=[common], help="classify one sequence")
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")
    p.add_argument("sequence", nargs="?", help="codes joined by '-', e.g. MET-ALA-GLY (default: stdin)")
    p.set_defaults(func=cmd_predict, parser=p)

    p = sub.add_parser("inspect", parents=[common], help="print the header of a table, dataset, vocabulary or checkpoint")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect, parser=p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.file_config = _load_config(args.config)
        level = args.log_level or args.file_config.get("log_level") or "INFO"
        logging.basicConfig(level=level.upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)
        return args.func(args)
    except (UsageError, ValueError) as exc:
        args.parser.print_usage(sys.stderr)
        print(f"protclass {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"protclass {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OutputUnwritable, ProtclassError) as exc:
        print(f"protclass {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
