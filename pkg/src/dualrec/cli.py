"""Command-line entry point: ``dualrec <command> [options]``.

Exit codes: 0 success, 1 usage, 2 configuration, 3 data or files, 4 numeric.
Errors are reported on stderr as ``dualrec: error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _formatter(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=36)


# ---------------------------------------------------------------------------
# commands

def cmd_prep(args) -> int:
    from .data import ingest, write_sequences, write_split_manifest, write_vocab
    sequences, vocab = ingest(args.input)
    os.makedirs(args.out, exist_ok=True)
    write_sequences(sequences, os.path.join(args.out, "dataset.tsv"))
    write_vocab(vocab, os.path.join(args.out, "vocab.tsv"))
    write_split_manifest(sequences, os.path.join(args.out, "split.txt"))
    print(f"{len(sequences)} users, {len(vocab)} items -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import (SynthSpec, synth_generate, write_sequences, write_split_manifest,
                       write_vocab)
    spec = SynthSpec(topic_prob=args.topic_prob)
    try:
        sequences = synth_generate(args.users, args.vocab, args.seed, spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    write_sequences(sequences, os.path.join(args.out, "dataset.tsv"))
    items = sorted({int(i) for s in sequences for i in s.items})
    write_vocab({i: i for i in items}, os.path.join(args.out, "vocab.tsv"))
    write_split_manifest(sequences, os.path.join(args.out, "split.txt"))
    print(f"{len(sequences)} users, {len(items)} items -> {args.out}")
    return EXIT_OK


def _load_dataset(path: str):
    from .data import ingest
    if os.path.isdir(path):
        path = os.path.join(path, "dataset.tsv")
    sequences, _ = ingest(path, remap=False)
    return sequences


def _parse_override(text: str, kind):
    if kind == "bool":
        if text.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "1")
    try:
        return {"int": int, "float": float, "str": str}[kind](text)
    except ValueError:
        raise ConfigError(f"expected {kind}, got {text!r}") from None


def build_run_config(args):
    """Defaults, then the JSON file, then ``--set`` and explicit flags (flags win)."""
    from .model import ModelConfig
    from .training import RunConfig, TrainConfig
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    kinds = {f.name: str(f.type) for f in fields(ModelConfig) + fields(TrainConfig)}
    kinds.update(data="str", run_dir="str")
    for item in args.set or []:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_override(text, kinds[key])
    for key in ("epochs", "seed", "batch_size", "lr", "patience"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.data is not None:
        values["data"] = args.data
    if args.run_dir is not None:
        values["run_dir"] = args.run_dir
    if args.deterministic:
        values["log_wall_time"] = False
    try:
        return RunConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    from .data import split_leave_one_out, vocab_size
    from .training import train
    run = build_run_config(args)
    if not run.data:
        raise ConfigError("no dataset given (use --data or the 'data' config key)")
    sequences = _load_dataset(run.data)
    needed = vocab_size(sequences)
    if run.model.vocab < needed:
        raise ConfigError(f"config vocab={run.model.vocab} but the data needs {needed} rows")
    os.makedirs(run.run_dir, exist_ok=True)
    with open(os.path.join(run.run_dir, "config.json"), "w") as fh:
        json.dump(run.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    result = train(split_leave_one_out(sequences), run.model, run.train, run_dir=run.run_dir)
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch}; "
          f"last valid hr@10 {last['hr10']:.4f} ndcg@10 {last['ndcg10']:.4f}")
    return EXIT_OK


def _load_masks(args, num_layers: int):
    from .positional import load_mask
    paths = list(args.mask or [])
    if args.mask_dir:
        paths += [os.path.join(args.mask_dir, f"layer_{layer}.mask") for layer in range(num_layers)]
    if not paths:
        return None
    if len(paths) == 1:
        paths = paths * num_layers
    if len(paths) != num_layers:
        raise ConfigError(f"got {len(paths)} masks for a {num_layers}-layer model")
    try:
        return [load_mask(p) for p in paths]
    except ValueError as exc:
        raise DataError(str(exc)) from None


def cmd_eval(args) -> int:
    from .data import query_windows, split_leave_one_out
    from .evaluation import (evaluate_ranks, metrics_by_length_group, write_group_csv,
                             write_metrics_csv)
    from .model import load_checkpoint
    cfg, params, _ = load_checkpoint(args.checkpoint)
    masks = _load_masks(args, cfg.num_layers)
    if masks is not None and any(m.n != cfg.n for m in masks):
        raise ConfigError(f"mask length does not match the checkpoint's n={cfg.n}")
    split = split_leave_one_out(_load_dataset(args.data))
    examples = split.valid if args.split == "valid" else split.test
    if not examples:
        raise DataError("no users with at least three interactions to evaluate")
    ranks = evaluate_ranks(cfg, params, query_windows(examples, cfg.n), masks,
                           exclude_history=args.exclude_history)
    out = args.out or os.path.join(args.checkpoint, f"eval_{args.split}.csv")
    write_metrics_csv(out, ranks, ks=tuple(args.k))
    if args.groups:
        lengths = [len(ex.prefix) for ex in examples]
        write_group_csv(args.groups, metrics_by_length_group(ranks, lengths, k=args.k[0]), k=args.k[0])
    with open(out) as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def _default_mask_dir(checkpoint: str) -> str:
    parent = os.path.dirname(os.path.abspath(checkpoint))
    if os.path.basename(parent) == "checkpoints":
        return os.path.join(os.path.dirname(parent), "masks")
    return os.path.join(checkpoint, "masks")


def cmd_prune(args) -> int:
    from .model import layer_keys, load_checkpoint
    from .positional import flops_count, generate_sparse_mask, materialize, save_mask
    cfg, params, _ = load_checkpoint(args.checkpoint)
    if not 0.0 <= args.tau <= 1.0 or args.stride < 1:
        raise ConfigError("need 0 <= tau <= 1 and stride >= 1")
    out = args.out or _default_mask_dir(args.checkpoint)
    os.makedirs(out, exist_ok=True)
    lines = ["layer,kept_blocks,dense_blocks,reduction_percent,pruned_diagonals"]
    for layer in range(cfg.num_layers):
        W = materialize(params[layer_keys(layer)["pos_w"]], cfg.n)
        mask = generate_sparse_mask(W, args.stride, args.tau)
        save_mask(mask, os.path.join(out, f"layer_{layer}.mask"))
        kept, dense, reduction = flops_count(cfg.n, args.stride, mask)
        diags = " ".join(str(r) for r in mask.pruned_diagonals())
        lines.append(f"{layer},{kept},{dense},{reduction:.4f},{diags}")
    with open(os.path.join(out, "flops.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _bench_dir(args) -> str:
    out = os.path.join(args.run_dir, "bench") if args.run_dir else args.out
    os.makedirs(out, exist_ok=True)
    return out


def cmd_bench(args) -> int:
    from . import bench
    from .model import ModelConfig
    if args.reps < bench.MIN_REPS or args.warmups < bench.MIN_WARMUPS:
        raise ConfigError(f"need --reps >= {bench.MIN_REPS} and --warmups >= {bench.MIN_WARMUPS}")
    out = _bench_dir(args)
    suites = ["temporal", "model", "positional"] if args.suite == "all" else [args.suite]
    for suite in suites:
        if suite == "temporal":
            results = bench.bench_temporal(args.n, args.batch, args.reps, args.warmups, args.seed)
        elif suite == "model":
            configs = [ModelConfig(n=n, vocab=max(200, args.vocab)) for n in args.n]
            results = []
            for b in args.batch:
                results += bench.bench_model_step(configs, b, args.reps, args.warmups, args.seed)
        else:
            results = []
            for b in args.batch:
                results += bench.bench_positional(args.n, args.tau, args.stride, batch=b, reps=args.reps,
                                                  warmups=args.warmups, seed=args.seed)
        path = os.path.join(out, f"{suite}.csv")
        bench.write_csv(results, path)
        for r in results:
            extra = "" if r.flops_reduction_percent is None else f"  flops -{r.flops_reduction_percent:.1f}%"
            print(f"{suite:10s} {r.case:22s} n={r.n:<5d} batch={r.batch:<3d} "
                  f"median {r.median_ms:9.3f} ms  p90 {r.p90_ms:9.3f} ms{extra}")
        print(f"-> {path}")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    from .bench import plotdata
    try:
        written = plotdata(args.csv, args.out)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.csv}: {exc}") from None
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dualrec", description="Dual-channel sequential recommender pipeline.",
                formatter_class=_formatter)
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP threads for this process")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("prep", help="canonicalize a user/item/timestamp TSV", formatter_class=_formatter)
    s.add_argument("input", help="TSV file of user_id, item_id, timestamp_seconds")
    s.add_argument("--out", default="data", help="output directory")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("synth", help="generate the planted-pattern corpus", formatter_class=_formatter)
    s.add_argument("--users", type=int, default=2000, help="number of users")
    s.add_argument("--vocab", type=int, default=200, help="item ids plus the padding id")
    s.add_argument("--seed", type=int, default=0, help="pattern seed")
    s.add_argument("--topic-prob", type=float, default=0.5,
                   help="chance an interaction comes from the current burst topic")
    s.add_argument("--out", default="synth", help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train and checkpoint a model", formatter_class=_formatter)
    s.add_argument("--config", default=None, help="JSON run config (model and training fields)")
    s.add_argument("--data", default=None, help="dataset directory or canonical TSV")
    s.add_argument("--run-dir", default=None, help="run directory (config key run_dir)")
    s.add_argument("--epochs", type=int, default=None, help="override epochs")
    s.add_argument("--seed", type=int, default=None, help="override seed")
    s.add_argument("--batch-size", type=int, default=None, help="override batch_size")
    s.add_argument("--lr", type=float, default=None, help="override lr")
    s.add_argument("--patience", type=int, default=None, help="override early-stopping patience")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", default=None,
                   help="override any config key; repeatable")
    s.add_argument("--deterministic", action="store_true",
                   help="write wall_ms as 0 so metrics.csv is byte-reproducible")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint", formatter_class=_formatter)
    s.add_argument("--checkpoint", required=True, help="checkpoint directory")
    s.add_argument("--data", required=True, help="dataset directory or canonical TSV")
    s.add_argument("--split", choices=["valid", "test"], default="test", help="which held-out targets")
    s.add_argument("--mask", action="append", default=None, metavar="FILE",
                   help="mask file; give once for all layers or once per layer")
    s.add_argument("--mask-dir", default=None, help="directory holding layer_L.mask files")
    s.add_argument("--k", type=int, nargs="+", default=[10, 50], help="cutoffs for HR/NDCG")
    s.add_argument("--exclude-history", action="store_true", help="drop already-seen items from ranking")
    s.add_argument("--out", default=None, help="metrics CSV (default: <checkpoint>/eval_<split>.csv)")
    s.add_argument("--groups", default=None, help="also write per-history-length metrics here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("prune", help="derive diagonal block masks from a checkpoint",
                       formatter_class=_formatter)
    s.add_argument("--checkpoint", required=True, help="checkpoint directory")
    s.add_argument("--stride", type=int, default=8, help="block side s")
    s.add_argument("--tau", type=float, default=0.5, help="fraction of block diagonals to prune")
    s.add_argument("--out", default=None, help="mask directory (default: <run>/masks)")
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("bench", help="latency microbenchmarks", formatter_class=_formatter)
    s.add_argument("--suite", choices=["temporal", "model", "positional", "all"], default="all",
                   help="which benchmark")
    s.add_argument("--n", type=int, nargs="+", default=[128, 256, 512, 1000], help="sequence lengths")
    s.add_argument("--batch", type=int, nargs="+", default=[8], help="batch sizes")
    s.add_argument("--reps", type=int, default=30, help="timed repetitions (>= 30)")
    s.add_argument("--warmups", type=int, default=5, help="discarded warmup calls (>= 5)")
    s.add_argument("--tau", type=float, default=0.6, help="pruning ratio for the positional suite")
    s.add_argument("--stride", type=int, default=8, help="block side for the positional suite")
    s.add_argument("--vocab", type=int, default=200, help="vocabulary for the model suite")
    s.add_argument("--seed", type=int, default=0, help="input seed")
    s.add_argument("--run-dir", default=None, help="write CSVs to <run-dir>/bench")
    s.add_argument("--out", default="bench", help="CSV directory when --run-dir is not given")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("plotdata", help="split a bench CSV into per-series files",
                       formatter_class=_formatter)
    s.add_argument("csv", help="bench CSV")
    s.add_argument("--out", default="plotdata", help="output directory")
    s.set_defaults(func=cmd_plotdata)
    return p


def _report(kind: str, message: str) -> None:
    sys.stderr.write(f"dualrec: error[{kind}]: {message}\n")


def main(argv: list[str] | None = None) -> int:
    from .data import DataFormatError
    from .numeric import NumericError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("dualrec: missing command")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        _report("usage", str(exc))
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    if args.verbose:
        import logging
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except ConfigError as exc:
        _report("config", str(exc))
        return EXIT_CONFIG
    except (DataError, DataFormatError, OSError) as exc:
        _report("data", str(exc))
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        _report("numeric", str(exc))
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining ValueErrors come from malformed input files (checkpoints, masks)
        _report("data", str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
