"""Command-line entry point: ``olmd gen-data | train | eval | gradcheck``.

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numerical
failure (a non-finite loss, or a gradient check above tolerance).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import yaml

from .checkpoint import CheckpointError
from .data import DatasetError, SynthConfig, generate_dataset
from .io import TensorFormatError
from .losses import CTCLengthError
from .model import ConfigError
from .train import NumericalError, evaluate, load_config, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; this CLI reserves 2 for data errors
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_value(text: str):
    return yaml.safe_load(text)


def _pairs(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = _parse_value(value)
    return out


def _common(p: argparse.ArgumentParser, data=True):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help="output directory")
    if data:
        p.add_argument("--data", help="dataset directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="olmd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    _common(g, data=False)
    g.add_argument("--num-train", type=int, default=200)
    g.add_argument("--num-dev", type=int, default=50)
    g.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="generator parameter, e.g. duration_range=[11,13]")

    t = sub.add_parser("train", help="train a model")
    _common(t)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--gamma1", type=float)
    t.add_argument("--gamma2", type=float)
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="config override, e.g. model.lma_context=null")

    e = sub.add_parser("eval", help="decode a split with a checkpoint")
    _common(e)
    e.add_argument("--checkpoint", required=True, help="checkpoint directory")
    e.add_argument("--split", default="dev")

    c = sub.add_parser("gradcheck", help="run the 64-bit finite-difference suite")
    _common(c, data=False)
    c.add_argument("--module", action="append",
                   help="restrict to one check (repeatable); default runs all")
    return parser


def _train_overrides(args) -> dict:
    over = {}
    flags = {"train.epochs": args.epochs, "optim.lr": args.lr, "train.batch_size": args.batch_size,
             "loss.gamma1": args.gamma1, "loss.gamma2": args.gamma2, "train.seed": args.seed,
             "train.data": args.data, "train.out": args.out}
    over.update({k: v for k, v in flags.items() if v is not None})
    over.update(_pairs(args.set))
    return over


def cmd_gen_data(args) -> int:
    params = {}
    if args.config:
        loaded = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        params.update(loaded.get("data", {}) if isinstance(loaded, dict) else {})
    params.update(_pairs(args.set))
    names = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = sorted(set(params) - names)
    if unknown:
        raise ConfigError(f"unknown generator parameter(s): {', '.join(unknown)}")
    try:
        cfg = SynthConfig(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.out is None:
        raise UsageError("gen-data needs --out")
    seed = 0 if args.seed is None else args.seed
    manifest = generate_dataset(seed, {"train": args.num_train, "dev": args.num_dev}, args.out, cfg)
    sizes = {k: len(v) for k, v in manifest["splits"].items()}
    print(f"wrote {sizes} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, _train_overrides(args))
    data, out = cfg.train.data, cfg.train.out
    if data is None or out is None:
        raise UsageError("train needs --data and --out (or train.data / train.out in the config)")
    records = train(cfg, data, out)
    best = min(r["dev_wer"] for r in records)
    print(f"best dev WER {best:.4f}; checkpoints in {Path(out) / 'best'} and {Path(out) / 'last'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.data is None:
        raise UsageError("eval needs --data")
    evaluate(args.checkpoint, args.data, args.split, args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import TOLERANCE, run_suite, select
    try:
        select(args.module)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    results = run_suite(args.module, seed=args.seed or 0)
    width = max(len(r[0]) for r in results)
    print(f"{'check':<{width}}  {'max rel err':>11}  {'coords':>6}  {'on kink':>7}  {'time':>7}")
    ok = True
    for name, rep, secs in results:
        passed = rep.worst < TOLERANCE
        ok &= passed
        print(f"{name:<{width}}  {rep.worst:11.3e}  {rep.checked:6d}  {rep.on_kink:7d}  {secs:6.2f}s  "
              f"{'ok' if passed else 'FAIL'}")
    worst = max(r[1].worst for r in results)
    total = sum(r[2] for r in results)
    print(f"{'all':<{width}}  {worst:11.3e}  {'':6}  {'':7}  {total:6.2f}s  {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; choose from " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DatasetError, TensorFormatError, CheckpointError, CTCLengthError,
            yaml.YAMLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
