"""Command-line interface: ``croco {gen,train,eval,grid,report}``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 runtime error
(including a grid with failed cells). ``CROCO_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import checkpoint, evalreport, mildata, runconfig
from .crocotrain import TrainConfig, fit, init_model, train_config_fields
from .errors import ConfigError, CrocoError, HiddenLabelError, ParseError, ShapeError

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("croco")

_GEN_FLAGS = [f.name for f in fields(mildata.GenConfig) if f.name != "seed"]
_TRAIN_FLAGS = [f.name for f in fields(TrainConfig) if f.name != "seed"]


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _bool(raw: str) -> bool:
    try:
        return runconfig.parse_bool(raw)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="INI-style config file; flags override its values")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, help="seed for data generation and training")


def _add_gen(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data generation")
    g.add_argument("--pir", type=float, help="positive instance ratio; sets positive_count = round(pir * bag_size)")
    kinds = runconfig.gen_field_types()
    for name in _GEN_FLAGS:
        g.add_argument(_flag(name), dest=f"gen_{name}", type=kinds[name], metavar=kinds[name].__name__.upper())


def _add_train(p: argparse.ArgumentParser, skip=()) -> None:
    g = p.add_argument_group("training")
    kinds = train_config_fields()
    for name in _TRAIN_FLAGS:
        if name in skip:
            continue
        kind = _bool if kinds[name] is bool else kinds[name]
        g.add_argument(_flag(name), dest=f"train_{name}", type=kind, metavar=kinds[name].__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="croco", description="Bag/instance cross-consistency MIL on synthetic data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic MIL dataset")
    _add_common(p)
    _add_gen(p)
    p.add_argument("--name", default="dataset.txt", help="output file name inside --out")

    p = sub.add_parser("train", help="train on a dataset file")
    _add_common(p)
    _add_train(p)
    p.add_argument("data", help="dataset file written by 'gen'")
    p.add_argument("--labeled-ratio", type=float, help="re-partition the training bags with this labeled ratio")
    p.add_argument("--run", default=None, help="run name for output files (default: method_seedN)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("data")

    p = sub.add_parser("grid", help="run a grid of cells and write grid_results.csv")
    _add_common(p)
    _add_gen(p)
    _add_train(p)
    p.add_argument("spec", nargs="?", help="config file with a [grid] section (same as --config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--pirs", help="comma-separated positive instance ratios")
    p.add_argument("--labeled-ratios", help="comma-separated labeled ratios")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--variants", help="comma-separated variant names")

    p = sub.add_parser("report", help="summarise grid_results.csv or curves CSV files")
    p.add_argument("files", nargs="+")
    p.add_argument("--out", metavar="DIR", default=None, help="also write report.txt here")
    return parser


def _run_config(args) -> runconfig.RunConfig:
    sections = runconfig.read_file(args.config) if getattr(args, "config", None) else {}
    gen_flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("gen_")}
    gen_flags["pir"] = getattr(args, "pir", None)
    gen_flags["seed"] = getattr(args, "seed", None)
    train_flags = {k[6:]: v for k, v in vars(args).items() if k.startswith("train_")}
    grid_flags = {k: getattr(args, k, None) for k in runconfig.GRID_KEYS}
    return runconfig.build(sections, gen_flags, train_flags, grid_flags)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_gen(args) -> int:
    rc = _run_config(args)
    ds = mildata.generate(rc.gen)
    path = _out_dir(args) / args.name
    mildata.save(ds, path)
    print(f"wrote {path}")
    for key in sorted(ds.meta):
        print(f"{key}={ds.meta[key]}")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _run_config(args)
    config = rc.train
    ds = mildata.load(args.data)
    if args.labeled_ratio is not None:
        ds = mildata.partition(ds, args.labeled_ratio, config.seed, test_fraction=None)
    out = _out_dir(args)
    run = args.run or f"{config.method}_seed{config.seed}"
    state = init_model(config, ds.d)
    state, history = fit(state, ds, config)
    _write(out / f"curves_{run}.csv", evalreport.emit_curves(history))
    checkpoint.save(out / f"{run}.ckpt", state, config, ds.d)
    bag_auc, ins_auc = _metrics(state, ds)
    print(f"run={run} epochs={config.epochs} bag_auc={evalreport.fmt(bag_auc)} "
          f"instance_auc={evalreport.fmt(ins_auc)}")
    return EXIT_OK


def _metrics(state, ds) -> tuple[float, float]:
    bs, bl, is_, il = evalreport.collect_scores(state, ds.test)
    return evalreport.auc_or_nan(bs, bl), evalreport.auc_or_nan(is_, il)


def cmd_eval(args) -> int:
    state, config, d = checkpoint.load(args.checkpoint)
    ds = mildata.load(args.data)
    if ds.d != d:
        raise ShapeError(f"encoder.W0: checkpoint expects {d} input features, dataset has {ds.d}")
    bag_auc, ins_auc = _metrics(state, ds)
    line = f"bag_auc={evalreport.fmt(bag_auc)} instance_auc={evalreport.fmt(ins_auc)}"
    print(line)
    _write(_out_dir(args) / (Path(args.checkpoint).stem + "_eval.txt"), line + "\n")
    return EXIT_OK


def cmd_grid(args) -> int:
    if args.spec and args.config:
        raise ConfigError("config", "give the grid file either positionally or with --config, not both")
    args.config = args.config or args.spec
    if args.jobs < 1:
        raise ConfigError("jobs", "must be >= 1")
    rc = _run_config(args)
    spec = rc.grid_spec()
    out = _out_dir(args)
    table = evalreport.run_grid(spec, jobs=args.jobs)
    _write(out / "grid_results.csv", evalreport.emit_grid(table))
    _write(out / "grid_cells.csv", evalreport.emit_cells(table))
    cell_dir = out / "cells"
    cell_dir.mkdir(exist_ok=True)
    for res in table.cells:
        _write(cell_dir / f"curves_{res.cell.slug}.csv", evalreport.emit_curves(res.history))
        if res.error:
            _write(cell_dir / f"{res.cell.slug}.error.txt", res.error + "\n")
    failed = [r for r in table.cells if r.error]
    print(f"wrote {out / 'grid_results.csv'} ({len(table.cells)} cells, {len(failed)} failed)")
    for r in failed:
        print(f"failed: {r.cell.slug}: {r.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_report(args) -> int:
    chunks = []
    for path in args.files:
        with open(path, encoding="utf-8") as fh:
            rows = evalreport.parse_csv(fh.read())
        chunks.append(evalreport.summarize(rows, name=Path(path).name))
    text = "\n".join(chunks)
    print(text, end="")
    if args.out:
        _write(_out_dir(args) / "report.txt", text)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "grid": cmd_grid, "report": cmd_report}


def _setup_logging() -> None:
    level = os.environ.get("CROCO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except HiddenLabelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CrocoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(exc, ValueError) else EXIT_RUNTIME
    except (ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
