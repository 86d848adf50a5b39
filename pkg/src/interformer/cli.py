"""Command-line entry point: ``interformer <command> [options]``.

Settings come from three layers, later ones winning: the ``--config`` file,
then ``--seed`` and the switch flags (``--fusion``, ``--l2g``, ``--g2l``,
``--dyrelu``), then each ``--set key=value``. Keys carry a section prefix:
``block.*`` (encoder block), ``task.*`` (synthetic task), ``train.*``.

Exit codes: 0 success, 1 a check failed (or training diverged), 2 bad config.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .checkpoint import BUFFER_PREFIX, load_checkpoint
from .config import build_dataclass, format_lines, parse_override, read_config_file
from .errors import ConfigError, ConfigMismatch, DivergenceDetected
from .model import BlockConfig, block_parameter_breakdown, count_parameters, subsample_parameter_count
from .suites import gradient_suite, identity_suite, oracle_suite, write_reports_csv
from .tasks import SyntheticTask, gen_task
from .training import (
    ABLATION_COLUMNS,
    TABLE3_GRID,
    TABLE4_GRID,
    TrainConfig,
    ablate,
    evaluate,
    train,
    write_rows_csv,
)

SECTIONS = ("block", "task", "train")
SWITCH_KEYS = {"l2g": "block.enable_l2g", "g2l": "block.enable_g2l", "dyrelu": "block.enable_dyrelu"}
DEFAULT_OUT = "interformer-out"


# -- settings ----------------------------------------------------------------


def collect_settings(args) -> dict[str, str]:
    values: dict[str, str] = {}
    if args.config:
        values.update(read_config_file(args.config))
    if args.seed is not None:
        values["train.seed"] = str(args.seed)
        values["task.seed"] = str(args.seed)
    if args.fusion:
        values["block.fusion_mode"] = args.fusion
    for flag, key in SWITCH_KEYS.items():
        if getattr(args, flag):
            values[key] = getattr(args, flag)
    for item in args.set or []:
        key, value = parse_override(item)
        values[key] = value
    for key in values:
        if key.split(".", 1)[0] not in SECTIONS or "." not in key:
            raise ConfigError(f"unknown config key {key!r} (sections: {', '.join(SECTIONS)})", key)
    return values


def build_train_config(values: dict[str, str]) -> TrainConfig:
    block = build_dataclass(BlockConfig, values, "block")
    task = build_dataclass(SyntheticTask, values, "task")
    if "block.feat_dim" not in values:
        block = dataclasses.replace(block, feat_dim=task.F)
    cfg = build_dataclass(TrainConfig, values, "train")
    return dataclasses.replace(cfg, block=block, task=task)


def _out_dir(args) -> Path:
    out = Path(args.out or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


# -- commands ----------------------------------------------------------------


def cmd_check_gradients(args) -> int:
    reports = gradient_suite(_seed(args), include_block=not args.skip_block)
    for r in reports:
        print(r.line())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} gradient checks passed")
    if args.out:
        write_reports_csv(_out_dir(args) / "gradients.csv", reports)
    return 1 if failed else 0


def cmd_verify_oracles(args) -> int:
    reports = oracle_suite(_seed(args), args.instances) + identity_suite(_seed(args))
    for r in reports:
        print(r.line())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} oracle checks passed")
    if args.out:
        write_reports_csv(_out_dir(args) / "oracles.csv", reports)
    return 1 if failed else 0


def cmd_train(args) -> int:
    cfg = build_train_config(collect_settings(args))
    out = _out_dir(args)
    (out / "train.cfg").write_text(_config_text(cfg))
    try:
        report = train(cfg, log=print)
    except DivergenceDetected as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        if exc.report is not None:
            exc.report.write_curve_csv(out / "curve.csv")
        return 1
    report.write_curve_csv(out / "curve.csv")
    write_rows_csv(out / "summary.csv", [report.summary_row()])
    report.model.save(out / "model.ckpt", {"fingerprint": report.fingerprint})
    print(f"final train loss {report.final_train_loss:.6f}  val accuracy {report.final_val_accuracy:.4f}  "
          f"val loss {report.final_val_loss:.6f}  steps {report.steps_run}  params {report.parameter_count}")
    print(f"wrote {out / 'curve.csv'}, {out / 'summary.csv'}, {out / 'model.ckpt'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = build_train_config(collect_settings(args))
    try:
        acc, loss = evaluate(args.checkpoint, gen_task(cfg.task), args.split)
    except ConfigMismatch as exc:
        print(f"config error: {exc} [key: task.F]", file=sys.stderr)
        return 2
    print(f"{args.split} accuracy {acc:.4f}  loss {loss:.6f}")
    if args.out:
        write_rows_csv(_out_dir(args) / "eval.csv", [{"checkpoint": Path(args.checkpoint).name, "split": args.split,
                                                      "accuracy": acc, "loss": loss}])
    return 0


def cmd_ablate(args) -> int:
    base = build_train_config(collect_settings(args))
    out = _out_dir(args)
    seeds = [_seed(args) + i for i in range(args.seeds)]
    grids = {"table3": TABLE3_GRID, "table4": TABLE4_GRID}
    chosen = list(grids) if args.grid == "both" else [args.grid]
    failed = 0
    for name in chosen:
        rows = ablate(grids[name], base, seeds, args.workers)
        write_rows_csv(out / f"{name}.csv", rows, ABLATION_COLUMNS)
        print(f"{name}:")
        for r in rows:
            print(f"  {r['name']:<22s} params/block {r['params_block']:>7d}  "
                  f"acc {r['acc_mean']:.4f} +/- {r['acc_sd']:.4f}  {r['status']}")
        failed += sum(r["status"] != "ok" for r in rows)
    return 1 if failed else 0


def _stats_rows(records: dict[str, np.ndarray]) -> list[dict]:
    rows = []
    for name, arr in records.items():
        if name.startswith(BUFFER_PREFIX):
            continue
        rows.append({"name": name, "shape": "x".join(map(str, arr.shape)) or "scalar", "size": int(arr.size),
                     "mean": float(arr.mean()), "std": float(arr.std()),
                     "min": float(arr.min()), "max": float(arr.max())})
    return rows


def cmd_inspect(args) -> int:
    config, meta, records = load_checkpoint(args.checkpoint)
    print("config:")
    print("".join(f"  {line}\n" for line in format_lines(config.to_dict()).splitlines()), end="")
    for k, v in meta.items():
        print(f"  meta.{k} = {v}")
    print("parameters per block:")
    breakdown = block_parameter_breakdown(config)
    for name, n in breakdown.items():
        print(f"  {name:<20s} {n:>9d}")
    counts = count_parameters(config)
    print(f"  {'block total':<20s} {counts['block']:>9d}")
    print(f"subsampling front-end: {subsample_parameter_count(config)}")
    print(f"encoder ({config.N} blocks + front-end): {counts['encoder']}")
    stats = _stats_rows(records)
    head = sum(r["size"] for r in stats if not r["name"].startswith("encoder."))
    stored = sum(r["size"] for r in stats)
    print(f"classifier head: {head}")
    print(f"total parameters: {counts['encoder'] + head}")
    print("weight statistics:")
    for r in stats:
        print(f"  {r['name']:<40s} {r['shape']:>10s}  mean {r['mean']:+.4e}  std {r['std']:.4e}  "
              f"min {r['min']:+.4e}  max {r['max']:+.4e}")
    if args.out:
        write_rows_csv(_out_dir(args) / "inspect.csv", stats)
    if stored != counts["encoder"] + head:
        print(f"MISMATCH: stored records hold {stored} values, tally gives {counts['encoder'] + head}",
              file=sys.stderr)
        return 1
    return 0


def cmd_export_report(args) -> int:
    """Collect every CSV in --out into one long-format report plus a parameter table."""
    cfg = build_train_config(collect_settings(args))
    out = _out_dir(args)
    param_rows = []
    for grid_name, grid in (("config", [("config", {})]), ("table3", TABLE3_GRID), ("table4", TABLE4_GRID)):
        for cell, delta in grid:
            block = dataclasses.replace(cfg.block, **delta)
            for layer, n in block_parameter_breakdown(block).items():
                param_rows.append({"grid": grid_name, "cell": cell, "layer": layer, "params": n})
            counts = count_parameters(block)
            for key in ("block", "subsample", "encoder"):
                param_rows.append({"grid": grid_name, "cell": cell, "layer": f"total.{key}", "params": counts[key]})
    write_rows_csv(out / "parameters.csv", param_rows)
    long_rows = []
    sources = sorted(p for p in out.glob("*.csv") if p.name not in ("report.csv", "parameters.csv"))
    for path in sources:
        with open(path, newline="") as fh:
            for i, row in enumerate(csv.DictReader(fh)):
                for column, value in row.items():
                    long_rows.append({"source": path.name, "row": i, "column": column, "value": value})
    if long_rows:
        write_rows_csv(out / "report.csv", long_rows)
    print(f"wrote {out / 'parameters.csv'}" + (f" and {out / 'report.csv'} from {len(sources)} CSV files"
                                              if long_rows else " (no other CSV files to collect)"))
    return 0


def _config_text(cfg: TrainConfig) -> str:
    values = {f"block.{k}": v for k, v in dataclasses.asdict(cfg.block).items()}
    values.update({f"task.{k}": v for k, v in dataclasses.asdict(cfg.task).items()})
    values.update({f"train.{f.name}": getattr(cfg, f.name) for f in dataclasses.fields(cfg)
                   if f.name not in ("block", "task")})
    return format_lines(values)


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", help="override one key (repeatable)")
    common.add_argument("--seed", type=int, metavar="N", help="seed for init, data and dropout streams")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default {DEFAULT_OUT} for train/ablate)")
    common.add_argument("--fusion", choices=("add", "concat", "sfm"), help="branch fusion mode")
    common.add_argument("--l2g", choices=("on", "off"), help="local-to-global interaction")
    common.add_argument("--g2l", choices=("on", "off"), help="global-to-local interaction")
    common.add_argument("--dyrelu", choices=("on", "off"), help="dynamic ReLU in the convolution branch")

    parser = argparse.ArgumentParser(prog="interformer", description="Gradient and oracle checks, training, ablation and inspection for the encoder block.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("check-gradients", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--skip-block", action="store_true", help="skip the assembled-block grid")
    p.set_defaults(func=cmd_check_gradients)

    p = sub.add_parser("verify-oracles", parents=[common], help="brute-force equivalence and identity checks")
    p.add_argument("--instances", type=int, default=50, metavar="N", help="random instances per oracle")
    p.set_defaults(func=cmd_verify_oracles)

    p = sub.add_parser("train", parents=[common], help="train a classifier on a synthetic task")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on the configured task")
    p.add_argument("checkpoint", help="checkpoint file written by train")
    p.add_argument("--split", choices=("val", "train"), default="val")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="interaction and fusion ablation tables")
    p.add_argument("--grid", choices=("table3", "table4", "both"), default="both")
    p.add_argument("--seeds", type=int, default=3, metavar="N", help="seeds per cell, counting up from --seed")
    p.add_argument("--workers", type=int, default=1, metavar="N", help="parallel cells")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", parents=[common], help="print a checkpoint's config, counts and weight stats")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("export-report", parents=[common], help="collect CSV outputs into one report")
    p.set_defaults(func=cmd_export_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        key = f" [key: {exc.key}]" if exc.key else ""
        print(f"config error: {exc}{key}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
