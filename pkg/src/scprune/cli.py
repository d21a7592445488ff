"""Command-line entry point: prune, eval, inspect, compare.

Exit codes: 0 success, 2 input/format error, 3 numerical failure. Inputs are
validated before any output file is written.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__, baselines, io, nn, pruner
from .config import RunConfig, load_config
from .errors import (
    ConvergenceError,
    DegenerateDataError,
    FormatError,
    InputError,
    ParameterError,
    ShapeError,
    SingularMatrixError,
    StructureError,
)

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_NUMERIC = 3

_FORMAT_ERRORS = (
    FormatError,
    InputError,
    StructureError,
    ParameterError,
    ShapeError,
    OSError,
    KeyError,
    json.JSONDecodeError,
)
_NUMERIC_ERRORS = (
    ConvergenceError,
    SingularMatrixError,
    DegenerateDataError,
    FloatingPointError,
)


def _require_file(path, what):
    if not os.path.isfile(path):
        raise InputError(f"{what} not found: {path}")


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise InputError(f"{what} not found: {path}")


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _load_strategy(path) -> pruner.PruneStrategy:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    entries = []
    for item in raw.get("layers", []):
        if "lower" not in item:
            raise FormatError(f"{path}: strategy entry missing 'lower': {item}")
        entries.append(
            pruner.StrategyEntry(
                lower_layer=item["lower"],
                ratio=item.get("ratio"),
                channels=item.get("channels"),
            )
        )
    blocks = tuple(
        nn.BlockSpec(b["block_id"], tuple(b["conv_layers"]), int(b["prunable_prefix"]))
        for b in raw.get("blocks", [])
    )
    return pruner.PruneStrategy(tuple(entries), blocks)


def _report_document(cfg: RunConfig, payload: dict) -> dict:
    return {"toolkit_version": __version__, "config": cfg.to_dict(), **payload}


def cmd_prune(args) -> int:
    _require_file(args.model, "model file")
    _require_dir(args.calib, "calibration directory")
    _require_file(args.strategy, "strategy file")
    cfg = _config_from_args(args)
    model = nn.fold_batchnorm(io.load_model(args.model))
    _, calib = io.load_calibration(args.calib, seed=cfg.seed)
    strategy = _load_strategy(args.strategy)
    pruned, report = pruner.prune_model(model, strategy, calib, cfg)
    io.save_model(pruned, args.out)
    io.save_report(_report_document(cfg, report.to_dict()), args.report)
    return EXIT_OK


def cmd_eval(args) -> int:
    _require_file(args.model, "model file")
    _require_dir(args.data, "data directory")
    _require_file(args.labels, "labels file")
    model = io.load_model(args.model)
    tensors, labels = io.labelled_dataset(args.data, args.labels)
    acc = io.evaluate_topk(model, tensors, labels, args.topk)
    print(f"{acc:.4f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    _require_file(args.model, "model file")
    model = io.load_model(args.model)
    rows = nn.layer_costs(model)
    header = f"{'layer':<16}{'type':<16}{'out shape':<18}{'params':>14}{'flops':>16}"
    print(header)
    for r in rows:
        shape = "x".join(str(d) for d in r["out_shape"])
        print(f"{r['name']:<16}{r['type']:<16}{shape:<18}{r['params']:>14}{r['flops']:>16}")
    params = sum(r["params"] for r in rows)
    flops = sum(r["flops"] for r in rows)
    print(f"{'TOTAL':<50}{params:>14}{flops:>16}")
    return EXIT_OK


def cmd_compare(args) -> int:
    _require_file(args.model, "model file")
    _require_dir(args.calib, "calibration directory")
    cfg = _config_from_args(args)
    model = nn.fold_batchnorm(io.load_model(args.model))
    _, calib = io.load_calibration(args.calib, seed=cfg.seed)
    ratios = [float(r) for r in args.ratios.split(",") if r]
    selectors = [
        baselines.Selector(name.strip(), seed=cfg.seed)
        for name in args.selectors.split(",")
        if name.strip()
    ]
    lower = args.layer
    upper = pruner.preceding_conv(model, lower)
    if upper is None:
        raise StructureError(f"layer '{lower}' has no preceding conv layer")
    rows = baselines.compare_selectors(
        model, upper, lower, ratios, calib, selectors, cfg, heldout=calib
    )
    io.save_report(
        _report_document(cfg, {"layer": lower, "upper_layer": upper, "rows": rows}),
        args.report,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scprune",
        description="CNN filter pruning by feature-map subspace clustering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="prune a model per a strategy file")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--strategy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="top-k accuracy on a labelled tensor directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--topk", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="per-layer shapes, parameters, and FLOPs")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("compare", help="selector comparison on one layer pair")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--ratios", required=True)
    p.add_argument("--selectors", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _FORMAT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
