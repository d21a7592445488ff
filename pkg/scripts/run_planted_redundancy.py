#!/usr/bin/env python3
"""Prune the planted-redundancy classifier and report error and accuracy.

Builds the toy net whose 16 middle feature maps come in 8 near-duplicate
pairs, prunes the middle layer at the requested ratio, and prints the
reconstruction error, whole-model output error, and top-1 accuracy before and
after pruning on a synthetic 4-class dataset.
"""

import argparse

import numpy as np

from scprune import io, nn, pruner, zoo
from scprune.config import RunConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--ratio", type=float, default=2.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--per-class", type=int, default=8)
    parser.add_argument("--noise", type=float, default=0.05)
    parser.add_argument("--calib-size", type=int, default=4)
    args = parser.parse_args()

    model, templates = zoo.planted_classifier(args.seed)
    inputs, labels = zoo.class_dataset(
        templates, per_class=args.per_class, noise=args.noise, seed=args.seed + 1
    )
    rng = np.random.default_rng(args.seed + 2)
    calib = [
        rng.standard_normal(model.input_shape).astype(np.float32)
        for _ in range(args.calib_size)
    ]

    cfg = RunConfig(seed=args.seed)
    strategy = pruner.PruneStrategy(
        (pruner.StrategyEntry("conv3", ratio=args.ratio),)
    )
    pruned, report = pruner.prune_model(model, strategy, calib, cfg)
    record = report.records[0]

    errs = []
    for x in inputs:
        ref, _ = nn.forward(model, x)
        out, _ = nn.forward(pruned, x)
        errs.append(np.linalg.norm(out - ref) / max(np.linalg.norm(ref), 1e-30))

    acc_before = io.evaluate_topk(model, inputs, labels, 1)
    acc_after = io.evaluate_topk(pruned, inputs, labels, 1)

    print(f"channels            {record.channels_before} -> {record.channels_after}")
    print(f"cluster sizes       {record.cluster_sizes}")
    print(f"recon error         {record.recon_error_before:.6f} -> {record.recon_error_after:.6f}")
    print(f"model output error  {float(np.mean(errs)):.6f}")
    print(f"top-1 accuracy      {acc_before:.4f} -> {acc_after:.4f}")
    print(f"params              {report.params_before} -> {report.params_after}")
    print(f"flops               {report.flops_before} -> {report.flops_after}")


if __name__ == "__main__":
    main()
