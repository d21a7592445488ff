#!/usr/bin/env python3
"""Generate a toy workspace: model file, calibration tensors, labels, strategy.

The model is a small 3-conv classifier whose middle layer carries planted
channel redundancy, so a 2x prune of that layer is nearly lossless. The
resulting directory can be fed straight to the `scprune` CLI:

    python3 scripts/make_toy_dataset.py --out work/
    scprune prune --model work/model.scpm --calib work/calib \
        --strategy work/strategy.json --out work/pruned.scpm \
        --report work/report.json
    scprune eval --model work/pruned.scpm --data work/calib \
        --labels work/labels.json
"""

import argparse
import json
import os

import numpy as np

from scprune import io, zoo


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--per-class", type=int, default=4, help="images per class")
    parser.add_argument("--noise", type=float, default=0.05, help="input noise level")
    parser.add_argument("--ratio", type=float, default=2.0, help="strategy prune ratio")
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)
    calib_dir = os.path.join(args.out, "calib")
    os.makedirs(calib_dir, exist_ok=True)

    model, templates = zoo.planted_classifier(args.seed)
    io.save_model(model, os.path.join(args.out, "model.scpm"))

    inputs, labels = zoo.class_dataset(
        templates, per_class=args.per_class, noise=args.noise, seed=args.seed + 1
    )
    label_map = {}
    for i, (x, y) in enumerate(zip(inputs, labels)):
        name = f"img{i:04d}.sctn"
        io.save_tensor(x, os.path.join(calib_dir, name))
        label_map[name] = y
    with open(os.path.join(args.out, "labels.json"), "w", encoding="utf-8") as fh:
        json.dump(label_map, fh, indent=2, sort_keys=True)

    strategy = {"layers": [{"lower": "conv3", "ratio": args.ratio}]}
    with open(os.path.join(args.out, "strategy.json"), "w", encoding="utf-8") as fh:
        json.dump(strategy, fh, indent=2)

    params = sum(
        int(np.prod(l.weights.shape)) for l in model.layers if hasattr(l, "weights")
    )
    print(f"wrote model ({params} weights), {len(inputs)} tensors, labels, strategy to {args.out}")


if __name__ == "__main__":
    main()
