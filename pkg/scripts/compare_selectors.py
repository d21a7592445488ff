#!/usr/bin/env python3
"""Head-to-head channel-selector comparison on the planted-redundancy net.

Runs every selector (first-k, random, max-response, k-means, subspace
clustering) at the requested ratios on the redundant middle layer and prints
the reconstruction and whole-model output errors as a table.
"""

import argparse

import numpy as np

from scprune import baselines, zoo
from scprune.config import RunConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--ratios", default="2,4", help="comma-separated ratios")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--calib-size", type=int, default=4)
    args = parser.parse_args()

    model = zoo.planted_redundancy_net(args.seed)
    rng = np.random.default_rng(args.seed + 1)
    calib = [
        rng.standard_normal(model.input_shape).astype(np.float32)
        for _ in range(args.calib_size)
    ]
    ratios = [float(r) for r in args.ratios.split(",") if r]
    cfg = RunConfig(seed=args.seed)
    selectors = [baselines.Selector(k, seed=args.seed) for k in baselines.SELECTOR_NAMES]

    rows = baselines.compare_selectors(
        model, "conv2", "conv3", ratios, calib, selectors, cfg, heldout=calib
    )
    print(f"{'selector':<14}{'ratio':>7}{'channels':>10}{'recon err':>12}{'output err':>12}")
    for row in sorted(rows, key=lambda r: (r["ratio"], r["recon_error_after"])):
        print(
            f"{row['selector']:<14}{row['ratio']:>7.1f}"
            f"{row['channels_after']:>10}"
            f"{row['recon_error_after']:>12.6f}{row['output_error']:>12.6f}"
        )


if __name__ == "__main__":
    main()
