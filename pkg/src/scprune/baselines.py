"""Alternative channel-selection strategies for head-to-head comparison.

Keep-set selectors (first-k, random, max-response) drop channels outright;
clustering selectors (raw k-means, subspace clustering) merge by cluster
averaging. Every selector gets the same least-squares refit afterwards so the
comparison isolates the selection strategy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, pruner, ssc
from .config import RunConfig
from .errors import InputError, ParameterError

SELECTOR_NAMES = ("firstk", "random", "maxresponse", "kmeans", "ssc")


@dataclass(frozen=True)
class Selector:
    kind: str  # one of SELECTOR_NAMES
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SELECTOR_NAMES:
            raise ParameterError(
                f"unknown selector '{self.kind}', expected one of {SELECTOR_NAMES}"
            )

    @property
    def label(self) -> str:
        return self.kind


def select_channels(
    selector: Selector,
    upper_weights: np.ndarray,
    feature_maps,
    c_prime: int,
    cfg: RunConfig = RunConfig(),
):
    """Returns a keep-set (sorted index tuple) or a ClusterAssignment."""
    c = upper_weights.shape[0]
    if c_prime > c:
        raise ParameterError(f"c_prime={c_prime} exceeds channel count {c}")
    if selector.kind == "firstk":
        return tuple(range(c_prime))
    if selector.kind == "random":
        rng = np.random.default_rng(selector.seed)
        return tuple(sorted(rng.choice(c, size=c_prime, replace=False).tolist()))
    if selector.kind == "maxresponse":
        scores = np.abs(upper_weights.astype(np.float64)).sum(axis=(1, 2, 3))
        # descending by score, ties to the lower channel index
        order = np.lexsort((np.arange(c), -scores))
        return tuple(sorted(order[:c_prime].tolist()))
    if selector.kind == "kmeans":
        if not feature_maps:
            raise InputError("kmeans selector needs a calibration set")
        x = ssc.build_data_matrix(feature_maps, cfg.max_rows, cfg.seed)
        labels = ssc.kmeans(x.T, c_prime, selector.seed, restarts=cfg.kmeans_restarts)
        return ssc.ClusterAssignment(ssc._relabel(labels, c_prime), c_prime)
    raise ParameterError("ssc selection is handled by the pruner pipeline")


def prune_with_selector(
    model: nn.ModelGraph,
    upper: str,
    lower: str,
    c_prime: int,
    calib,
    selector: Selector,
    cfg: RunConfig = RunConfig(),
    original: nn.ModelGraph | None = None,
) -> tuple[nn.ModelGraph, pruner.PruneRecord]:
    """Prune one pair with the given selector, then refit the lower layer."""
    original = original if original is not None else model
    if selector.kind == "ssc":
        return pruner.prune_layer_pair(model, upper, lower, c_prime, calib, cfg, original)

    pruner._validate_pair(model, upper, lower)
    upper_layer = model.layer(upper)
    lower_layer = model.layer(lower)
    c = upper_layer.c_out

    if selector.kind == "kmeans":
        maps = pruner._inputs_feeding(model, lower, calib, cfg.threads)
        assignment = select_channels(selector, upper_layer.weights, maps, c_prime, cfg)
        new_upper_w, new_upper_b = pruner.cluster_upper_filters(
            upper_layer.weights, upper_layer.bias, assignment
        )
        init_lower = pruner.cluster_lower_channels(lower_layer.weights, assignment)
        sizes = assignment.sizes()
    else:
        keep = select_channels(selector, upper_layer.weights, None, c_prime, cfg)
        keep = np.asarray(keep, dtype=int)
        new_upper_w = upper_layer.weights[keep]
        new_upper_b = upper_layer.bias[keep]
        init_lower = lower_layer.weights[:, keep]
        sizes = [1] * c_prime

    refit_w, refit_b, err_before, err_after = pruner.reconstruct(
        model,
        pruner.LayerPrunePlan(upper, lower, c_prime),
        (new_upper_w, new_upper_b),
        (init_lower, lower_layer.bias),
        calib,
        cfg.ridge,
        original=original,
        threads=cfg.threads,
    )
    pruned = model.replace_conv(upper, new_upper_w, new_upper_b).replace_conv(
        lower, refit_w, refit_b
    )
    params_before, flops_before = nn.count_costs(model)
    params_after, flops_after = nn.count_costs(pruned)
    record = pruner.PruneRecord(
        upper_layer=upper,
        lower_layer=lower,
        channels_before=c,
        channels_after=c_prime,
        speed_up_ratio=c / c_prime,
        cluster_sizes=sizes,
        recon_error_before=err_before,
        recon_error_after=err_after,
        params_before=params_before,
        params_after=params_after,
        flops_before=flops_before,
        flops_after=flops_after,
    )
    return pruned, record


def compare_selectors(
    model: nn.ModelGraph,
    upper: str,
    lower: str,
    ratios,
    calib,
    selectors,
    cfg: RunConfig = RunConfig(),
    heldout=None,
) -> list[dict]:
    """Selector x ratio grid on a single layer pair.

    Each row records the reconstruction errors and, when `heldout` inputs are
    supplied, the relative error of the full pruned model's outputs against the
    original model.
    """
    for r in ratios:
        if r < 1:
            raise ParameterError(f"ratio must be >= 1, got {r}")
    c = model.layer(upper).c_out
    reference = None
    if heldout:
        reference = [nn.forward(model, x)[0] for x in heldout]
    rows = []
    for selector in selectors:
        for ratio in ratios:
            c_prime = max(1, round(c / ratio))
            pruned, record = prune_with_selector(
                model, upper, lower, c_prime, calib, selector, cfg
            )
            row = {
                "selector": selector.label,
                "seed": selector.seed,
                "ratio": float(ratio),
                "channels_before": c,
                "channels_after": c_prime,
                "recon_error_before": record.recon_error_before,
                "recon_error_after": record.recon_error_after,
            }
            if reference is not None:
                errs = [
                    pruner._relative_error(nn.forward(pruned, x)[0], ref)
                    for x, ref in zip(heldout, reference)
                ]
                row["output_error"] = float(np.mean(errs))
            rows.append(row)
    return rows
