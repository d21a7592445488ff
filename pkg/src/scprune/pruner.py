"""Filter pruning by cluster averaging and least-squares reconstruction.

For a pair of consecutive conv layers (upper produces the clustered feature
maps, lower consumes them): cluster the maps feeding lower, average the
corresponding upper filters and lower filter channels per cluster, then refit
the lower layer's weights so its outputs reconstruct the original model's
activations on a calibration set. Whole-model pruning iterates the pair step
from shallow to deep.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linalg, nn, ssc
from .config import RunConfig
from .errors import ParameterError, SingularMatrixError, StructureError


@dataclass(frozen=True)
class LayerPrunePlan:
    upper_layer: str
    lower_layer: str
    target_channels: int
    assignment: ssc.ClusterAssignment | None = None  # None for keep-set baselines


@dataclass(frozen=True)
class PruneRecord:
    upper_layer: str
    lower_layer: str
    channels_before: int
    channels_after: int
    speed_up_ratio: float
    cluster_sizes: list[int]
    recon_error_before: float
    recon_error_after: float
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int

    def to_dict(self) -> dict:
        return {
            "upper_layer": self.upper_layer,
            "lower_layer": self.lower_layer,
            "channels_before": self.channels_before,
            "channels_after": self.channels_after,
            "speed_up_ratio": self.speed_up_ratio,
            "cluster_sizes": list(self.cluster_sizes),
            "recon_error_before": self.recon_error_before,
            "recon_error_after": self.recon_error_after,
            "params_before": self.params_before,
            "params_after": self.params_after,
            "flops_before": self.flops_before,
            "flops_after": self.flops_after,
        }


@dataclass(frozen=True)
class PruneReport:
    records: tuple[PruneRecord, ...]
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "totals": {
                "params_before": self.params_before,
                "params_after": self.params_after,
                "flops_before": self.flops_before,
                "flops_after": self.flops_after,
            },
        }


@dataclass(frozen=True)
class StrategyEntry:
    lower_layer: str
    ratio: float | None = None
    channels: int | None = None


@dataclass(frozen=True)
class PruneStrategy:
    entries: tuple[StrategyEntry, ...] = field(default=())
    blocks: tuple[nn.BlockSpec, ...] = field(default=())


def cluster_lower_channels(w: np.ndarray, assignment: ssc.ClusterAssignment) -> np.ndarray:
    """Average input channels of each filter over every cluster."""
    if w.shape[1] != len(assignment.labels):
        raise ParameterError(
            f"assignment labels {len(assignment.labels)} != input channels {w.shape[1]}"
        )
    out = np.empty((w.shape[0], assignment.k, w.shape[2], w.shape[3]), dtype=np.float64)
    for j, idx in enumerate(assignment.members()):
        out[:, j] = w[:, idx].astype(np.float64).mean(axis=1)
    return out.astype(np.float32)


def cluster_upper_filters(
    w: np.ndarray, bias: np.ndarray, assignment: ssc.ClusterAssignment
) -> tuple[np.ndarray, np.ndarray]:
    """Average whole filters (and biases) of the producing layer per cluster."""
    if w.shape[0] != len(assignment.labels):
        raise ParameterError(
            f"assignment labels {len(assignment.labels)} != filter count {w.shape[0]}"
        )
    out_w = np.empty((assignment.k,) + w.shape[1:], dtype=np.float64)
    out_b = np.empty(assignment.k, dtype=np.float64)
    for j, idx in enumerate(assignment.members()):
        out_w[j] = w[idx].astype(np.float64).mean(axis=0)
        out_b[j] = bias[idx].astype(np.float64).mean()
    return out_w.astype(np.float32), out_b.astype(np.float32)


def _forward_many(model, inputs, capture, threads=1):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda x: nn.forward(model, x, capture), inputs))
    return [nn.forward(model, x, capture) for x in inputs]


def _validate_pair(model: nn.ModelGraph, upper: str, lower: str):
    ui = model.layer_index(upper)
    li = model.layer_index(lower)
    if not isinstance(model.layers[ui], nn.ConvLayer) or not isinstance(
        model.layers[li], nn.ConvLayer
    ):
        raise StructureError(f"'{upper}' and '{lower}' must both be conv layers")
    if ui >= li:
        raise StructureError(f"'{upper}' must precede '{lower}'")
    for layer in model.layers[ui + 1 : li]:
        if not isinstance(layer, (nn.ReluLayer, nn.MaxPoolLayer)):
            raise StructureError(
                f"only relu/pool layers may sit between '{upper}' and '{lower}', "
                f"found '{layer.name}'"
            )
    if model.layers[ui].c_out != model.layers[li].c_in:
        raise StructureError(
            f"'{upper}' c_out != '{lower}' c_in "
            f"({model.layers[ui].c_out} vs {model.layers[li].c_in})"
        )
    return ui, li


def _inputs_feeding(model: nn.ModelGraph, lower: str, calib, threads=1):
    """Tensor actually entering the named layer, per calibration image."""
    li = model.layer_index(lower)
    if li == 0:
        return [np.asarray(x, dtype=np.float32) for x in calib]
    sub = model.truncated(li)
    return [out for out, _ in _forward_many(sub, calib, (), threads)]


def _relative_error(pred, target):
    denom = np.linalg.norm(target)
    return float(np.linalg.norm(pred - target) / max(denom, 1e-30))


def reconstruct(
    model: nn.ModelGraph,
    plan: LayerPrunePlan,
    pruned_upper: tuple[np.ndarray, np.ndarray],
    pruned_lower: tuple[np.ndarray, np.ndarray],
    calib,
    ridge: float = 1e-8,
    original: nn.ModelGraph | None = None,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Refit the lower layer against the original model's activations.

    Targets are the lower layer's raw outputs in the ORIGINAL model; inputs are
    the maps produced by the current model with the pruned upper layer
    substituted. Per output channel this is ordinary ridge least squares on
    stacked im2col matrices with a ones-column for the bias. Returns
    (weights, bias, relative error before refit, relative error after refit).
    """
    if not calib:
        raise ParameterError("calibration set must be non-empty")
    original = original if original is not None else model
    lower = model.layer(plan.lower_layer)
    ui = model.layer_index(plan.upper_layer)
    li = model.layer_index(plan.lower_layer)
    if ui >= li:
        raise StructureError("upper layer must precede lower layer")

    targets = [
        cap[plan.lower_layer]
        for _, cap in _forward_many(original, calib, (plan.lower_layer,), threads)
    ]
    sub = model.truncated(li).replace_conv(
        plan.upper_layer, pruned_upper[0], pruned_upper[1]
    )
    pruned_inputs = [out for out, _ in _forward_many(sub, calib, (), threads)]

    c_out, _, k_h, k_w = lower.weights.shape
    a_blocks = []
    b_blocks = []
    for x_in, t in zip(pruned_inputs, targets):
        cols = nn.im2col(x_in, k_h, k_w, lower.stride, lower.padding)
        a_blocks.append(np.hstack([cols, np.ones((cols.shape[0], 1))]))
        b_blocks.append(t.reshape(c_out, -1).T.astype(np.float64))
    a = np.vstack(a_blocks)
    b = np.vstack(b_blocks)

    init_w, init_b = pruned_lower
    p0 = np.vstack(
        [init_w.reshape(c_out, -1).T.astype(np.float64), init_b.astype(np.float64)[None, :]]
    )
    err_before = _relative_error(a @ p0, b)
    try:
        p = linalg.ridge_least_squares(a, b, ridge)
    except SingularMatrixError:
        if ridge == 0:
            p = linalg.ridge_least_squares(a, b, 1e-8)
        else:
            raise
    err_after = _relative_error(a @ p, b)
    if err_after > err_before:
        # ridge regularization can (marginally) lose to the averaged start
        p = p0
        err_after = err_before
    weights = p[:-1, :].T.reshape(c_out, plan.target_channels, k_h, k_w).astype(np.float32)
    bias = p[-1, :].astype(np.float32)
    return weights, bias, err_before, err_after


def prune_layer_pair(
    model: nn.ModelGraph,
    upper: str,
    lower: str,
    c_prime: int,
    calib,
    cfg: RunConfig = RunConfig(),
    original: nn.ModelGraph | None = None,
) -> tuple[nn.ModelGraph, PruneRecord]:
    """Prune one conv pair: cluster, merge, refit; returns the new model."""
    original = original if original is not None else model
    ui, li = _validate_pair(model, upper, lower)
    upper_layer = model.layers[ui]
    lower_layer = model.layers[li]
    c = upper_layer.c_out
    if not 1 <= c_prime <= c:
        raise ParameterError(f"c_prime={c_prime} out of range [1, {c}]")

    source = model if cfg.recluster_from_pruned else original
    maps = _inputs_feeding(source, lower, calib, cfg.threads)
    x = ssc.build_data_matrix(maps, cfg.max_rows, cfg.seed)
    se = ssc.solve_self_expressive(x, cfg.alpha, cfg.ssc_max_iter, cfg.ssc_tol)
    assignment = ssc.spectral_cluster(se, c_prime, cfg.seed, cfg.kmeans_restarts)
    plan = LayerPrunePlan(upper, lower, c_prime, assignment)

    merged_lower = cluster_lower_channels(lower_layer.weights, assignment)
    merged_upper_w, merged_upper_b = cluster_upper_filters(
        upper_layer.weights, upper_layer.bias, assignment
    )
    refit_w, refit_b, err_before, err_after = reconstruct(
        model,
        plan,
        (merged_upper_w, merged_upper_b),
        (merged_lower, lower_layer.bias),
        calib,
        cfg.ridge,
        original=original,
        threads=cfg.threads,
    )
    pruned = model.replace_conv(upper, merged_upper_w, merged_upper_b).replace_conv(
        lower, refit_w, refit_b
    )
    params_before, flops_before = nn.count_costs(model)
    params_after, flops_after = nn.count_costs(pruned)
    record = PruneRecord(
        upper_layer=upper,
        lower_layer=lower,
        channels_before=c,
        channels_after=c_prime,
        speed_up_ratio=c / c_prime,
        cluster_sizes=assignment.sizes(),
        recon_error_before=err_before,
        recon_error_after=err_after,
        params_before=params_before,
        params_after=params_after,
        flops_before=flops_before,
        flops_after=flops_after,
    )
    return pruned, record


def _block_position(blocks, conv_name):
    for blk in blocks:
        if conv_name in blk.conv_layer_names:
            return blk, blk.conv_layer_names.index(conv_name)
    return None, -1


def pair_allowed(model: nn.ModelGraph, upper: str, lower: str) -> bool:
    """Whether pruning the pair preserves every residual block's output width."""
    blk_u, pos_u = _block_position(model.blocks, upper)
    blk_l, _ = _block_position(model.blocks, lower)
    if blk_u is None and blk_l is None:
        return True
    return blk_u is not None and blk_u is blk_l and pos_u < blk_u.prunable_prefix


def preceding_conv(model: nn.ModelGraph, lower: str) -> str | None:
    li = model.layer_index(lower)
    for layer in reversed(model.layers[:li]):
        if isinstance(layer, nn.ConvLayer):
            return layer.name
    return None


def resolve_channels(c: int, entry: StrategyEntry) -> int:
    if entry.channels is not None:
        return int(entry.channels)
    if entry.ratio is None or entry.ratio < 1:
        raise ParameterError(f"entry for '{entry.lower_layer}' needs ratio >= 1 or channels")
    return max(1, round(c / entry.ratio))


def uniform_strategy(model: nn.ModelGraph, ratio: float, exclude=()) -> PruneStrategy:
    """Every prunable conv pair at the given ratio, shallow to deep."""
    entries = []
    for lower in model.conv_names():
        if lower in exclude:
            continue
        upper = preceding_conv(model, lower)
        if upper is None or not pair_allowed(model, upper, lower):
            continue
        try:
            _validate_pair(model, upper, lower)
        except StructureError:
            continue
        entries.append(StrategyEntry(lower_layer=lower, ratio=ratio))
    return PruneStrategy(tuple(entries), model.blocks)


def prune_model(
    model: nn.ModelGraph,
    strategy: PruneStrategy,
    calib,
    cfg: RunConfig = RunConfig(),
) -> tuple[nn.ModelGraph, PruneReport]:
    """Apply the strategy sequentially from shallow to deep layers.

    Inputs and clustering activations at each step come from the current
    (partially pruned) model; reconstruction targets always come from the
    original model.
    """
    if strategy.blocks:
        model = nn.ModelGraph(model.layers, model.input_shape, strategy.blocks)
    original = model
    ordered = sorted(strategy.entries, key=lambda e: model.layer_index(e.lower_layer))
    current = model
    records = []
    for entry in ordered:
        lower = entry.lower_layer
        layer = current.layer(lower)
        if not isinstance(layer, nn.ConvLayer):
            raise StructureError(f"strategy targets non-conv layer '{lower}'")
        upper = preceding_conv(current, lower)
        if upper is None:
            raise StructureError(f"'{lower}' has no preceding conv layer to pair with")
        if not pair_allowed(current, upper, lower):
            raise StructureError(
                f"pair ('{upper}', '{lower}') crosses a residual block boundary"
            )
        c = current.layer(upper).c_out
        c_prime = resolve_channels(c, entry)
        current, record = prune_layer_pair(
            current, upper, lower, c_prime, calib, cfg, original=original
        )
        records.append(record)
    params_before, flops_before = nn.count_costs(original)
    params_after, flops_after = nn.count_costs(current)
    report = PruneReport(
        tuple(records), params_before, params_after, flops_before, flops_after
    )
    return current, report
