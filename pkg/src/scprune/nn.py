"""Minimal feed-forward CNN representation and inference.

Layer set: conv, relu, maxpool, fc, batchnorm. Residual topologies are
expressed as a flat layer list plus BlockSpec metadata: the input to a block's
first conv is added back to the output of its last conv (identity shortcut).

Inference runs per image in float32; im2col produces float64 matrices for the
solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError, StructureError
from .linalg import as_matrix


def as_tensor(data, shape=None) -> np.ndarray:
    t = np.asarray(data, dtype=np.float32)
    if shape is not None:
        t = t.reshape(shape)
    if not np.isfinite(t).all():
        raise ValueError("tensor contains non-finite entries")
    return t


@dataclass(frozen=True)
class ConvLayer:
    name: str
    weights: np.ndarray  # [c_out, c_in, k_h, k_w]
    bias: np.ndarray  # [c_out]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv '{self.name}': weights must be rank 4")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"conv '{self.name}': bias length must equal c_out")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"conv '{self.name}': bad stride/padding")

    @property
    def c_out(self):
        return self.weights.shape[0]

    @property
    def c_in(self):
        return self.weights.shape[1]


@dataclass(frozen=True)
class ReluLayer:
    name: str


@dataclass(frozen=True)
class MaxPoolLayer:
    name: str
    kernel: int
    stride: int


@dataclass(frozen=True)
class FcLayer:
    name: str
    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"fc '{self.name}': weights must be rank 2")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"fc '{self.name}': bias length must equal out features")


@dataclass(frozen=True)
class BatchNormLayer:
    name: str
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    epsilon: float = 1e-5


Layer = ConvLayer | ReluLayer | MaxPoolLayer | FcLayer | BatchNormLayer


@dataclass(frozen=True)
class BlockSpec:
    """Residual block metadata over the flat layer list."""

    block_id: str
    conv_layer_names: tuple[str, ...]
    prunable_prefix: int

    def __post_init__(self):
        if self.prunable_prefix > len(self.conv_layer_names):
            raise StructureError(
                f"block '{self.block_id}': prunable_prefix exceeds conv count"
            )


@dataclass(frozen=True)
class ModelGraph:
    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    blocks: tuple[BlockSpec, ...] = field(default=())

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise StructureError("layer names must be unique")
        known = set(names)
        for blk in self.blocks:
            missing = [n for n in blk.conv_layer_names if n not in known]
            if missing:
                raise StructureError(f"block '{blk.block_id}' names unknown layers {missing}")

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(f"no layer named '{name}'")

    def layer(self, name: str) -> Layer:
        return self.layers[self.layer_index(name)]

    def conv_names(self) -> list[str]:
        return [l.name for l in self.layers if isinstance(l, ConvLayer)]

    def replace_conv(self, name: str, weights, bias, **overrides) -> "ModelGraph":
        idx = self.layer_index(name)
        old = self.layers[idx]
        if not isinstance(old, ConvLayer):
            raise StructureError(f"layer '{name}' is not a conv layer")
        new = replace(old, weights=as_tensor(weights), bias=as_tensor(bias), **overrides)
        layers = self.layers[:idx] + (new,) + self.layers[idx + 1 :]
        return ModelGraph(layers, self.input_shape, self.blocks)

    def truncated(self, count: int) -> "ModelGraph":
        """Prefix model running only the first `count` layers.

        Blocks cut by the truncation are dropped: their shortcut add happens
        after their last conv, which is no longer part of the graph.
        """
        kept = self.layers[:count]
        names = {l.name for l in kept}
        blocks = tuple(
            blk for blk in self.blocks if all(n in names for n in blk.conv_layer_names)
        )
        return ModelGraph(kept, self.input_shape, blocks)


def models_equal(a: ModelGraph, b: ModelGraph) -> bool:
    """Field-by-field equality, comparing weight arrays exactly."""
    if tuple(a.input_shape) != tuple(b.input_shape) or a.blocks != b.blocks:
        return False
    if len(a.layers) != len(b.layers):
        return False
    for la, lb in zip(a.layers, b.layers):
        if type(la) is not type(lb):
            return False
        for name in la.__dataclass_fields__:
            va, vb = getattr(la, name), getattr(lb, name)
            if isinstance(va, np.ndarray):
                if va.shape != vb.shape or not np.array_equal(va, vb):
                    return False
            elif va != vb:
                return False
    return True


def im2col(x: np.ndarray, k_h: int, k_w: int, stride: int, padding: int) -> np.ndarray:
    """Unroll receptive fields of a [c, H, W] tensor into a float64 matrix.

    Row r holds the flattened patch of output position r; within a row the
    ordering is channel-major, then kernel-row-major.
    """
    if x.ndim != 3:
        raise ShapeError(f"im2col expects rank-3 input, got shape {x.shape}")
    c, h, w = x.shape
    if padding > 0:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    hp, wp = h + 2 * padding, w + 2 * padding
    if k_h > hp or k_w > wp:
        raise ShapeError(f"kernel {k_h}x{k_w} exceeds padded input {hp}x{wp}")
    h_out = (hp - k_h) // stride + 1
    w_out = (wp - k_w) // stride + 1
    cols = np.empty((c, k_h, k_w, h_out, w_out), dtype=np.float64)
    for i in range(k_h):
        for j in range(k_w):
            cols[:, i, j] = x[:, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
    return cols.reshape(c * k_h * k_w, h_out * w_out).T


def conv2d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    c_out, c_in, k_h, k_w = layer.weights.shape
    if x.shape[0] != c_in:
        raise ShapeError(
            f"conv '{layer.name}': input has {x.shape[0]} channels, expected {c_in}"
        )
    cols = im2col(x, k_h, k_w, layer.stride, layer.padding)
    wmat = layer.weights.reshape(c_out, -1).astype(np.float64)
    out = cols @ wmat.T + layer.bias.astype(np.float64)
    h_out = (x.shape[1] + 2 * layer.padding - k_h) // layer.stride + 1
    w_out = (x.shape[2] + 2 * layer.padding - k_w) // layer.stride + 1
    return out.T.reshape(c_out, h_out, w_out).astype(np.float32)


def maxpool2d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} exceeds input {h}x{w}")
    h_out = (h - kernel) // stride + 1
    w_out = (w - kernel) // stride + 1
    windows = np.empty((kernel * kernel, c, h_out, w_out), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            windows[i * kernel + j] = x[
                :, i : i + stride * h_out : stride, j : j + stride * w_out : stride
            ]
    return windows.max(axis=0)


def _apply(layer: Layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, ConvLayer):
        return conv2d(x, layer)
    if isinstance(layer, ReluLayer):
        return np.maximum(x, 0.0)
    if isinstance(layer, MaxPoolLayer):
        return maxpool2d(x, layer.kernel, layer.stride)
    if isinstance(layer, FcLayer):
        v = x.reshape(-1)
        if v.shape[0] != layer.weights.shape[1]:
            raise ShapeError(
                f"fc '{layer.name}': input size {v.shape[0]} != {layer.weights.shape[1]}"
            )
        return layer.weights @ v + layer.bias
    if isinstance(layer, BatchNormLayer):
        scale = layer.gamma / np.sqrt(layer.var + layer.epsilon)
        return (x - layer.mean[:, None, None]) * scale[:, None, None] + layer.beta[
            :, None, None
        ]
    raise StructureError(f"unknown layer type {type(layer).__name__}")


def forward(model: ModelGraph, x: np.ndarray, capture=()) -> tuple[np.ndarray, dict]:
    """Run a single image through the model.

    `captured[name]` holds the raw output of the named layer; for the last
    conv of a residual block this is the pre-shortcut output.
    """
    capture = set(capture)
    names = {l.name for l in model.layers}
    unknown = capture - names
    if unknown:
        raise KeyError(f"capture names not in model: {sorted(unknown)}")
    if tuple(x.shape) != tuple(model.input_shape):
        raise ShapeError(f"input shape {x.shape} != model input {model.input_shape}")

    first_conv = {blk.conv_layer_names[0]: blk for blk in model.blocks}
    last_conv = {blk.conv_layer_names[-1]: blk for blk in model.blocks}
    saved: dict[str, np.ndarray] = {}
    captured: dict[str, np.ndarray] = {}
    cur = np.asarray(x, dtype=np.float32)
    for layer in model.layers:
        if layer.name in first_conv:
            saved[first_conv[layer.name].block_id] = cur
        cur = _apply(layer, cur)
        if layer.name in capture:
            captured[layer.name] = cur.copy()
        if layer.name in last_conv:
            shortcut = saved.pop(last_conv[layer.name].block_id, None)
            if shortcut is not None:
                if shortcut.shape != cur.shape:
                    raise ShapeError(
                        f"block '{last_conv[layer.name].block_id}': shortcut shape "
                        f"{shortcut.shape} != branch shape {cur.shape}"
                    )
                cur = cur + shortcut
    return cur, captured


def fold_batchnorm(model: ModelGraph) -> ModelGraph:
    """Absorb every BatchNormLayer into the conv immediately before it."""
    layers: list[Layer] = []
    for layer in model.layers:
        if isinstance(layer, BatchNormLayer):
            if not layers or not isinstance(layers[-1], ConvLayer):
                raise StructureError(
                    f"batchnorm '{layer.name}' is not preceded by a conv layer"
                )
            conv = layers[-1]
            scale = (layer.gamma / np.sqrt(layer.var + layer.epsilon)).astype(np.float64)
            weights = conv.weights.astype(np.float64) * scale[:, None, None, None]
            bias = (conv.bias.astype(np.float64) - layer.mean) * scale + layer.beta
            layers[-1] = replace(conv, weights=as_tensor(weights), bias=as_tensor(bias))
        else:
            layers.append(layer)
    return ModelGraph(tuple(layers), model.input_shape, model.blocks)


def _out_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, ConvLayer):
        c_out, c_in, k_h, k_w = layer.weights.shape
        c, h, w = shape
        if c != c_in:
            raise ShapeError(f"conv '{layer.name}': {c} channels in, expected {c_in}")
        return (
            c_out,
            (h + 2 * layer.padding - k_h) // layer.stride + 1,
            (w + 2 * layer.padding - k_w) // layer.stride + 1,
        )
    if isinstance(layer, MaxPoolLayer):
        c, h, w = shape
        return (c, (h - layer.kernel) // layer.stride + 1, (w - layer.kernel) // layer.stride + 1)
    if isinstance(layer, FcLayer):
        return (layer.weights.shape[0],)
    return shape


def layer_costs(model: ModelGraph) -> list[dict]:
    """Per-layer parameter and FLOP accounting (multiply-add counted as 2 ops)."""
    shape = tuple(model.input_shape)
    rows = []
    for layer in model.layers:
        out = _out_shape(layer, shape)
        params = 0
        flops = 0
        if isinstance(layer, ConvLayer):
            c_out, c_in, k_h, k_w = layer.weights.shape
            # an all-zero bias stands in for "no bias" and carries no parameters
            params = layer.weights.size + (layer.bias.size if np.any(layer.bias) else 0)
            flops = 2 * c_in * k_h * k_w * c_out * out[1] * out[2]
        elif isinstance(layer, FcLayer):
            params = layer.weights.size + (layer.bias.size if np.any(layer.bias) else 0)
            flops = 2 * layer.weights.shape[0] * layer.weights.shape[1]
        elif isinstance(layer, BatchNormLayer):
            params = layer.gamma.size + layer.beta.size + layer.mean.size + layer.var.size
        rows.append(
            {
                "name": layer.name,
                "type": type(layer).__name__,
                "in_shape": shape,
                "out_shape": out,
                "params": int(params),
                "flops": int(flops),
            }
        )
        shape = out
    return rows


def count_costs(model: ModelGraph) -> tuple[int, int]:
    rows = layer_costs(model)
    return sum(r["params"] for r in rows), sum(r["flops"] for r in rows)
