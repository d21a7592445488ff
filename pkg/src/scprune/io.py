"""Bit-exact serialization: model files, tensor files, labels, reports.

Model file ("SCPM", version 1), all integers little-endian:

    magic  b"SCPM"
    u32    version (= 1)
    u32    input-shape rank, then u32 per dimension
    u32    layer count
    per layer:
        u16 name length + UTF-8 name
        u8  type tag: 0 conv, 1 relu, 2 maxpool, 3 fc, 4 batchnorm, 5 block-marker
        type-specific u32 params, then weight blobs, each a u64 element
        count followed by float32 little-endian values

    conv       params c_out, c_in, k_h, k_w, stride, padding; blobs weights, bias
    relu       no params
    maxpool    params kernel, stride
    fc         params out, in; blobs weights, bias
    batchnorm  params channels; blobs gamma, beta, mean, var, epsilon (1 value)
    block      params prunable_prefix, conv count; then u16+UTF-8 per conv name

Tensor file: magic b"SCTN", u32 rank, u32 per dimension, float32 data.
Reports are JSON with sorted keys and no timestamps.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from . import nn
from .errors import FormatError, InputError

MODEL_MAGIC = b"SCPM"
TENSOR_MAGIC = b"SCTN"
MODEL_VERSION = 1

_TAG_CONV = 0
_TAG_RELU = 1
_TAG_MAXPOOL = 2
_TAG_FC = 3
_TAG_BATCHNORM = 4
_TAG_BLOCK = 5


class _Writer:
    def __init__(self, fh):
        self.fh = fh

    def u8(self, v):
        self.fh.write(struct.pack("<B", v))

    def u16(self, v):
        self.fh.write(struct.pack("<H", v))

    def u32(self, v):
        self.fh.write(struct.pack("<I", v))

    def u64(self, v):
        self.fh.write(struct.pack("<Q", v))

    def name(self, s: str):
        raw = s.encode("utf-8")
        self.u16(len(raw))
        self.fh.write(raw)

    def blob(self, arr):
        arr = np.ascontiguousarray(arr, dtype="<f4")
        self.u64(arr.size)
        self.fh.write(arr.reshape(-1).data)  # no intermediate bytes copy


class _Reader:
    def __init__(self, fh, path):
        self.fh = fh
        self.path = path

    def _read(self, n, what):
        offset = self.fh.tell()
        data = self.fh.read(n)
        if len(data) != n:
            raise FormatError(
                f"{self.path}: truncated while reading {what} at byte offset {offset}"
            )
        return data

    def u8(self, what="u8"):
        return struct.unpack("<B", self._read(1, what))[0]

    def u16(self, what="u16"):
        return struct.unpack("<H", self._read(2, what))[0]

    def u32(self, what="u32"):
        return struct.unpack("<I", self._read(4, what))[0]

    def u64(self, what="u64"):
        return struct.unpack("<Q", self._read(8, what))[0]

    def name(self):
        n = self.u16("name length")
        return self._read(n, "name").decode("utf-8")

    def blob(self, what="blob"):
        count = self.u64(f"{what} element count")
        offset = self.fh.tell()
        arr = np.empty(count, dtype="<f4")
        got = self.fh.readinto(memoryview(arr).cast("B"))
        if got != 4 * count:
            raise FormatError(
                f"{self.path}: truncated while reading {what} at byte offset {offset}"
            )
        return arr


def save_model(model: nn.ModelGraph, path):
    with open(path, "wb") as fh:
        w = _Writer(fh)
        fh.write(MODEL_MAGIC)
        w.u32(MODEL_VERSION)
        w.u32(len(model.input_shape))
        for d in model.input_shape:
            w.u32(d)
        w.u32(len(model.layers) + len(model.blocks))
        for layer in model.layers:
            w.name(layer.name)
            if isinstance(layer, nn.ConvLayer):
                w.u8(_TAG_CONV)
                c_out, c_in, k_h, k_w = layer.weights.shape
                for v in (c_out, c_in, k_h, k_w, layer.stride, layer.padding):
                    w.u32(v)
                w.blob(layer.weights)
                w.blob(layer.bias)
            elif isinstance(layer, nn.ReluLayer):
                w.u8(_TAG_RELU)
            elif isinstance(layer, nn.MaxPoolLayer):
                w.u8(_TAG_MAXPOOL)
                w.u32(layer.kernel)
                w.u32(layer.stride)
            elif isinstance(layer, nn.FcLayer):
                w.u8(_TAG_FC)
                w.u32(layer.weights.shape[0])
                w.u32(layer.weights.shape[1])
                w.blob(layer.weights)
                w.blob(layer.bias)
            elif isinstance(layer, nn.BatchNormLayer):
                w.u8(_TAG_BATCHNORM)
                w.u32(layer.gamma.shape[0])
                w.blob(layer.gamma)
                w.blob(layer.beta)
                w.blob(layer.mean)
                w.blob(layer.var)
                w.blob(np.array([layer.epsilon]))
            else:
                raise FormatError(f"cannot serialize layer type {type(layer).__name__}")
        for blk in model.blocks:
            w.name(blk.block_id)
            w.u8(_TAG_BLOCK)
            w.u32(blk.prunable_prefix)
            w.u32(len(blk.conv_layer_names))
            for conv_name in blk.conv_layer_names:
                w.name(conv_name)


def load_model(path) -> nn.ModelGraph:
    with open(path, "rb") as fh:
        r = _Reader(fh, str(path))
        magic = r._read(4, "magic")
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
        version = r.u32("version")
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        rank = r.u32("input-shape rank")
        input_shape = tuple(r.u32("input dimension") for _ in range(rank))
        count = r.u32("layer count")
        layers = []
        blocks = []
        for _ in range(count):
            name = r.name()
            tag = r.u8("type tag")
            if tag == _TAG_CONV:
                c_out, c_in, k_h, k_w, stride, padding = (
                    r.u32("conv param") for _ in range(6)
                )
                weights = r.blob(f"weights of layer '{name}'")
                if weights.size != c_out * c_in * k_h * k_w:
                    raise FormatError(
                        f"{path}: weight blob of layer '{name}' has {weights.size} "
                        f"elements, expected {c_out * c_in * k_h * k_w}"
                    )
                bias = r.blob(f"bias of layer '{name}'")
                if bias.size != c_out:
                    raise FormatError(
                        f"{path}: bias blob of layer '{name}' has {bias.size} "
                        f"elements, expected {c_out}"
                    )
                layers.append(
                    nn.ConvLayer(
                        name,
                        weights.reshape(c_out, c_in, k_h, k_w),
                        bias,
                        stride=stride,
                        padding=padding,
                    )
                )
            elif tag == _TAG_RELU:
                layers.append(nn.ReluLayer(name))
            elif tag == _TAG_MAXPOOL:
                kernel = r.u32("pool kernel")
                stride = r.u32("pool stride")
                layers.append(nn.MaxPoolLayer(name, kernel, stride))
            elif tag == _TAG_FC:
                out_f = r.u32("fc out")
                in_f = r.u32("fc in")
                weights = r.blob(f"weights of layer '{name}'")
                if weights.size != out_f * in_f:
                    raise FormatError(
                        f"{path}: weight blob of layer '{name}' has {weights.size} "
                        f"elements, expected {out_f * in_f}"
                    )
                bias = r.blob(f"bias of layer '{name}'")
                layers.append(nn.FcLayer(name, weights.reshape(out_f, in_f), bias))
            elif tag == _TAG_BATCHNORM:
                channels = r.u32("bn channels")
                gamma = r.blob(f"gamma of layer '{name}'")
                beta = r.blob(f"beta of layer '{name}'")
                mean = r.blob(f"mean of layer '{name}'")
                var = r.blob(f"var of layer '{name}'")
                eps = r.blob(f"epsilon of layer '{name}'")
                if not (gamma.size == beta.size == mean.size == var.size == channels):
                    raise FormatError(f"{path}: batchnorm blobs of '{name}' disagree")
                layers.append(
                    nn.BatchNormLayer(name, gamma, beta, mean, var, float(eps[0]))
                )
            elif tag == _TAG_BLOCK:
                prefix = r.u32("prunable prefix")
                n_convs = r.u32("block conv count")
                conv_names = tuple(r.name() for _ in range(n_convs))
                blocks.append(nn.BlockSpec(name, conv_names, prefix))
            else:
                raise FormatError(
                    f"{path}: unknown layer type tag {tag} for '{name}'"
                )
        return nn.ModelGraph(tuple(layers), input_shape, tuple(blocks))


def save_tensor(tensor: np.ndarray, path):
    with open(path, "wb") as fh:
        w = _Writer(fh)
        fh.write(TENSOR_MAGIC)
        w.u32(tensor.ndim)
        for d in tensor.shape:
            w.u32(d)
        fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        r = _Reader(fh, str(path))
        magic = r._read(4, "magic")
        if magic != TENSOR_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
        rank = r.u32("rank")
        dims = tuple(r.u32("dimension") for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        data = r._read(4 * n, "tensor data")
        extra = fh.read(1)
        if extra:
            raise FormatError(f"{path}: trailing bytes after tensor data")
        return np.frombuffer(data, dtype="<f4").copy().reshape(dims)


def list_tensor_files(directory) -> list[str]:
    try:
        names = sorted(os.listdir(directory))
    except FileNotFoundError:
        raise InputError(f"calibration directory not found: {directory}")
    return [n for n in names if n.endswith(".sctn")]


def load_calibration(directory, limit: int | None = None, seed: int = 0):
    """Tensors in lexicographic file order; seeded uniform subsample over `limit`."""
    names = list_tensor_files(directory)
    if not names:
        raise InputError(f"no .sctn tensor files in {directory}")
    if limit is not None and len(names) > limit:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(names), size=limit, replace=False))
        names = [names[i] for i in idx]
    tensors = []
    shape = None
    for name in names:
        t = load_tensor(os.path.join(directory, name))
        if shape is None:
            shape = t.shape
        elif t.shape != shape:
            raise InputError(
                f"tensor file {name} has shape {t.shape}, expected {shape}"
            )
        tensors.append(t)
    return names, tensors


def load_labels(path) -> dict[str, int]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InputError(f"{path}: labels file must be a JSON object")
    return {str(k): int(v) for k, v in raw.items()}


def evaluate_topk(model: nn.ModelGraph, tensors, labels, k: int) -> float:
    """Fraction of inputs whose label is among the k largest logits.

    Logit ties are broken toward the lower class index.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if len(tensors) != len(labels):
        raise InputError("tensor and label counts differ")
    if not tensors:
        raise InputError("empty evaluation set")
    hits = 0
    for x, label in zip(tensors, labels):
        logits, _ = nn.forward(model, x)
        logits = np.asarray(logits).reshape(-1)
        # stable sort on (-logit, index): ties go to the lower class index
        order = np.lexsort((np.arange(logits.size), -logits))
        if label in order[:k]:
            hits += 1
    return hits / len(tensors)


def labelled_dataset(directory, labels_path, limit=None, seed=0):
    names, tensors = load_calibration(directory, limit, seed)
    labels_map = load_labels(labels_path)
    missing = [n for n in names if n not in labels_map]
    if missing:
        raise InputError(f"missing labels for files: {missing}")
    return tensors, [labels_map[n] for n in names]


def save_report(document: dict, path):
    for value in _walk_numbers(document):
        if not np.isfinite(value):
            raise FormatError("report contains non-finite numeric values")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _walk_numbers(value):
    if isinstance(value, bool):
        return
    if isinstance(value, (int, float)):
        yield value
    elif isinstance(value, dict):
        for v in value.values():
            yield from _walk_numbers(v)
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from _walk_numbers(v)
