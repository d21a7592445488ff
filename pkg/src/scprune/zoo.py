"""Model builders used by experiments and tests.

`vgg16` reproduces the classic 13-conv + 3-fc architecture for cost
accounting. The toy builders construct small networks with controlled
redundancy so pruning behavior can be checked without real datasets.
"""

from __future__ import annotations

import numpy as np

from . import nn

_VGG16_CONVS = [
    ("conv1_1", 3, 64), ("conv1_2", 64, 64),
    ("conv2_1", 64, 128), ("conv2_2", 128, 128),
    ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256),
    ("conv4_1", 256, 512), ("conv4_2", 512, 512), ("conv4_3", 512, 512),
    ("conv5_1", 512, 512), ("conv5_2", 512, 512), ("conv5_3", 512, 512),
]
_VGG16_POOL_AFTER = {"conv1_2", "conv2_2", "conv3_3", "conv4_3", "conv5_3"}


def vgg16(num_classes: int = 1000, init: str = "zeros", seed: int = 0) -> nn.ModelGraph:
    """VGG-16 at 224x224 input; weights are zeros unless init='random'."""
    rng = np.random.default_rng(seed)

    def weights(shape):
        if init == "random":
            return (rng.standard_normal(shape) * 0.01).astype(np.float32)
        return np.zeros(shape, dtype=np.float32)

    layers = []
    for name, c_in, c_out in _VGG16_CONVS:
        layers.append(
            nn.ConvLayer(name, weights((c_out, c_in, 3, 3)), weights((c_out,)),
                         stride=1, padding=1)
        )
        layers.append(nn.ReluLayer(f"relu_{name}"))
        if name in _VGG16_POOL_AFTER:
            layers.append(nn.MaxPoolLayer(f"pool_{name}", kernel=2, stride=2))
    layers.append(nn.FcLayer("fc6", weights((4096, 512 * 7 * 7)), weights((4096,))))
    layers.append(nn.ReluLayer("relu_fc6"))
    layers.append(nn.FcLayer("fc7", weights((4096, 4096)), weights((4096,))))
    layers.append(nn.ReluLayer("relu_fc7"))
    layers.append(nn.FcLayer("fc8", weights((num_classes, 4096)), weights((num_classes,))))
    return nn.ModelGraph(tuple(layers), (3, 224, 224))


def random_conv_net(
    seed: int = 0,
    channels=(4, 6, 6, 4),
    input_shape=(3, 8, 8),
    kernel: int = 3,
    num_classes: int | None = None,
) -> nn.ModelGraph:
    """Single-path conv/relu stack with random weights."""
    rng = np.random.default_rng(seed)
    layers = []
    c_prev = input_shape[0]
    h = input_shape[1]
    for i, c in enumerate(channels, start=1):
        w = (rng.standard_normal((c, c_prev, kernel, kernel)) / np.sqrt(c_prev * kernel**2))
        b = rng.standard_normal(c) * 0.1
        layers.append(
            nn.ConvLayer(f"conv{i}", w.astype(np.float32), b.astype(np.float32),
                         stride=1, padding=kernel // 2)
        )
        if i < len(channels):
            layers.append(nn.ReluLayer(f"relu{i}"))
        c_prev = c
    if num_classes is not None:
        layers.append(nn.ReluLayer(f"relu{len(channels)}"))
        feat = channels[-1] * h * input_shape[2]
        w = rng.standard_normal((num_classes, feat)) / np.sqrt(feat)
        layers.append(
            nn.FcLayer("fc", w.astype(np.float32),
                       np.zeros(num_classes, dtype=np.float32))
        )
    return nn.ModelGraph(tuple(layers), tuple(input_shape))


def planted_redundancy_net(
    seed: int = 0, input_shape=(3, 8, 8), noise_scale: float = 1e-3
) -> nn.ModelGraph:
    """3-conv net whose middle layer holds 8 distinct filters, each duplicated.

    Duplicate of filter f is a positively scaled copy s*f plus a perturbation
    of the given scale, so the 16 middle feature maps span 8 one-dimensional
    subspaces. The 8 distinct filters themselves come in 4 similar pairs
    (nearby but clearly distinct subspaces) so 4x pruning also has structure
    to find.
    """
    rng = np.random.default_rng(seed)
    c0 = input_shape[0]

    w1 = rng.standard_normal((6, c0, 3, 3)) / np.sqrt(c0 * 9)
    b1 = rng.standard_normal(6) * 0.05

    base = np.empty((8, 6, 3, 3))
    for fam in range(4):
        root = rng.standard_normal((6, 3, 3)) / np.sqrt(6 * 9)
        base[2 * fam] = root
        base[2 * fam + 1] = root + 0.05 * rng.standard_normal((6, 3, 3)) / np.sqrt(6 * 9)
    scales = rng.uniform(0.6, 1.6, size=8)
    w2 = np.empty((16, 6, 3, 3))
    b2 = np.empty(16)
    base_bias = rng.standard_normal(8) * 0.02
    for i in range(8):
        w2[2 * i] = base[i]
        b2[2 * i] = base_bias[i]
        w2[2 * i + 1] = scales[i] * base[i] + noise_scale * rng.standard_normal((6, 3, 3))
        b2[2 * i + 1] = scales[i] * base_bias[i]

    w3 = rng.standard_normal((8, 16, 3, 3)) / np.sqrt(16 * 9)
    b3 = rng.standard_normal(8) * 0.05

    layers = (
        nn.ConvLayer("conv1", w1.astype(np.float32), b1.astype(np.float32), padding=1),
        nn.ReluLayer("relu1"),
        nn.ConvLayer("conv2", w2.astype(np.float32), b2.astype(np.float32), padding=1),
        nn.ReluLayer("relu2"),
        nn.ConvLayer("conv3", w3.astype(np.float32), b3.astype(np.float32), padding=1),
    )
    return nn.ModelGraph(layers, tuple(input_shape))


def planted_classifier(
    seed: int = 0, num_classes: int = 4, input_shape=(3, 8, 8)
):
    """Planted-redundancy net with an fc head tuned to 4 class templates.

    The fc rows are the feature vectors of the class templates, giving a
    nearest-template classifier with clear margins. Returns
    (model, templates) where templates[k] is the class-k input.
    """
    body = planted_redundancy_net(seed, input_shape)
    rng = np.random.default_rng(seed + 1)
    templates = [
        rng.standard_normal(input_shape).astype(np.float32) for _ in range(num_classes)
    ]
    with_relu = nn.ModelGraph(
        body.layers + (nn.ReluLayer("relu3"),), body.input_shape
    )
    feats = []
    for t in templates:
        out, _ = nn.forward(with_relu, t)
        f = out.reshape(-1).astype(np.float64)
        feats.append(f / np.linalg.norm(f))
    fc = nn.FcLayer(
        "fc",
        np.stack(feats).astype(np.float32),
        np.zeros(num_classes, dtype=np.float32),
    )
    model = nn.ModelGraph(with_relu.layers + (fc,), body.input_shape)
    return model, templates


def class_dataset(templates, per_class: int, noise: float, seed: int = 0):
    """Noisy copies of class templates; returns (inputs, labels)."""
    rng = np.random.default_rng(seed)
    inputs = []
    labels = []
    for k, t in enumerate(templates):
        for _ in range(per_class):
            inputs.append((t + noise * rng.standard_normal(t.shape)).astype(np.float32))
            labels.append(k)
    return inputs, labels


def toy_residual(seed: int = 0, channels: int = 8, input_shape=(3, 8, 8)) -> nn.ModelGraph:
    """Stem conv plus two 3-conv residual blocks (prunable_prefix 2) and an fc head."""
    rng = np.random.default_rng(seed)

    def conv(name, c_in, c_out):
        w = rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(c_in * 9)
        b = rng.standard_normal(c_out) * 0.05
        return nn.ConvLayer(name, w.astype(np.float32), b.astype(np.float32), padding=1)

    layers = [conv("stem", input_shape[0], channels), nn.ReluLayer("relu_stem")]
    blocks = []
    for bi in (1, 2):
        names = []
        for ci in (1, 2, 3):
            name = f"b{bi}c{ci}"
            layers.append(conv(name, channels, channels))
            names.append(name)
            if ci < 3:
                layers.append(nn.ReluLayer(f"b{bi}relu{ci}"))
        layers.append(nn.ReluLayer(f"b{bi}relu_out"))
        blocks.append(nn.BlockSpec(f"block{bi}", tuple(names), prunable_prefix=2))
    feat = channels * input_shape[1] * input_shape[2]
    w = rng.standard_normal((4, feat)) / np.sqrt(feat)
    layers.append(nn.FcLayer("fc", w.astype(np.float32), np.zeros(4, dtype=np.float32)))
    return nn.ModelGraph(tuple(layers), tuple(input_shape), tuple(blocks))
