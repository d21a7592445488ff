"""End-to-end acceptance checks for the full toolkit.

Each test prints a single ``criterion N (...): PASS`` / ``FAIL`` line so the
suite output doubles as an acceptance report (run with ``pytest -s`` to see
the lines for passing criteria too).
"""

import functools
import time
from contextlib import redirect_stdout
from io import StringIO
from itertools import permutations

import numpy as np

from scprune import baselines, cli, linalg, nn, pruner, ssc, zoo
from scprune import io as sio
from scprune.config import RunConfig


def _criterion(num, desc):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"criterion {num} ({desc}): FAIL")
                raise
            print(f"criterion {num} ({desc}): PASS")

        return wrapper

    return decorate


def _rand_inputs(n, shape=(3, 8, 8), seed=0):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(shape).astype(np.float32) for _ in range(n)]


@_criterion(1, "VGG-16 cost accounting within published figures")
def test_criterion_1_cost_accounting(tmp_path):
    start = time.monotonic()
    model_path = tmp_path / "vgg16.scpm"
    sio.save_model(zoo.vgg16(), model_path)
    buf = StringIO()
    with redirect_stdout(buf):
        code = cli.main(["inspect", "--model", str(model_path)])
    assert code == 0
    total = buf.getvalue().strip().splitlines()[-1].split()
    params, flops = int(total[1]), int(total[2])
    assert abs(params - 138.34e6) / 138.34e6 <= 0.01
    assert abs(flops - 30.94e9) / 30.94e9 <= 0.05
    assert time.monotonic() - start < 5.0


@_criterion(2, "100% subspace recovery over 20 seeds")
def test_criterion_2_subspace_recovery():
    start = time.monotonic()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cols, truth = [], []
        for s in range(3):
            basis = np.linalg.qr(rng.standard_normal((8, 2)))[0]
            for _ in range(8):
                cols.append(basis @ rng.standard_normal(2))
                truth.append(s)
        x = np.array(cols).T
        x /= np.linalg.norm(x, axis=0)
        se = ssc.solve_self_expressive(x)
        labels = ssc.spectral_cluster(se, 3, seed=42).labels
        accuracy = max(
            np.mean(np.array([perm[l] for l in labels]) == truth)
            for perm in permutations(range(3))
        )
        assert accuracy == 1.0, f"seed {seed}: accuracy {accuracy}"
    assert time.monotonic() - start < 10.0


@_criterion(3, "ratio-1.0 pruning is an identity within 1e-3")
def test_criterion_3_identity_pruning():
    model = zoo.random_conv_net(0, channels=(6, 8, 8, 6))
    calib = _rand_inputs(4, seed=1)
    strategy = pruner.uniform_strategy(model, 1.0)
    pruned, _ = pruner.prune_model(model, strategy, calib)
    for x in _rand_inputs(16, seed=2):
        a, _ = nn.forward(model, x)
        b, _ = nn.forward(pruned, x)
        assert np.abs(a - b).max() <= 1e-3


@_criterion(4, "planted redundancy prunes 2x with <=1% error, <=1pt accuracy drop")
def test_criterion_4_planted_redundancy():
    start = time.monotonic()
    model, templates = zoo.planted_classifier(0)
    inputs, labels = zoo.class_dataset(templates, per_class=8, noise=0.05, seed=3)
    calib = _rand_inputs(4, seed=4)
    strategy = pruner.PruneStrategy((pruner.StrategyEntry("conv3", ratio=2.0),))
    pruned, _ = pruner.prune_model(model, strategy, calib)

    errs = []
    for x in inputs:
        ref, _ = nn.forward(model, x)
        out, _ = nn.forward(pruned, x)
        errs.append(np.linalg.norm(out - ref) / max(np.linalg.norm(ref), 1e-30))
    assert float(np.mean(errs)) <= 0.01

    acc_before = sio.evaluate_topk(model, inputs, labels, 1)
    acc_after = sio.evaluate_topk(pruned, inputs, labels, 1)
    assert acc_before - acc_after <= 0.01
    assert time.monotonic() - start < 60.0


@_criterion(5, "subspace selector dominates baselines at ratios 2 and 4")
def test_criterion_5_selector_dominance():
    model = zoo.planted_redundancy_net(0)
    calib = _rand_inputs(4, seed=5)
    for ratio in (2.0, 4.0):
        c_prime = max(1, round(16 / ratio))
        errors = {}
        for kind in ("firstk", "maxresponse", "kmeans", "ssc"):
            _, record = baselines.prune_with_selector(
                model, "conv2", "conv3", c_prime, calib, baselines.Selector(kind)
            )
            errors[kind] = record.recon_error_after
        random_errs = []
        for seed in range(5):
            _, record = baselines.prune_with_selector(
                model, "conv2", "conv3", c_prime, calib,
                baselines.Selector("random", seed=seed),
            )
            random_errs.append(record.recon_error_after)
        errors["random"] = float(np.mean(random_errs))
        for kind in ("firstk", "random", "maxresponse", "kmeans"):
            assert errors["ssc"] <= errors[kind], (
                f"ratio {ratio}: ssc {errors['ssc']:.4f} vs {kind} {errors[kind]:.4f}"
            )


@_criterion(6, "refit never increases reconstruction error (50 instances)")
def test_criterion_6_monotone_refit():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        model = zoo.random_conv_net(
            seed, channels=(4, int(rng.integers(4, 8)), 4), input_shape=(3, 8, 8)
        )
        calib = _rand_inputs(3, (3, 8, 8), seed=seed + 1000)
        c = model.layer("conv2").c_out
        c_prime = int(rng.integers(1, c + 1))
        _, record = pruner.prune_layer_pair(model, "conv2", "conv3", c_prime, calib)
        assert record.recon_error_after <= record.recon_error_before + 1e-12


@_criterion(7, "residual blocks keep their output widths at 2x")
def test_criterion_7_residual_shape_contract():
    model = zoo.toy_residual(0)
    calib = _rand_inputs(3, seed=6)
    strategy = pruner.uniform_strategy(model, 2.0)
    pruned, report = pruner.prune_model(model, strategy, calib)
    assert len(report.records) == 4
    for blk in pruned.blocks:
        out_conv = pruned.layer(blk.conv_layer_names[-1])
        assert out_conv.c_out == model.layer(blk.conv_layer_names[-1]).c_out
    # end-to-end forward still runs and matches shapes
    out, _ = nn.forward(pruned, _rand_inputs(1, seed=7)[0])
    ref, _ = nn.forward(model, _rand_inputs(1, seed=7)[0])
    assert out.shape == ref.shape


@_criterion(8, "pruning is byte-for-byte deterministic")
def test_criterion_8_determinism(tmp_path):
    import json

    model, templates = zoo.planted_classifier(0)
    sio.save_model(model, tmp_path / "model.scpm")
    calib_dir = tmp_path / "calib"
    calib_dir.mkdir()
    for i, x in enumerate(_rand_inputs(4, seed=8)):
        sio.save_tensor(x, calib_dir / f"img{i}.sctn")
    strategy = tmp_path / "strategy.json"
    strategy.write_text(json.dumps({"layers": [{"lower": "conv3", "ratio": 2.0}]}))

    outputs = []
    for run in ("a", "b"):
        out = tmp_path / f"{run}.scpm"
        rep = tmp_path / f"{run}.json"
        code = cli.main(
            [
                "prune",
                "--model", str(tmp_path / "model.scpm"),
                "--calib", str(calib_dir),
                "--strategy", str(strategy),
                "--out", str(out),
                "--report", str(rep),
                "--seed", "42",
            ]
        )
        assert code == 0
        outputs.append((out.read_bytes(), rep.read_bytes()))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]


@_criterion(9, "kernels match brute-force oracles")
def test_criterion_9_oracle_equivalence():
    rng = np.random.default_rng(9)
    # unrolled convolution vs nested loops on 100 random shapes
    for _ in range(100):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        h = int(rng.integers(k, k + 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        x = rng.standard_normal((c_in, h, h)).astype(np.float32)
        w = rng.standard_normal((c_out, c_in, k, k)).astype(np.float32)
        b = rng.standard_normal(c_out).astype(np.float32)
        model = nn.ModelGraph(
            (nn.ConvLayer("c", w, b, stride=stride, padding=padding),),
            (c_in, h, h),
        )
        got, _ = nn.forward(model, x)
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
        h_out = (xp.shape[1] - k) // stride + 1
        expected = np.zeros((c_out, h_out, h_out))
        for m in range(c_out):
            for i in range(h_out):
                for j in range(h_out):
                    patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                    expected[m, i, j] = np.sum(
                        w[m].astype(np.float64) * patch.astype(np.float64)
                    ) + b[m]
        assert np.abs(got - expected).max() <= 1e-4

    # eigendecomposition reconstructs its input
    for n in (3, 5, 8):
        a = rng.standard_normal((n, n))
        a = 0.5 * (a + a.T)
        eig = linalg.sym_eigen(a)
        recon = eig.eigenvectors @ np.diag(eig.eigenvalues) @ eig.eigenvectors.T
        assert np.abs(recon - a).max() <= 1e-8

    # cluster-average merges match direct float64 means exactly
    w_low = rng.standard_normal((3, 6, 3, 3)).astype(np.float32)
    w_up = rng.standard_normal((6, 3, 3, 3)).astype(np.float32)
    b_up = rng.standard_normal(6).astype(np.float32)
    asg = ssc.ClusterAssignment(np.array([0, 1, 0, 2, 1, 2]), 3)
    merged_low = pruner.cluster_lower_channels(w_low, asg)
    merged_up, merged_b = pruner.cluster_upper_filters(w_up, b_up, asg)
    for j, members in enumerate(asg.members()):
        assert np.array_equal(
            merged_low[:, j],
            w_low[:, members].astype(np.float64).mean(axis=1).astype(np.float32),
        )
        assert np.array_equal(
            merged_up[j],
            w_up[members].astype(np.float64).mean(axis=0).astype(np.float32),
        )
        assert merged_b[j] == np.float32(b_up[members].astype(np.float64).mean())
