"""End-to-end acceptance criteria, one test per criterion.

Each test appends a ``PASS n. ...`` or ``FAIL n. ...`` line that is printed
in the terminal summary.  Run directly with ``python tests/test_acceptance.py``.
"""

import math
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

import test_factorized
import test_nn_ops
from oracles import central_difference, rel_error, singular_values_oracle
from sfconv import complexity as cx
from sfconv import linalg, regularizer as reg
from sfconv.factorized import FactorizedFilter, init_factorized, sfconv_forward
from sfconv.harness.config import DataSpec, load_config
from sfconv.harness.models import Layer, Segmenter, SFConv2d, classifier
from sfconv.harness.train import train
from sfconv.imstats import kurtosis, skewness
from sfconv.nn import ops
from sfconv.nn.ops import ConvConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@contextmanager
def criterion(lines, n, text, budget=None):
    t0 = time.perf_counter()
    try:
        yield
        dt = time.perf_counter() - t0
        if budget is not None and dt > budget:
            raise AssertionError(f"took {dt:.1f}s, budget {budget:.0f}s")
    except BaseException as exc:
        lines.append(f"FAIL {n:2d}. {text}: {exc}")
        raise
    lines.append(f"PASS {n:2d}. {text} ({dt:.1f}s)")


def test_01_parameter_reduction(acceptance_lines):
    with criterion(acceptance_lines, 1, "SFConv k=3 r=10 64->64 has 3,904 params vs 36,928 full"):
        rng = np.random.default_rng(0)
        full = cx.conv_params(ConvConfig.square(64, 64, 3, padding=1))
        layer = SFConv2d("s", 64, 64, 3, rng, rank=10)
        assert full == 36_928
        assert cx.count_params(layer) == 3_904 == init_factorized(64, 64, 3, 10).num_params()


def test_02_svd_oracle(acceptance_lines):
    with criterion(acceptance_lines, 2, "SVD on 200 random matrices matches the Gram oracle", budget=5):
        rng = np.random.default_rng(2)
        for i in range(200):
            m, n = int(rng.integers(1, 49)), int(rng.integers(1, 11))
            a = rng.standard_normal((m, n) if i % 2 else (n, m))
            res = linalg.svd(a)
            t = min(a.shape)
            assert np.linalg.norm(res.reconstruct() - a) <= 1e-10 * np.linalg.norm(a)
            assert np.abs(res.u.T @ res.u - np.eye(t)).max() <= 1e-10
            assert np.abs(res.v.T @ res.v - np.eye(t)).max() <= 1e-10
            assert np.abs(res.sigma - singular_values_oracle(a)).max() <= 1e-8


def _near_tie(rng, m, n):
    """Spread spectrum with one adjacent pair 1e-3 apart (relative)."""
    t = min(m, n)
    u, _ = np.linalg.qr(rng.standard_normal((m, t)))
    v, _ = np.linalg.qr(rng.standard_normal((n, t)))
    sigma = np.geomspace(3.0, 0.2, t)
    j = int(rng.integers(0, t - 1))
    sigma[j + 1] = sigma[j] * (1 - 1e-3)
    return (u * sigma) @ v.T


def test_03_kl_gradient(acceptance_lines):
    with criterion(acceptance_lines, 3, "KL gradient matches finite differences on 50 P/Q matrices", budget=10):
        rng = np.random.default_rng(3)
        for i in range(50):
            near_tie = i % 5 == 0
            k, c, r = 3, int(rng.integers(2, 5)), int(rng.integers(3 if near_tie else 2, 5))
            shape = (c * k, r) if i % 2 == 0 else (r, c * k)
            a = _near_tie(rng, *shape) if near_tie else rng.standard_normal(shape)
            assert not linalg.count_ties(linalg.svd(a).sigma)
            _, g = reg.matrix_kl_gradient(a)
            fd = central_difference(reg.matrix_kl, a, eps=1e-6)
            assert rel_error(g, fd) < 1e-5


def test_04_conv_gradients(acceptance_lines):
    with criterion(acceptance_lines, 4, "every backward op passes a 20-instance finite-difference suite", budget=60):
        rng = np.random.default_rng(4)
        test_nn_ops.test_conv_backward_finite_differences(rng)
        test_nn_ops.test_relu_backward_finite_differences(rng)
        test_nn_ops.test_sigmoid_backward_finite_differences(rng)
        test_nn_ops.test_maxpool_backward_finite_differences(rng)
        test_nn_ops.test_upsample_backward_finite_differences(rng)
        test_nn_ops.test_dense_backward_finite_differences(rng)
        test_nn_ops.test_cross_entropy_backward_finite_differences(rng)
        test_nn_ops.test_dice_backward_finite_differences(rng)
        test_factorized.test_backward_finite_differences(rng)


def test_05_separable_equivalence(acceptance_lines):
    with criterion(acceptance_lines, 5, "rank-1 SFConv equals full conv with the outer-product kernel", budget=5):
        rng = np.random.default_rng(5)
        for k in (1, 3, 5):
            for _ in range(20):
                stride, pad = int(rng.integers(1, 4)), int(rng.integers(0, k))
                u, v = rng.standard_normal(k), rng.standard_normal(k)
                u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
                cfg = ConvConfig.square(1, 1, k, stride, pad)
                f = FactorizedFilter(v.reshape(1, 1, 1, k), u.reshape(1, 1, k, 1), rng.standard_normal(1), cfg)
                x = rng.standard_normal((2, 1, int(rng.integers(k, 12)), int(rng.integers(k, 12))))
                full, _ = ops.conv2d_forward(x, np.outer(u, v)[None, None], f.bias, cfg)
                out, _ = sfconv_forward(x, f)
                assert out.shape == full.shape
                assert np.abs(out - full).max() <= 1e-10


def test_06_kl_bounds(acceptance_lines):
    with criterion(acceptance_lines, 6, "KL is 0 on uniform, at most ln L, ln L at one-hot, scale invariant"):
        rng = np.random.default_rng(6)
        for n in range(1, 30):
            assert reg.kl_to_uniform(reg.normalize_spectrum(np.full(n, 3.0))) == 0.0
            one_hot = reg.kl_to_uniform(reg.normalize_spectrum(np.eye(n)[0]))
            assert one_hot <= math.log(n) and one_hot == pytest.approx(math.log(n), abs=1e-9)
        for _ in range(200):
            raw = rng.exponential(size=int(rng.integers(1, 20))) ** 3
            assert 0.0 <= reg.kl_to_uniform(reg.normalize_spectrum(raw)) <= math.log(raw.size)
        for _ in range(50):
            a = rng.standard_normal((int(rng.integers(2, 20)), int(rng.integers(2, 10))))
            c = float(np.exp(rng.uniform(-6, 6)))
            assert abs(reg.matrix_kl(c * a) - reg.matrix_kl(a)) <= 1e-10


@pytest.fixture(scope="module")
def classification_runs():
    cfg = load_config(CONFIGS / "classification.ini")
    t0 = time.perf_counter()
    runs = train(cfg), train(cfg.replace(lam=0.0))
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def segmentation_runs():
    cfg = load_config(CONFIGS / "segmentation.ini")
    t0 = time.perf_counter()
    runs = train(cfg), train(cfg.replace(lam=0.0))
    return runs, time.perf_counter() - t0


@pytest.mark.slow
def test_07_regularization_effect(acceptance_lines, classification_runs):
    (reg_run, plain), elapsed = classification_runs
    text = ("classification lambda=5, 30 epochs: acc>=0.95, KL flattened, variance >= lambda=0 run"
            f" [two runs trained in {elapsed:.0f}s]")
    with criterion(acceptance_lines, 7, text):
        last, base = reg_run.epoch_rows[-1], plain.epoch_rows[-1]
        assert elapsed <= 600
        assert len(reg_run.epoch_rows) == 30
        assert last["train_metric"] >= 0.95
        assert last["mean_layer_kl"] < reg_run.initial_mean_kl
        assert last["mean_layer_kl"] < base["mean_layer_kl"]
        assert last["weight_variance"] >= base["weight_variance"]


@pytest.mark.slow
def test_08_segmentation_smoke(acceptance_lines, segmentation_runs):
    (reg_run, plain), elapsed = segmentation_runs
    text = f"segmentation lambda=10, 20 epochs: Dice>=0.80, KL flattened [two runs trained in {elapsed:.0f}s]"
    with criterion(acceptance_lines, 8, text):
        last = reg_run.epoch_rows[-1]
        assert elapsed <= 600
        assert len(reg_run.epoch_rows) == 20
        assert last["train_metric"] >= 0.80
        assert last["mean_layer_kl"] < reg_run.initial_mean_kl
        assert last["mean_layer_kl"] < plain.epoch_rows[-1]["mean_layer_kl"]


@pytest.mark.slow
def test_segmentation_weight_variance(segmentation_runs):
    (reg_run, plain), _ = segmentation_runs
    assert reg_run.epoch_rows[-1]["weight_variance"] >= plain.epoch_rows[-1]["weight_variance"]


def test_09_determinism(acceptance_lines, tmp_path):
    text = "identical runs are byte-identical; resume reproduces the loss sequence"
    with criterion(acceptance_lines, 9, text, budget=120):
        cfg = load_config(CONFIGS / "classification.ini").replace(
            epochs=4, checkpoint_every=2, data=DataSpec(n_train=48, n_eval=12, seed=1))
        a, b = tmp_path / "a", tmp_path / "b"
        ra, rb = train(cfg, out_dir=a), train(cfg, out_dir=b)
        for name in ("steps.csv", "metrics.csv", "epoch0002.sfck", "epoch0004.sfck", "last.sfck"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        assert ra.losses == rb.losses

        # interrupted after epoch 2: resume from that checkpoint
        c = tmp_path / "c"
        shutil.copytree(a, c)
        (c / "last.sfck").unlink()
        (c / "epoch0004.sfck").unlink()
        rc = train(cfg, out_dir=c, resume=c / "epoch0002.sfck")
        assert rc.losses == ra.losses
        for name in ("steps.csv", "metrics.csv", "epoch0004.sfck", "last.sfck"):
            assert (a / name).read_bytes() == (c / name).read_bytes(), name

        # resume without previous metrics: the remaining steps still match exactly
        rd = train(cfg, resume=a / "epoch0002.sfck")
        n_done = len([r for r in ra.step_rows if r["epoch"] <= 2])
        assert rd.losses == ra.losses[n_done:]


def test_10_statistics_oracles(acceptance_lines):
    with criterion(acceptance_lines, 10, "skewness/kurtosis Monte Carlo and symmetry oracles", budget=10):
        rng = np.random.default_rng(10)
        assert abs(skewness(rng.exponential(size=1_000_000)) - 2.0) <= 0.05
        assert abs(kurtosis(rng.standard_normal(1_000_000))) <= 0.1
        for _ in range(20):
            half = rng.gamma(0.5, size=int(rng.integers(2, 5000))) * rng.uniform(0.1, 100)
            centre = rng.uniform(-50, 50)
            assert abs(skewness(np.concatenate([centre + half, centre - half]))) <= 1e-12


def _backbones():
    for widths in ((8, 16, 16, 32), (16, 32, 32, 64), (32, 64, 64, 128)):
        for rank in (4, 10, 20):
            for kind in ("full", "sfconv"):
                yield classifier([kind] * 4, widths=widths, rank=rank), (1, 32, 32)
    for widths in ((8, 16, 32), (16, 32, 64)):
        for rank in (4, 10, 20):
            for kind in ("full", "sfconv"):
                yield Segmenter([kind] * 5, widths=widths, rank=rank), (1, 48, 48)


def _instrument(model):
    """Wrap every layer's ``flops`` so a count records (layer, input shape, flops)."""
    layers = list(model.layers) + [v for v in vars(model).values() if isinstance(v, Layer)]
    layers += list(getattr(model, "acts", {}).values())
    seen, log = set(), []
    for layer in layers:
        if id(layer) in seen:
            continue
        seen.add(id(layer))

        def wrapped(shape, _orig=layer.flops, _layer=layer):
            f, out = _orig(shape)
            log.append((_layer, shape, f))
            return f, out

        layer.flops = wrapped
    return log


def test_11_flops_monotonicity(acceptance_lines):
    with criterion(acceptance_lines, 11, "SFConv FLOPs below full conv under the rank threshold; count_flops additive"):
        checked = 0
        for model, shape in _backbones():
            log = _instrument(model)
            total = cx.count_flops(model, shape)
            assert total == sum(f for _, _, f in log)
            for layer, in_shape, _ in log:
                if not isinstance(layer, SFConv2d):
                    continue
                _, h, w = in_shape
                cfg, r = layer.cfg, layer.filter.rank
                if r < cx.rank_threshold(cfg, h, w):
                    assert cx.sfconv_flops(cfg, r, h, w) < cx.conv_flops(cfg, h, w)
                    checked += 1
        assert checked > 0


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-rA"]))
