import math

import numpy as np
import pytest

from oracles import central_difference, rel_error, singular_values_oracle
from sfconv import regularizer as reg
from sfconv.factorized import FactorizedFilter, init_factorized, matrix_to_p, spectrum_view
from sfconv.nn.ops import ConvConfig
from sfconv.regularizer import (
    DeadLayerError,
    RegularizerConfig,
    Spectrum,
    combine_loss,
    kl_to_uniform,
    matrix_kl,
    matrix_kl_gradient,
    normalize_spectrum,
)


def spec(values):
    v = np.asarray(values, float)
    return Spectrum(values=v, raw=v)


def kl_oracle(a):
    s = singular_values_oracle(a)
    s = np.maximum(s, 1e-12 * s[0])
    s = s / s.sum()
    return sum(si * math.log(si * s.size) for si in s)


def test_normalize_examples():
    np.testing.assert_allclose(normalize_spectrum([3, 2, 1]).values, [0.5, 1 / 3, 1 / 6], atol=1e-15)
    assert normalize_spectrum([5.0]).values.tolist() == [1.0]
    np.testing.assert_allclose(normalize_spectrum([2.0] * 4).values, [0.25] * 4)


def test_normalize_sums_to_one(rng):
    for _ in range(20):
        s = normalize_spectrum(np.sort(rng.random(int(rng.integers(1, 12))))[::-1])
        assert abs(s.values.sum() - 1.0) <= 1e-12 and np.all(s.values >= 0)


def test_normalize_errors():
    with pytest.raises(DeadLayerError):
        normalize_spectrum([0.0, 0.0])
    with pytest.raises(ValueError):
        normalize_spectrum([1.0, -0.1])


def test_uniform_reference():
    np.testing.assert_array_equal(reg.UniformReference(4).values, [0.25] * 4)
    with pytest.raises(ValueError):
        reg.UniformReference(0)


def test_kl_examples():
    for n in (1, 2, 7, 30):
        assert kl_to_uniform(normalize_spectrum(np.ones(n))) == 0.0
    expected = 0.7 * math.log(2.1) + 0.2 * math.log(0.6) + 0.1 * math.log(0.3)
    assert kl_to_uniform(spec([0.7, 0.2, 0.1])) == pytest.approx(expected, abs=1e-15)
    one_hot = kl_to_uniform(normalize_spectrum([1.0, 0.0, 0.0]))
    assert one_hot == pytest.approx(math.log(3), abs=1e-9) and one_hot <= math.log(3)


def test_kl_bounds(rng):
    for _ in range(200):
        n = int(rng.integers(1, 20))
        raw = np.sort(rng.exponential(size=n) ** rng.uniform(0.1, 6))[::-1]
        kl = kl_to_uniform(normalize_spectrum(raw))
        assert 0.0 <= kl <= math.log(n) + 1e-15
        s = normalize_spectrum(raw).values
        if kl == 0.0:
            assert np.max(np.abs(s - 1 / n)) < 1e-10


def test_kl_zero_iff_uniform():
    assert kl_to_uniform(spec([0.5, 0.5])) == 0.0
    assert kl_to_uniform(spec([0.5 + 1e-6, 0.5 - 1e-6])) > 0.0


def test_scale_invariance(rng):
    for _ in range(20):
        a = rng.standard_normal((12, 5))
        c = float(np.exp(rng.uniform(-5, 5)))
        assert abs(matrix_kl(c * a) - matrix_kl(a)) <= 1e-10


def test_matrix_kl_matches_oracle_chain(rng):
    for _ in range(10):
        a = rng.standard_normal((9, 4))
        assert matrix_kl(a) == pytest.approx(kl_oracle(a), abs=1e-9)


def test_layer_kl_orthogonal_p_is_zero():
    c_out, r, k = 2, 3, 3
    m = np.zeros((c_out * k, r))
    m[:r, :r] = 2.0 * np.eye(r)
    f = FactorizedFilter(np.ones((r, 1, 1, k)), matrix_to_p(m, c_out, k), None,
                         ConvConfig.square(1, c_out, k, padding=1))
    kp, _ = reg.layer_kl(f)
    assert kp == pytest.approx(0.0, abs=1e-12)


def test_layer_kl_rank_one_p(rng):
    c_out, r, k = 4, 3, 3
    m = np.outer(rng.standard_normal(c_out * k), rng.standard_normal(r))
    f = FactorizedFilter(rng.standard_normal((r, 2, 1, k)), matrix_to_p(m, c_out, k), None,
                         ConvConfig.square(2, c_out, k, padding=1))
    kp, _ = reg.layer_kl(f)
    assert kp == pytest.approx(math.log(min(c_out * k, r)), abs=1e-9)


def test_layer_kl_composition(rng):
    f = init_factorized(3, 5, 3, r=4, rng=rng)
    view = spectrum_view(f)
    kp, kq = reg.layer_kl(f)
    assert kp == pytest.approx(kl_oracle(view.matrix_p), abs=1e-9)
    assert kq == pytest.approx(kl_oracle(view.matrix_q), abs=1e-9)


def test_network_kl(rng):
    layers = [init_factorized(3, 4, 3, r=2, rng=rng), init_factorized(4, 6, 3, r=3, rng=rng),
              init_factorized(6, 2, 5, r=2, rng=rng)]
    assert reg.network_kl([]) == (0.0, [])
    kp, kq = reg.layer_kl(layers[0])
    assert reg.network_kl(layers[:1])[0] == kp + kq
    total, breakdown = reg.network_kl(layers)
    assert len(breakdown) == 3
    assert reg.network_kl(layers + layers)[0] == pytest.approx(2 * total, abs=1e-15)
    assert reg.network_kl(layers[::-1])[0] == pytest.approx(total, abs=1e-14)


def test_gradient_12x10_finite_differences(rng):
    a = rng.standard_normal((12, 10))
    _, g = matrix_kl_gradient(a)
    fd = central_difference(matrix_kl, a)
    assert rel_error(g, fd) < 1e-5


def test_gradient_at_minimum_vanishes():
    a = np.zeros((6, 3))
    a[:3, :3] = 1.7 * np.eye(3)
    kl, g = matrix_kl_gradient(a)
    assert kl == 0.0 and np.linalg.norm(g) < 1e-8


def test_gradient_orthogonal_to_scaling(rng):
    for _ in range(10):
        a = rng.standard_normal((8, 5))
        _, g = matrix_kl_gradient(a)
        assert abs(np.sum(g * a)) < 1e-8


def test_gradient_step_decreases_kl(rng):
    for _ in range(20):
        a = rng.standard_normal((10, 4))
        kl, g = matrix_kl_gradient(a)
        assert kl > 1e-6
        assert matrix_kl(a - 1e-3 * g) < kl


def test_kl_gradient_filter_shapes(rng):
    f = init_factorized(3, 4, 3, r=2, rng=rng)
    g = reg.kl_gradient(f)
    assert g["p"].shape == f.p_filters.shape and g["q"].shape == f.q_filters.shape
    fd_p = central_difference(lambda v: sum(reg.layer_kl(f.with_params(p=v))), f.p_filters)
    fd_q = central_difference(lambda v: sum(reg.layer_kl(f.with_params(q=v))), f.q_filters)
    assert rel_error(g["p"], fd_p) < 1e-5 and rel_error(g["q"], fd_q) < 1e-5


def test_regularizer_config_rejects_negative():
    with pytest.raises(ValueError):
        RegularizerConfig(lam=-1.0)


def _state(rng):
    layers = {"c0": init_factorized(3, 4, 3, r=2, rng=rng), "c1": init_factorized(4, 4, 3, r=2, rng=rng)}
    grads = {"c0.q": rng.standard_normal((2, 3, 1, 3)), "c0.p": rng.standard_normal((4, 2, 3, 1)),
             "c0.bias": rng.standard_normal(4), "fc.weight": rng.standard_normal((3, 4))}
    return layers, grads


def test_combine_loss_lambda_zero(rng):
    layers, grads = _state(rng)
    report, out = combine_loss(1.25, grads, layers, RegularizerConfig(0.0))
    assert report.total == 1.25 and report.kl_term > 0
    assert out.keys() == grads.keys()
    assert all(out[k] is grads[k] for k in grads)


def test_combine_loss_zero_task(rng):
    layers, grads = _state(rng)
    report, _ = combine_loss(0.0, grads, layers, RegularizerConfig(5.0))
    assert report.total == pytest.approx(5.0 * report.kl_term, abs=1e-12)


def test_combine_loss_linear_in_lambda(rng):
    layers, grads = _state(rng)
    r5, g5 = combine_loss(0.3, grads, layers, RegularizerConfig(5.0))
    r10, _ = combine_loss(0.3, grads, layers, RegularizerConfig(10.0))
    assert r5.kl_term == r10.kl_term
    assert r10.total - r5.total == pytest.approx(5.0 * r5.kl_term, abs=1e-12)
    assert abs(r5.total - (r5.task_loss + r5.lam * r5.kl_term)) <= 1e-12
    # regularizer touches only factorized weights
    assert g5["c0.bias"] is grads["c0.bias"] and g5["fc.weight"] is grads["fc.weight"]
    assert set(g5) == set(grads) | {"c1.p", "c1.q"}
    np.testing.assert_allclose(g5["c0.p"], grads["c0.p"] + 5.0 * reg.kl_gradient(layers["c0"])["p"])
    assert [b[0] for b in r5.breakdown] == ["c0", "c1"]
    assert r5.row(3) == {"step": 3, "task_loss": 0.3, "kl_term": r5.kl_term, "lambda": 5.0, "total": r5.total}
