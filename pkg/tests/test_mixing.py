import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from logitmixoe.mixing import (
    MixSpec, draw_lambdas, mix_inputs, mix_label_with_uniform, mix_logits, pair_with_outliers,
    sample_lambda, sample_lambdas,
)
from logitmixoe.tensor import Tensor, backward

unit = st.floats(0.0, 1.0)


def test_uniform_case_mean():
    lam = sample_lambdas(1.0, np.random.default_rng(0), 100_000)
    assert 0.49 <= lam.mean() <= 0.51


@pytest.mark.parametrize("alpha", [0.05, 0.2, 1.0, 2.5, 40.0])
def test_support_and_variance(alpha):
    lam = sample_lambdas(alpha, np.random.default_rng(1), 100_000)
    assert lam.min() >= 0.0 and lam.max() <= 1.0
    target = 1.0 / (4.0 * (2.0 * alpha + 1.0))
    assert abs(lam.var() / target - 1.0) < 0.1


@pytest.mark.parametrize("alpha", [0.2, 1.0, 2.5])
def test_distribution_matches_reference_sampler(alpha):
    ours = sample_lambdas(alpha, np.random.default_rng(2), 20_000)
    ref = np.random.default_rng(3).beta(alpha, alpha, 20_000)
    assert stats.ks_2samp(ours, ref).pvalue > 1e-3
    assert stats.kstest(ours, stats.beta(alpha, alpha).cdf).pvalue > 1e-3


def test_tiny_alpha_does_not_produce_nan():
    lam = sample_lambdas(1e-3, np.random.default_rng(4), 10_000)
    assert np.all(np.isfinite(lam))
    # mass piles up at the endpoints
    assert np.mean((lam < 0.01) | (lam > 0.99)) > 0.9


def test_sampler_is_seeded():
    a = sample_lambdas(0.7, np.random.default_rng(5), 50)
    b = sample_lambdas(0.7, np.random.default_rng(5), 50)
    np.testing.assert_array_equal(a, b)
    assert isinstance(sample_lambda(1.0, np.random.default_rng(0)), float)


def test_bad_alpha():
    with pytest.raises(ValueError):
        sample_lambdas(0.0, np.random.default_rng(0), 3)
    with pytest.raises(ValueError):
        MixSpec(alpha=-1.0)
    with pytest.raises(ValueError):
        MixSpec(beta_weight=-0.5)
    with pytest.raises(ValueError):
        MixSpec(lambda_policy="per_epoch")


def test_mix_inputs_examples():
    xi, xj = np.array([0.0, 2.0]), np.array([2.0, 0.0])
    np.testing.assert_array_equal(mix_inputs(xi, xj, 1.0), xi)
    np.testing.assert_array_equal(mix_inputs(xi, xj, 0.0), xj)
    np.testing.assert_array_equal(mix_inputs(xi, xj, 0.5), [1.0, 1.0])


def test_mix_inputs_per_row():
    xi, xj = np.ones((3, 2)), np.zeros((3, 2))
    np.testing.assert_array_equal(mix_inputs(xi, xj, np.array([1.0, 0.5, 0.0])),
                                  [[1, 1], [0.5, 0.5], [0, 0]])
    with pytest.raises(ValueError):
        mix_inputs(xi, xj, np.array([0.5, 0.5]))


def test_lambda_out_of_range():
    for lam in (-0.1, 1.1, float("nan")):
        with pytest.raises(ValueError):
            mix_inputs(np.ones(2), np.ones(2), lam)
    with pytest.raises(ValueError):
        mix_inputs(np.ones(2), np.ones(3), 0.5)


def test_mix_label_examples():
    np.testing.assert_array_equal(mix_label_with_uniform([0, 1, 0, 0], 0.0), [0.25] * 4)
    np.testing.assert_array_equal(mix_label_with_uniform([0, 1, 0, 0], 1.0), [0, 1, 0, 0])
    np.testing.assert_array_equal(mix_label_with_uniform([1, 0], 0.5), [0.75, 0.25])
    with pytest.raises(ValueError):
        mix_label_with_uniform([0.5, 0.5], 0.5)


@given(unit, st.integers(2, 10), st.integers(0, 9))
def test_mixed_label_is_distribution(lam, k, c):
    y = np.eye(k)[c % k]
    m = mix_label_with_uniform(y, lam)
    assert abs(m.sum() - 1.0) < 1e-12 and m.min() >= 0.0
    assert m[c % k] == pytest.approx(lam + (1 - lam) / k, abs=1e-15)


def test_mix_logits_examples():
    np.testing.assert_array_equal(mix_logits([4.0, 0.0], [0.0, 4.0], 0.25).data, [1.0, 3.0])
    f = np.array([1.5, -2.0])
    np.testing.assert_array_equal(mix_logits(f, np.zeros(2), 1.0).data, f)


@given(unit)
def test_mix_logits_fixed_point(lam):
    f = np.array([0.3, -1.7, 2.2])
    np.testing.assert_allclose(mix_logits(f, f, lam).data, f, rtol=0, atol=1e-15)


def test_mix_logits_gradient_flows_to_both():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0], requires_grad=True)
    backward(mix_logits(a, b, 0.25).sum())
    np.testing.assert_array_equal(a.grad, [0.25, 0.25])
    np.testing.assert_array_equal(b.grad, [0.75, 0.75])


def test_draw_lambdas_policies():
    rng = np.random.default_rng(0)
    lam, lam_l = draw_lambdas(MixSpec(), rng, 8)
    assert isinstance(lam, float) and lam == lam_l
    lam, lam_l = draw_lambdas(MixSpec(lambda_policy="per_sample"), rng, 8)
    assert lam.shape == (8,) and lam is lam_l
    lam, lam_l = draw_lambdas(MixSpec(share_lambda_across_spaces=False), rng, 8)
    assert lam != lam_l


def test_pair_with_outliers():
    rng = np.random.default_rng(0)
    x = np.arange(8.0).reshape(4, 2)
    y = np.eye(3)[[0, 1, 2, 0]]
    aux = 100.0 + np.arange(20.0).reshape(10, 2)
    pair, x_out = pair_with_outliers(MixSpec(), rng, x, y, np.arange(4), aux)
    np.testing.assert_array_equal(x_out, aux[pair.source_out_index])
    np.testing.assert_allclose(pair.mixed_input, pair.lam * x + (1 - pair.lam) * x_out, atol=0)
    np.testing.assert_allclose(pair.mixed_label.sum(axis=1), 1.0, atol=1e-15)
