import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, correlate_valid, gram_loop, layer_loss_loop, rel_err
from roadaug.errors import ContractError, InputError
from roadaug.imaging import ImageBuffer
from roadaug.numerics import autodiff as ad
from roadaug.numerics.autodiff import Tensor, grad
from roadaug.texturelab import (BankLayer, FeatureBank, GramDescriptor, TextureSynthConfig,
                                describe, extract_features, gram, layer_loss,
                                loss_gradient_analytic, make_bank, run_texture_synthesis,
                                synthesize_texture, texture_objective, total_loss)
from roadaug.toydata import road_texture


def test_default_bank_shape():
    bank = make_bank(0)
    assert [l.n_filters for l in bank.layers] == [16, 32, 32]
    assert all(l.size == 5 and l.stride == 2 for l in bank.layers)
    assert bank.min_input() == 29
    assert bank.shapes(29, 29)[-1] == (32, 1)


def test_bank_seeded_and_immutable():
    a, b = make_bank(3), make_bank(3)
    assert all(np.array_equal(x.kernels, y.kernels) for x, y in zip(a.layers, b.layers))
    assert not np.array_equal(a.layers[0].kernels, make_bank(4).layers[0].kernels)
    with pytest.raises(ValueError):
        a.layers[0].kernels[0, 0, 0, 0] = 1.0


def test_too_small_input_names_layer():
    bank = make_bank(0)
    with pytest.raises(InputError, match="layer 2"):
        extract_features(np.zeros((20, 20)), bank)
    with pytest.raises(InputError, match="layer 0"):
        extract_features(np.zeros((4, 40)), bank)


def test_zero_image_gives_zero_features():
    for F in extract_features(np.zeros((32, 32)), make_bank(1)):
        assert np.all(F == 0.0)


def test_identity_kernel_returns_image():
    bank = FeatureBank((BankLayer(np.ones((1, 1, 1, 1)), 1),))
    img = np.random.default_rng(0).random((5, 6))
    (F,) = extract_features(img, bank)
    assert np.array_equal(F, img.reshape(1, -1))


def test_features_match_nested_loop_correlation():
    bank = make_bank(seed=5, channels=(3, 4), kernel_size=3, stride=1)
    img = np.random.default_rng(2).random((8, 8))
    feats = extract_features(ImageBuffer(img), bank)
    a = img[None]
    for layer, F in zip(bank.layers, feats):
        a = np.maximum(correlate_valid(a, layer.kernels, layer.stride), 0.0)
        assert np.max(np.abs(F - a.reshape(a.shape[0], -1))) <= 1e-12
    # strided case
    bank = make_bank(seed=6, channels=(2, 3), kernel_size=3, stride=2)
    img = np.random.default_rng(3).random((11, 9))
    a = img[None]
    for layer, F in zip(bank.layers, extract_features(img, bank)):
        a = np.maximum(correlate_valid(a, layer.kernels, layer.stride), 0.0)
        assert np.max(np.abs(F - a.reshape(a.shape[0], -1))) <= 1e-12


# --- Gram and losses ---

def test_gram_examples():
    assert np.array_equal(gram(np.zeros((3, 4))), np.zeros((3, 3)))
    assert np.array_equal(gram(np.array([[1.0, 2.0], [3.0, 4.0]])), [[5, 11], [11, 25]])
    row = np.array([[1.0, -2.0, 3.0]])
    assert gram(row)[0, 0] == 14.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_gram_symmetric_psd_and_permutation_invariant(n, m, seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(n, m))
    G = gram(F)
    assert np.max(np.abs(G - G.T)) <= 1e-12
    assert np.linalg.eigvalsh(G).min() >= -1e-9
    assert np.allclose(gram(F[:, rng.permutation(m)]), G, rtol=0, atol=1e-12)


def test_layer_loss_examples():
    G = np.array([[5.0, 11.0], [11.0, 25.0]])
    assert layer_loss(G, G, 2, 2) == 0.0
    assert layer_loss(G, np.zeros((2, 2)), 2, 2) == 13.9375
    Gh = np.array([[1.0, 2.0], [2.0, 0.5]])
    assert layer_loss(3 * G, 3 * Gh, 2, 2) == pytest.approx(9 * layer_loss(G, Gh, 2, 2), rel=1e-14)
    assert layer_loss(G, Gh, 2, 2) == layer_loss(Gh, G, 2, 2)
    with pytest.raises(ContractError):
        layer_loss(G, np.zeros((3, 3)), 2, 2)


def test_loss_matches_naive_oracle():
    for seed in range(20):
        rng = np.random.default_rng([seed, 3])
        n, m = rng.integers(1, 6, size=2)
        F, Fh = np.abs(rng.normal(size=(n, m))), np.abs(rng.normal(size=(n, m)))
        assert np.allclose(gram(F), gram_loop(F), rtol=0, atol=1e-12)
        ref = layer_loss_loop(gram_loop(F), gram_loop(Fh), n, m)
        assert abs(layer_loss(gram(F), gram(Fh), n, m) - ref) <= 1e-9


def test_total_loss_examples():
    G = np.array([[5.0, 11.0], [11.0, 25.0]])
    a = GramDescriptor((G, np.array([[math.sqrt(2.0)]])), ((2, 2), (1, 1)))
    b = GramDescriptor((np.zeros((2, 2)), np.zeros((1, 1))), ((2, 2), (1, 1)))
    assert total_loss(a, a, (1.0, 1.0)) == 0.0
    assert total_loss(a, b, (1.0, 4.0)) == pytest.approx(15.9375, abs=1e-12)
    one = GramDescriptor((G,), ((2, 2),))
    zero = GramDescriptor((np.zeros((2, 2)),), ((2, 2),))
    assert total_loss(one, zero, (2.0,)) == 2 * 13.9375
    with pytest.raises(ContractError):
        total_loss(one, a, (1.0,))


def test_descriptors_from_different_input_sizes_rejected():
    bank = make_bank(0)
    with pytest.raises(ContractError):
        total_loss(describe(np.zeros((32, 32)), bank), describe(np.zeros((40, 40)), bank),
                   (1 / 3,) * 3)


# --- analytic gradient ---

def _autodiff_layer_grad(F_hat, G, n, m):
    Ft = Tensor(F_hat, requires_grad=True)
    E = ad.tsum(ad.square(Tensor(G) - Ft @ Ft.T)) / (4.0 * n * n * m * m)
    (g,) = grad(E, [Ft])
    return g.value


def test_analytic_gradient_trivial_cases():
    rng = np.random.default_rng(0)
    F = np.abs(rng.normal(size=(3, 4)))
    G = gram(F)
    assert np.all(loss_gradient_analytic(F, G, G, 3, 4) == 0.0)
    neg = -np.abs(rng.normal(size=(3, 4)))
    assert np.all(loss_gradient_analytic(neg, G + 1.0, gram(neg), 3, 4) == 0.0)


def test_analytic_gradient_dual_oracle():
    for seed in range(20):
        rng = np.random.default_rng([seed, 8])
        F_hat = rng.uniform(0.1, 2.0, size=(3, 4))
        G = gram(rng.uniform(0.0, 2.0, size=(3, 4)))
        ana = loss_gradient_analytic(F_hat, G, gram(F_hat), 3, 4)
        auto = _autodiff_layer_grad(F_hat, G, 3, 4)
        assert np.max(np.abs(ana - auto)) <= 1e-10 * max(1.0, np.abs(auto).max())
        fd = central_diff(lambda F: layer_loss(G, gram(F), 3, 4), F_hat)
        assert np.max(np.abs(ana - fd)) <= 1e-5


def test_texture_objective_gradient_matches_finite_differences():
    bank = make_bank(seed=2, channels=(3, 4), kernel_size=3, stride=2)
    for seed in range(20):
        rng = np.random.default_rng([seed, 9])
        src = rng.random((11, 11))
        target = describe(src, bank)
        fun = texture_objective(target, bank, (0.5, 0.5), (11, 11))
        x0 = rng.random(121)
        _, g = fun(x0)
        fd = central_diff(lambda x: fun(x)[0], x0)
        assert rel_err(g, fd) <= 1e-6, seed


# --- synthesis ---

def _road(side=32, seed=0):
    return ImageBuffer(road_texture(side, side, np.random.default_rng(seed)))


def test_synthesis_from_source_is_fixed_point():
    src = _road()
    bank = make_bank(0)
    res = run_texture_synthesis(src, bank, TextureSynthConfig(), x0=src.gray)
    assert res.history[0] == 0.0
    assert res.image == src


def test_synthesis_deterministic_and_shape():
    src = ImageBuffer(road_texture(30, 34, np.random.default_rng(1)))
    bank = make_bank(0)
    cfg = TextureSynthConfig(iterations=4, init_seed=11)
    a = synthesize_texture(src, bank, cfg)
    b = synthesize_texture(src, bank, cfg)
    assert a == b
    assert (a.height, a.width, a.channels) == (30, 34, 1)


def test_synthesis_reduces_loss():
    res = run_texture_synthesis(_road(), make_bank(0), TextureSynthConfig(iterations=10))
    assert np.all(np.diff(res.history) <= 0)
    assert res.history[-1] <= 0.5 * res.history[0]
    assert len(res.history) == 11


def test_synthesis_rejects_small_source():
    with pytest.raises(InputError):
        synthesize_texture(_road(20), make_bank(0), TextureSynthConfig())


def test_synth_config_validation():
    with pytest.raises(ContractError):
        TextureSynthConfig(layer_weights=(0.0, 0.0, 0.0))
    with pytest.raises(ContractError):
        TextureSynthConfig(iterations=0)
    with pytest.raises(ContractError):
        TextureSynthConfig(layer_weights=(1.0, 1.0)).weights_for(make_bank(0))
    assert TextureSynthConfig().weights_for(make_bank(0)) == (1 / 3,) * 3
