"""Gram-matrix texture synthesis over a fixed, seeded convolutional filter bank.

The bank stands in for a pretrained feature extractor: cascaded valid
correlations with random kernels, each followed by a rectifier. Gradients of
the texture loss are propagated by hand (the per-layer Gram gradient plus the
transpose of each correlation), so no autodiff graph is needed here.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, InputError
from .imaging import ImageBuffer, to_gray
from .numerics.optim import LbfgsState, lbfgs_minimize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BankLayer:
    kernels: np.ndarray  # (n_out, n_in, k, k)
    stride: int = 1

    def __post_init__(self):
        k = np.array(self.kernels, dtype=np.float64)
        if k.ndim != 4 or k.shape[2] != k.shape[3]:
            raise ContractError(f"kernels must be (n_out, n_in, k, k), got {k.shape}")
        k.setflags(write=False)
        object.__setattr__(self, "kernels", k)

    @property
    def n_filters(self):
        return self.kernels.shape[0]

    @property
    def size(self):
        return self.kernels.shape[2]

    def out_size(self, h, w):
        return (h - self.size) // self.stride + 1, (w - self.size) // self.stride + 1


@dataclass(frozen=True)
class FeatureBank:
    layers: tuple
    seed: int | None = None

    def min_input(self):
        """Smallest square input side that yields at least one position per layer."""
        side = 1
        for layer in reversed(self.layers):
            side = (side - 1) * layer.stride + layer.size
        return side

    def shapes(self, h, w):
        """``[(N_l, M_l), ...]`` for an h x w input."""
        out = []
        for i, layer in enumerate(self.layers):
            if h < layer.size or w < layer.size:
                raise InputError(f"input {h}x{w} too small for bank layer {i} "
                                 f"(kernel {layer.size}; bank needs >= {self.min_input()} px)")
            h, w = layer.out_size(h, w)
            out.append((layer.n_filters, h * w))
        return out


def make_bank(seed=0, channels=(16, 32, 32), kernel_size=5, stride=2):
    """Seeded random kernels with unit fan-in variance."""
    rng = np.random.default_rng(seed)
    layers, n_in = [], 1
    for n_out in channels:
        fan_in = n_in * kernel_size * kernel_size
        k = rng.standard_normal((n_out, n_in, kernel_size, kernel_size)) / np.sqrt(fan_in)
        layers.append(BankLayer(k, stride))
        n_in = n_out
    return FeatureBank(tuple(layers), seed)


def _patches(a, k, s):
    """im2col for a (C, H, W) array: returns (C*k*k, Ho*Wo)."""
    win = sliding_window_view(a, (k, k), axis=(1, 2))[:, ::s, ::s]
    c, ho, wo = win.shape[:3]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo), (ho, wo)


def _forward(x, bank):
    a = np.asarray(x, dtype=np.float64)[None]
    bank.shapes(a.shape[1], a.shape[2])
    cache = []
    for layer in bank.layers:
        cols, (ho, wo) = _patches(a, layer.size, layer.stride)
        pre = layer.kernels.reshape(layer.n_filters, -1) @ cols
        post = np.maximum(pre, 0.0)
        cache.append((a.shape, (ho, wo), pre, post))
        a = post.reshape(layer.n_filters, ho, wo)
    return cache


def _backward_layer(layer, in_shape, out_hw, d_pre):
    """Transpose of the correlation: maps d(pre-activation) to d(input)."""
    k, s = layer.size, layer.stride
    ho, wo = out_hw
    d_cols = (layer.kernels.reshape(layer.n_filters, -1).T @ d_pre).reshape(in_shape[0], k, k, ho, wo)
    d_in = np.zeros(in_shape)
    for i in range(k):
        for j in range(k):
            d_in[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += d_cols[:, i, j]
    return d_in


def extract_features(image, bank):
    """Post-rectifier feature matrices ``F_l`` of shape (N_l, M_l)."""
    px = image.gray if isinstance(image, ImageBuffer) else np.asarray(image, dtype=np.float64)
    return [post for (_, _, _, post) in _forward(px, bank)]


def gram(F):
    F = np.asarray(F, dtype=np.float64)
    return F @ F.T


def layer_loss(G, G_hat, n, m):
    G, G_hat = np.asarray(G, dtype=np.float64), np.asarray(G_hat, dtype=np.float64)
    if G.shape != G_hat.shape:
        raise ContractError(f"Gram shapes differ: {G.shape} vs {G_hat.shape}")
    return float(np.sum((G - G_hat) ** 2) / (4.0 * n * n * m * m))


@dataclass(frozen=True)
class GramDescriptor:
    """Per-layer Gram matrices together with the (N_l, M_l) they were built from."""

    grams: tuple
    shapes: tuple

    def __len__(self):
        return len(self.grams)


def describe(image, bank):
    feats = extract_features(image, bank)
    return GramDescriptor(tuple(gram(F) for F in feats), tuple(F.shape for F in feats))


def total_loss(desc, desc_hat, weights):
    """Weighted sum of per-layer losses between two descriptors over the same bank."""
    if len(desc) != len(desc_hat) or tuple(desc.shapes) != tuple(desc_hat.shapes):
        raise ContractError(f"descriptors come from different banks/input sizes: "
                            f"{desc.shapes} vs {desc_hat.shapes}")
    if len(weights) != len(desc):
        raise ContractError(f"need {len(desc)} layer weights, got {len(weights)}")
    return float(sum(w * layer_loss(G, Gh, n, m)
                     for G, Gh, (n, m), w in zip(desc.grams, desc_hat.grams, desc.shapes, weights)))


def loss_gradient_analytic(F_hat, G, G_hat, n, m):
    """d E_l / d F_hat, gated to zero where ``F_hat`` is not positive.

    ``G`` is the source descriptor and ``G_hat`` the one of the image being
    optimized, so the gradient is ``(G_hat - G) F_hat / (N^2 M^2)``.
    """
    F_hat = np.asarray(F_hat, dtype=np.float64)
    g = (np.asarray(G_hat) - np.asarray(G)) @ F_hat / (n * n * m * m)
    return np.where(F_hat > 0, g, 0.0)


def texture_objective(target, bank, weights, shape):
    """``x -> (L(x), dL/dx)`` for flat images of ``shape`` against a target descriptor."""
    weights = [float(w) for w in weights]

    def fun(x):
        cache = _forward(np.asarray(x).reshape(shape), bank)
        loss = 0.0
        d_post = None
        for l in range(len(bank.layers) - 1, -1, -1):
            in_shape, out_hw, pre, post = cache[l]
            n, m = post.shape
            G, Gh = target.grams[l], gram(post)
            loss += weights[l] * layer_loss(G, Gh, n, m)
            d_pre = weights[l] * loss_gradient_analytic(post, G, Gh, n, m)
            if d_post is not None:
                d_pre += np.where(pre > 0, d_post, 0.0)
            d_in = _backward_layer(bank.layers[l], in_shape, out_hw, d_pre)
            d_post = d_in.reshape(in_shape[0], -1)
        return loss, d_post.reshape(-1)
    return fun


@dataclass(frozen=True)
class TextureSynthConfig:
    layer_weights: tuple | None = None
    iterations: int = 10
    init_seed: int = 0
    grad_tol: float = 1e-14
    memory: int = 10

    def __post_init__(self):
        if self.layer_weights is not None:
            w = tuple(float(v) for v in self.layer_weights)
            if any(v < 0 for v in w) or not any(v > 0 for v in w):
                raise ContractError("layer weights must be >= 0 with at least one > 0")
            object.__setattr__(self, "layer_weights", w)
        if self.iterations < 1:
            raise ContractError("texture.iterations must be >= 1")

    def weights_for(self, bank):
        if self.layer_weights is None:
            return (1.0 / len(bank.layers),) * len(bank.layers)
        if len(self.layer_weights) != len(bank.layers):
            raise ContractError(f"{len(self.layer_weights)} layer weights for a "
                                f"{len(bank.layers)}-layer bank")
        return self.layer_weights


@dataclass
class SynthesisResult:
    image: ImageBuffer
    history: list = field(default_factory=list)
    converged: bool = False
    line_search_failed: bool = False


def run_texture_synthesis(source_roi, bank, config, x0=None):
    """Optimize uniform noise (or ``x0``) until its Gram descriptor matches the source's."""
    src = to_gray(source_roi).gray
    h, w = src.shape
    bank.shapes(h, w)
    target = describe(src, bank)
    if x0 is None:
        x0 = np.random.default_rng(config.init_seed).uniform(0.0, 1.0, size=(h, w))
    x0 = np.asarray(x0, dtype=np.float64).reshape(h, w)
    fun = texture_objective(target, bank, config.weights_for(bank), (h, w))
    res = lbfgs_minimize(fun, x0.ravel(), config.iterations, config.grad_tol,
                         LbfgsState(memory=config.memory))
    if res.line_search_failed:
        warnings.warn(f"texture synthesis line search stalled after {res.iterations} "
                      f"iterations; returning best iterate", RuntimeWarning, stacklevel=2)
    # clamp only at the output so the optimizer sees a smooth objective
    out = ImageBuffer.clipped(res.x.reshape(h, w))
    return SynthesisResult(out, res.history, res.converged, res.line_search_failed)


def synthesize_texture(source_roi, bank, config, x0=None):
    return run_texture_synthesis(source_roi, bank, config, x0).image
