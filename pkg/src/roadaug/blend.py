"""Severity-weighted mixing and Poisson (gradient-domain) embedding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError, NumericalError
from .imaging import Box2D, ImageBuffer, to_gray
from .numerics.optim import cg_solve

DEFAULT_PRESETS = (("mild", 0.25), ("moderate", 0.50), ("severe", 0.75))
SEVERITY_ORDER = ("mild", "moderate", "severe")


@dataclass(frozen=True)
class SeverityPreset:
    label: str
    alpha: float
    beta: float


def make_presets(table=DEFAULT_PRESETS):
    """Validate ``(label, alpha)`` pairs; beta is ``1 - alpha``."""
    presets, seen = [], set()
    for label, alpha in table:
        alpha = float(alpha)
        if not label:
            raise ContractError("preset labels must be non-empty")
        if label in seen:
            raise ContractError(f"duplicate severity label {label!r}")
        if not 0.0 <= alpha <= 1.0:
            raise ContractError(f"alpha for {label!r} must lie in [0, 1], got {alpha}")
        seen.add(label)
        presets.append(SeverityPreset(label, alpha, 1.0 - alpha))
    named = [p for lab in SEVERITY_ORDER for p in presets if p.label == lab]
    if any(a.alpha >= b.alpha for a, b in zip(named, named[1:])):
        raise ContractError("alpha must increase from mild to moderate to severe")
    return presets


def weighted_mix(generated, texture, alpha, beta):
    """``alpha * generated + beta * texture``, clamped to [0, 1]."""
    if alpha < 0 or beta < 0:
        raise ContractError("mix weights must be >= 0")
    if generated.pixels.shape != texture.pixels.shape:
        raise ContractError(f"mix inputs differ in shape: {generated.pixels.shape} vs {texture.pixels.shape}")
    return ImageBuffer.clipped(alpha * generated.pixels + beta * texture.pixels)


def _laplacian(u):
    """5-point Laplacian (positive-definite sign) with zero Dirichlet padding."""
    out = 4.0 * u
    out[1:, :] -= u[:-1, :]
    out[:-1, :] -= u[1:, :]
    out[:, 1:] -= u[:, :-1]
    out[:, :-1] -= u[:, 1:]
    return out


def poisson_rhs(target, patch, mixed_gradients=False):
    """Right-hand side for the interior of ``patch``'s box.

    ``target`` and ``patch`` are 2-D arrays over the box (border included).
    For each interior pixel p: sum over 4-neighbours q of the guidance
    v_pq (patch difference p - q, or the larger-magnitude of the patch and
    target differences with mixed gradients), plus Dirichlet values of border
    neighbours taken from ``target``.
    """
    h, w = patch.shape
    c = (slice(1, h - 1), slice(1, w - 1))
    b = np.zeros((h - 2, w - 2))
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        q = (slice(1 + dy, h - 1 + dy), slice(1 + dx, w - 1 + dx))
        v = patch[c] - patch[q]
        if mixed_gradients:
            vt = target[c] - target[q]
            v = np.where(np.abs(vt) > np.abs(v), vt, v)
        b += v
    # Dirichlet contributions from the ring
    b[0, :] += target[0, 1:w - 1]
    b[-1, :] += target[h - 1, 1:w - 1]
    b[:, 0] += target[1:h - 1, 0]
    b[:, -1] += target[1:h - 1, w - 1]
    return b


def solve_poisson(target, patch, tol=1e-8, mixed_gradients=False):
    """Interior solution for one channel; returns (values, CgResult)."""
    b = poisson_rhs(target, patch, mixed_gradients)
    n = b.size
    res = cg_solve(_laplacian, b, tol=tol, max_iter=10 * n)
    if not res.converged:
        raise NumericalError(f"Poisson CG did not converge: residual {res.residual_norm:.3e} "
                             f"> {tol:.1e} * ||b|| after {res.iterations} iterations")
    return res.x, res


def poisson_blend(target, patch, box, tol=1e-8, mixed_gradients=False):
    """Embed a 1-channel ``patch`` into ``target`` at ``box`` by seamless cloning.

    The outer ring of the box is the Dirichlet boundary; only the strict
    interior changes. Each target channel is solved separately with its own
    boundary, so a gray patch inherits the road colour from the ring.
    """
    box.validate(target.width, target.height)
    if box.xmin < 1 or box.ymin < 1 or box.xmax > target.width - 1 or box.ymax > target.height - 1:
        raise InputError(f"box {box} must keep a 1-pixel margin inside the {target.width}x{target.height} image")
    patch = to_gray(patch)
    if (patch.height, patch.width) != (box.height, box.width):
        raise ContractError(f"patch {patch.height}x{patch.width} does not match box {box.height}x{box.width}")
    out = target.pixels.copy()
    if box.height < 3 or box.width < 3:
        return ImageBuffer(out)
    src = patch.gray
    for ch in range(target.channels):
        region = target.pixels[box.ymin:box.ymax, box.xmin:box.xmax, ch]
        x, _ = solve_poisson(region, src, tol, mixed_gradients)
        out[box.ymin + 1:box.ymax - 1, box.xmin + 1:box.xmax - 1, ch] = np.clip(x, 0.0, 1.0)
    return ImageBuffer(out)


__all__ = ["SeverityPreset", "make_presets", "weighted_mix", "poisson_blend", "poisson_rhs",
           "solve_poisson", "Box2D", "DEFAULT_PRESETS"]
