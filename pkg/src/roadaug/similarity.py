"""Global-statistics SSIM and exhaustive gallery matching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError
from .imaging import gray_square


@dataclass(frozen=True)
class SsimParams:
    c1: float = 0.01
    c2: float = 0.03
    side: int = 32
    # (K * L)^2 reading of the constants, as in windowed SSIM; off by default
    conventional_constants: bool = False

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ContractError("ssim.c1 and ssim.c2 must be > 0")
        if self.side < 2:
            raise ContractError("ssim.side must be >= 2")

    @property
    def constants(self):
        if self.conventional_constants:
            return self.c1 ** 2, self.c2 ** 2
        return self.c1, self.c2


def ssim_arrays(x, y, c1, c2):
    """SSIM of two equally-sized arrays from population moments over all pixels."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy = np.mean(dx * dx), np.mean(dy * dy)
    cxy = np.mean(dx * dy)
    return float((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))


def prepare(image, params):
    return gray_square(image, params.side)


def ssim(x, y, params=SsimParams()):
    if x.height * x.width == 0 or y.height * y.width == 0:
        raise ContractError("ssim needs non-empty images")
    c1, c2 = params.constants
    return ssim_arrays(prepare(x, params), prepare(y, params), c1, c2)


def match_roi(original, gallery, params=SsimParams(), candidates=None):
    """Return ``(roi_id, score, index)`` of the gallery entry most similar to ``original``.

    Ties go to the lowest manifest index. ``candidates`` may supply the gallery
    images already loaded (same order as ``gallery.entries``) or already
    prepared as side x side arrays.
    """
    if gallery is None or len(gallery) == 0:
        root = getattr(gallery, "root", "<none>")
        raise InputError(f"gallery is empty: {root}")
    if candidates is None:
        from .ganlab import load_gallery_images
        candidates = load_gallery_images(gallery)
    c1, c2 = params.constants
    ref = prepare(original, params)
    best = None
    for k, cand in enumerate(candidates):
        arr = cand if isinstance(cand, np.ndarray) else prepare(cand, params)
        score = ssim_arrays(ref, arr, c1, c2)
        # order-independent reduction: max over (score, -index)
        key = (score, -k)
        if best is None or key > best:
            best = key
    score, neg_k = best
    return gallery.entries[-neg_k].roi_id, score, -neg_k
