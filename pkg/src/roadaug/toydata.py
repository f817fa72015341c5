"""Small synthetic datasets used by the tests, scripts and CLI demo.

Nothing here is a stand-in for real road imagery; the generators only need to
produce deterministic, plausibly textured inputs.
"""
from __future__ import annotations

import os

import numpy as np

from .dataset import Annotation, voc_xml
from .imaging import Box2D, ImageBuffer, save_image


def blob_dataset(n=200, side=8, seed=0):
    """``n`` grayscale side x side images of a dark elliptical blob on a light road."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    out = np.empty((n, side, side))
    for i in range(n):
        cy, cx = rng.uniform(0.35, 0.65, size=2) * side
        ry, rx = rng.uniform(0.18, 0.32, size=2) * side
        depth = rng.uniform(0.35, 0.6)
        bg = rng.uniform(0.55, 0.75)
        d2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        img = bg - depth * np.exp(-d2 * 1.5) + rng.normal(0, 0.02, size=(side, side))
        out[i] = np.clip(img, 0.0, 1.0)
    return out


def road_texture(h, w, rng, channels=1):
    """Isotropic grainy asphalt-like texture in [0, 1], quantized to 8 bits."""
    base = rng.normal(0.0, 1.0, size=(h + 4, w + 4))
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    smooth = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, base)
    smooth = np.apply_along_axis(lambda c: np.convolve(c, k, mode="valid"), 0, smooth)
    fine = rng.normal(0.0, 1.0, size=(h, w))
    tex = 0.5 + 0.09 * smooth + 0.05 * fine
    tex = np.clip(tex, 0.0, 1.0)
    if channels == 3:
        tint = np.array([1.0, 0.98, 0.95])
        tex = np.clip(tex[:, :, None] * tint, 0.0, 1.0)
    return np.round(tex * 255.0) / 255.0


def paint_pothole(pixels, box, rng):
    """Darken an elliptical region inside ``box`` in place."""
    h, w = box.height, box.width
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    cy, cx = h / 2 + rng.uniform(-0.1, 0.1) * h, w / 2 + rng.uniform(-0.1, 0.1) * w
    ry, rx = h * rng.uniform(0.28, 0.38), w * rng.uniform(0.28, 0.38)
    d2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    shade = 1.0 - 0.55 * np.exp(-d2 ** 2)
    region = pixels[box.ymin:box.ymax, box.xmin:box.xmax]
    if region.ndim == 3:
        shade = shade[:, :, None]
    region *= shade
    np.round(region * 255.0, out=region)
    region /= 255.0


def write_dataset(root, layout, size=(96, 128), channels=3, seed=0):
    """Write a VOC-style dataset.

    ``layout`` maps image_id to a list of ``(label, xmin, ymin, xmax, ymax)``.
    Every box labelled ``D40`` gets a painted pothole.
    """
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "annotations"), exist_ok=True)
    h, w = size
    for i, (image_id, objects) in enumerate(sorted(layout.items())):
        rng = np.random.default_rng([seed, i])
        px = road_texture(h, w, rng, channels)
        if px.ndim == 2:
            px = px[:, :, None]
        anns = []
        for label, x0, y0, x1, y1 in objects:
            box = Box2D(x0, y0, x1, y1)
            if label == "D40":
                paint_pothole(px, box, rng)
            anns.append(Annotation(label, box))
        save_image(ImageBuffer(px), os.path.join(root, "images", f"{image_id}.png"))
        with open(os.path.join(root, "annotations", f"{image_id}.xml"), "wb") as fh:
            fh.write(voc_xml(f"{image_id}.png", w, h, channels, anns))
    return root


# Five images, seven D40 boxes in total (1 + 2 + 0 + 2 + 2), plus
# boxes of other classes that must never be extracted.
FIXTURE_LAYOUT = {
    "img_000": [("D40", 10, 12, 46, 48), ("D00", 60, 20, 110, 30)],
    "img_001": [("D40", 20, 30, 54, 66), ("D40", 70, 40, 104, 80)],
    "img_002": [("D20", 5, 5, 40, 40)],
    "img_003": [("D40", 40, 20, 80, 60), ("D40", 8, 60, 38, 90), ("D10", 90, 60, 120, 90)],
    "img_004": [("D40", 8, 50, 40, 86), ("D40", 80, 8, 116, 44), ("D43", 50, 60, 70, 80)],
}


def e2e_layout(n=15):
    """``n`` images, each with one or two D40 boxes of at least 32 px."""
    layout = {}
    for i in range(n):
        objs = [("D40", 8 + i % 5, 10 + i % 4, 44 + i % 5, 48 + i % 4)]
        if i % 3 == 0:
            objs.append(("D40", 70, 40, 104 + i % 3, 76))
        if i % 4 == 1:
            objs.append(("D00", 60, 8, 120, 20))
        layout[f"road_{i:03d}"] = objs
    return layout
