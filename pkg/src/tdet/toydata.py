"""Procedural toy detection dataset: colored shapes on noisy backgrounds.

Each image carries 1-3 filled shapes (square, disk or triangle) of random
size and color over a uniform-noise background, with exact bounding-box
annotations. Everything derives from the seed, so two runs produce
byte-identical directories.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import BoxAnnotation, write_manifest
from .pnm import to_uint8
from .rng import STREAM_TOY, Xoshiro256, Xoshiro256Vec, child_seed, image_seed, mix64

_BACKGROUND_TAG = 0x0B

CLASS_NAMES = ("square", "disk", "triangle")
MAX_PLACEMENT_TRIES = 10
MAX_PAIR_IOU = 0.3


def _box_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0:
        return 0.0
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def _shape_mask(class_id: int, size: int, x0: float, y0: float, s: float) -> np.ndarray:
    """Pixels whose centers fall inside the shape inscribed in its box."""
    ys, xs = np.mgrid[0:size, 0:size]
    cx = xs + 0.5
    cy = ys + 0.5
    if class_id == 0:  # square fills the box
        return (cx >= x0) & (cx < x0 + s) & (cy >= y0) & (cy < y0 + s)
    if class_id == 1:  # disk inscribed in the box
        r = s / 2.0
        return (cx - (x0 + r)) ** 2 + (cy - (y0 + r)) ** 2 <= r * r
    # triangle: base along the bottom edge, apex at the top center
    ax, ay = x0 + s / 2.0, y0
    bx, by = x0, y0 + s
    dx, dy = x0 + s, y0 + s

    def side(px, py, x1, y1, x2, y2):
        return (px - x1) * (y2 - y1) - (py - y1) * (x2 - x1)

    s1 = side(cx, cy, ax, ay, bx, by)
    s2 = side(cx, cy, bx, by, dx, dy)
    s3 = side(cx, cy, dx, dy, ax, ay)
    return ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))


def render_image(seed: int, size: int, min_size: float, max_size: float, max_objects: int):
    """One toy image (uint8 RGB) and its annotations."""
    rng = Xoshiro256(seed)
    bg = Xoshiro256Vec(child_seed(seed, _BACKGROUND_TAG))
    # mid-gray noise band; object colors are pushed outside it below
    img = bg.uniforms(size * size * 3, 0.3, 0.7).reshape(size, size, 3).astype(np.float32)

    n_objects = 1 + rng.randint(max_objects)
    annotations = []
    for _ in range(n_objects):
        class_id = rng.randint(len(CLASS_NAMES))
        s = rng.uniform(min_size, min(max_size, size - 2.0))
        # each channel saturated toward 0 or 1, clear of the noise band
        color = np.array(
            [
                rng.uniform(0.8, 1.0) if rng.random() < 0.5 else rng.uniform(0.0, 0.2)
                for _ in range(3)
            ],
            dtype=np.float32,
        )
        placed = False
        for _try in range(MAX_PLACEMENT_TRIES):
            x0 = rng.uniform(1.0, size - 1.0 - s)
            y0 = rng.uniform(1.0, size - 1.0 - s)
            box = (x0, y0, x0 + s, y0 + s)
            if all(_box_iou(box, a.as_array()) <= MAX_PAIR_IOU for a in annotations):
                placed = True
                break
        if not placed:
            continue
        mask = _shape_mask(class_id, size, x0, y0, s)
        img[mask] = color
        annotations.append(
            BoxAnnotation(class_id=class_id, xmin=x0, ymin=y0, xmax=x0 + s, ymax=y0 + s)
        )
    return to_uint8(img), annotations


def generate_toy_dataset(out_dir: Path, num_images: int, seed: int, split: str,
                         image_size: int = 64, min_size: float = 12.0,
                         max_size: float = 32.0, max_objects: int = 3,
                         provenance: dict | None = None):
    """Render ``num_images`` images into a manifest directory."""
    split_seed = mix64(child_seed(seed, STREAM_TOY) ^ mix64(hash_split(split)))
    digits = max(5, len(str(max(num_images - 1, 0))))
    images = {}
    rows = []
    for index in range(num_images):
        name = f"img_{index:0{digits}d}.ppm"
        img, annotations = render_image(
            image_seed(split_seed, index), image_size, min_size, max_size, max_objects
        )
        images[name] = img
        rows.extend((name, ann) for ann in annotations)
    return write_manifest(Path(out_dir), images, rows, CLASS_NAMES, provenance)


def hash_split(split: str) -> int:
    """Stable 64-bit tag for a split name (no reliance on PYTHONHASHSEED)."""
    h = 1469598103934665603  # FNV-1a
    for byte in split.encode("utf-8"):
        h = ((h ^ byte) * 1099511628211) & ((1 << 64) - 1)
    return h
