"""Deterministic synthetic digit images for self-contained experiments.

Renders the ten digits as seven-segment glyphs on a 28x28 canvas with a
random affine warp (scale, rotation, shear, shift), variable stroke
thickness and intensity, and light pixel noise. Output is quantized to
byte levels so a round trip through the IDX writer/loader is exact.

This is a stand-in for file-based datasets when none are on disk; every
image is a pure function of the seed.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset

CANVAS = 28
CLASS_COUNT = 10

# Segment endpoints in unit glyph coordinates (x right, y down).
_SEGMENTS = {
    "A": ((0.22, 0.12), (0.78, 0.12)),
    "B": ((0.78, 0.16), (0.78, 0.46)),
    "C": ((0.78, 0.54), (0.78, 0.84)),
    "D": ((0.22, 0.88), (0.78, 0.88)),
    "E": ((0.22, 0.54), (0.22, 0.84)),
    "F": ((0.22, 0.16), (0.22, 0.46)),
    "G": ((0.27, 0.50), (0.73, 0.50)),
}

_DIGIT_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGEDC",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}

_GRID = None


def _pixel_grid() -> np.ndarray:
    global _GRID
    if _GRID is None:
        centers = (np.arange(CANVAS) + 0.5) / CANVAS
        xs, ys = np.meshgrid(centers, centers)
        _GRID = np.stack([xs.ravel(), ys.ravel()], axis=1)  # (784, 2)
    return _GRID


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to segments a->b, vectorized over segments.

    points: (p, 2); a, b: (s, 2). Returns (p, s).
    """
    ab = b - a  # (s, 2)
    ap = points[:, None, :] - a[None, :, :]  # (p, s, 2)
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)  # (s,)
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom, 0.0, 1.0)  # (p, s)
    nearest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    diff = points[:, None, :] - nearest
    return np.sqrt((diff * diff).sum(axis=2))


# Pixel values live in two dense bands: background speckle in
# [0, BACKGROUND_CEIL] and stroke ink in [STROKE_FLOOR, 1]. The empty gap
# between the bands is where a tree verifier places its thresholds, which
# keeps moderate per-pixel perturbations from rerouting its decisions --
# the same bimodality scanned-digit data shows.
BACKGROUND_CEIL = 0.06
STROKE_FLOOR = 0.62


def _render(label: int, rng: np.random.Generator) -> np.ndarray:
    """Render one jittered glyph; returns (28, 28) float64 in [0, 1]."""
    angle = rng.uniform(-0.20, 0.20)
    scale = rng.uniform(0.72, 1.04)
    shear = rng.uniform(-0.18, 0.18)
    shift = rng.uniform(-0.09, 0.09, size=2)
    half_thickness = rng.uniform(0.024, 0.040)
    intensity = rng.uniform(0.70, 0.95)

    cos, sin = np.cos(angle), np.sin(angle)
    warp = np.array([[cos, -sin], [sin, cos]]) @ np.array([[1.0, shear], [0.0, 1.0]]) * scale
    inverse = np.linalg.inv(warp)

    # Map pixel centers back into glyph coordinates.
    pts = (_pixel_grid() - 0.5 - shift) @ inverse.T + 0.5

    segs = [_SEGMENTS[s] for s in _DIGIT_SEGMENTS[label]]
    a = np.array([s[0] for s in segs])
    b = np.array([s[1] for s in segs])
    dist = _segment_distance(pts, a, b).min(axis=1).reshape(CANVAS, CANVAS)

    stroke = np.clip(intensity + rng.normal(0.0, 0.05, size=(CANVAS, CANVAS)), STROKE_FLOOR, 1.0)
    background = rng.uniform(0.0, BACKGROUND_CEIL, size=(CANVAS, CANVAS))
    img = np.where(dist <= half_thickness, stroke, background)
    return np.round(img * 255.0) / 255.0  # byte-quantized, IDX round-trip exact


def make_digits(n: int, *, seed: int, split_tag: str = "train") -> Dataset:
    """Generate a balanced, shuffled synthetic digit dataset of n images."""
    if n < 1:
        raise ValueError(f"need at least one image, got n={n}")
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(CLASS_COUNT), (n + CLASS_COUNT - 1) // CLASS_COUNT)[:n]
    rng.shuffle(labels)
    pixels = np.empty((n, 1, CANVAS, CANVAS), dtype=np.float64)
    for i, label in enumerate(labels):
        pixels[i, 0] = _render(int(label), rng)
    return Dataset(pixels=pixels, labels=labels, class_count=CLASS_COUNT, split_tag=split_tag)
