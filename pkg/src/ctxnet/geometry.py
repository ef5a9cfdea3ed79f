"""Geometric contexts: the 9 x 9 x 5 transform grid and bilinear affine warps.

Coordinates are (x, y) = (column, row) with the origin at the top-left pixel
centre; the warp pivots on the image centre (13.5, 13.5). A positive angle
rotates the content counter-clockwise as displayed (rows growing downward).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

SIDE = 28
CENTER = (SIDE - 1) / 2.0

SHIFTS = (-4.0, 0.0, 4.0)
SCALES = tuple((70.0 + 7.5 * i) / 100.0 for i in range(9))
ANGLES = (-20.0, -10.0, 0.0, 10.0, 20.0)


@dataclass(frozen=True)
class TransformParams:
    dx: float = 0.0
    dy: float = 0.0
    scale: float = 1.0
    angle: float = 0.0  # degrees


@dataclass(frozen=True)
class ContextGridSpec:
    translations: tuple = tuple((dx, dy) for dy in SHIFTS for dx in SHIFTS)
    scales: tuple = SCALES
    angles: tuple = ANGLES

    def __post_init__(self):
        if len(self.translations) != 9 or len(self.scales) != 9 or len(self.angles) != 5:
            raise ValueError("context grid needs 9 translations, 9 scales and 5 angles")
        if len(set(self.translations)) != 9 or len(set(self.scales)) != 9 or len(set(self.angles)) != 5:
            raise ValueError("context grid values must be distinct")

    @classmethod
    def from_values(cls, shifts=None, scales=None, angles=None):
        shifts = tuple(float(s) for s in shifts) if shifts is not None else SHIFTS
        if len(shifts) != 3:
            raise ValueError("need exactly 3 shift values (they form a 3x3 translation set)")
        return cls(
            translations=tuple((dx, dy) for dy in shifts for dx in shifts),
            scales=tuple(float(s) for s in scales) if scales is not None else SCALES,
            angles=tuple(float(a) for a in angles) if angles is not None else ANGLES,
        )

    def to_dict(self):
        return {"translations": [list(t) for t in self.translations],
                "scales": list(self.scales), "angles": list(self.angles)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(t) for t in d["translations"]), tuple(d["scales"]), tuple(d["angles"]))

    def bounds(self):
        dxs = [t[0] for t in self.translations]
        dys = [t[1] for t in self.translations]
        return {"dx": (min(dxs), max(dxs)), "dy": (min(dys), max(dys)),
                "scale": (min(self.scales), max(self.scales)), "angle": (min(self.angles), max(self.angles))}


DEFAULT_GRID = ContextGridSpec()
N_CONTEXTS = 405


def context_index(t: int, s: int, r: int) -> int:
    return (t * 9 + s) * 5 + r


IDENTITY_INDEX = context_index(4, 4, 2)


def context_grid(spec: ContextGridSpec = DEFAULT_GRID) -> list[TransformParams]:
    """All 405 contexts, index = (translation * 9 + scale) * 5 + angle."""
    return [TransformParams(dx, dy, s, a)
            for (dx, dy) in spec.translations for s in spec.scales for a in spec.angles]


def inverse_map(p: TransformParams) -> np.ndarray:
    """2x3 matrix taking output pixel (x, y, 1) to its source location."""
    th = math.radians(p.angle)
    c, s = math.cos(th), math.sin(th)
    inv_s = 1.0 / p.scale
    # forward: out = R S (src - centre) + centre + t, with R = [[c, s], [-s, c]]
    a00, a01 = c * inv_s, -s * inv_s
    a10, a11 = s * inv_s, c * inv_s
    ox = CENTER + p.dx
    oy = CENTER + p.dy
    return np.array([
        [a00, a01, CENTER - (a00 * ox + a01 * oy)],
        [a10, a11, CENTER - (a10 * ox + a11 * oy)],
    ])


def warp_affine(img, p: TransformParams) -> np.ndarray:
    img = np.asarray(img)
    return kernels.warp_bilinear(img[None], inverse_map(p)[None])[0]


def warp_batch(images, params) -> np.ndarray:
    """Warp images (N, 28, 28) with one TransformParams each (or one for all)."""
    images = np.asarray(images)
    if isinstance(params, TransformParams):
        inv = np.broadcast_to(inverse_map(params), (len(images), 2, 3))
    else:
        inv = np.stack([inverse_map(p) for p in params]) if len(params) else np.zeros((0, 2, 3))
    return kernels.warp_bilinear(images, inv)


def sample_params(rng: np.random.Generator, n: int, spec: ContextGridSpec = DEFAULT_GRID) -> list[TransformParams]:
    """Uniform draws over the continuous box spanned by the grid."""
    b = spec.bounds()
    cols = [rng.uniform(*b[k], size=n) for k in ("dx", "dy", "scale", "angle")]
    return [TransformParams(float(dx), float(dy), float(s), float(a)) for dx, dy, s, a in zip(*cols)]


def random_augment(img, seed, spec: ContextGridSpec = DEFAULT_GRID):
    params = sample_params(np.random.default_rng(seed), 1, spec)[0]
    return warp_affine(img, params), params


def augment_batch(images, rng: np.random.Generator, spec: ContextGridSpec = DEFAULT_GRID) -> np.ndarray:
    return warp_batch(images, sample_params(rng, len(images), spec))


def triangle_glyph(side: int = SIDE, box: int = 20, width: float = 2.0) -> np.ndarray:
    """Outlined isosceles triangle, apex up, inscribed in the central box x box square."""
    lo = (side - box) / 2.0
    hi = lo + box - 1.0
    apex = np.array([(side - 1) / 2.0, lo])
    left = np.array([lo, hi])
    right = np.array([hi, hi])
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    pts = np.stack([xs, ys], axis=-1)

    def seg_dist(a, b):
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(pts - (a + t[..., None] * ab), axis=-1)

    d = np.minimum(np.minimum(seg_dist(apex, left), seg_dist(left, right)), seg_dist(right, apex))
    img = np.clip(width / 2.0 + 0.5 - d, 0.0, 1.0)
    return img.astype(np.float32)
