"""Synthetic scenes of colored disks, rectangles and triangles with occlusion.

Randomness: a 64-bit splitmix64 step turns ``(seed, stream)`` into a seed for
numpy's PCG64, so every scene is a pure function of its config and index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .assignment import GroundTruthInstance

MASK64 = (1 << 64) - 1
SUPERSAMPLE = 4


def splitmix64(x: int) -> int:
    """One splitmix64 output for state ``x`` (the state advance is included)."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *stream: int) -> int:
    s = splitmix64(seed & MASK64)
    for k in stream:
        s = splitmix64(s ^ (k & MASK64))
    return s


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *stream)))


class Shape(enum.IntEnum):
    DISK = 0
    RECTANGLE = 1
    TRIANGLE = 2


# per-class base hue in degrees; instances jitter around it
CLASS_HUES = {Shape.DISK: 0.0, Shape.RECTANGLE: 120.0, Shape.TRIANGLE: 240.0}


@dataclass(frozen=True)
class SceneConfig:
    image_size: tuple[int, int] = (64, 64)
    shapes: tuple[Shape, ...] = (Shape.DISK, Shape.RECTANGLE, Shape.TRIANGLE)
    count_range: tuple[int, int] = (1, 4)
    size_range: tuple[float, float] = (10.0, 30.0)  # longer side, pixels
    min_visible: float = 0.5  # visible fraction below which an instance is dropped
    noise: float = 0.04
    hue_jitter: float = 25.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(Shape(s) for s in self.shapes))
        lo, hi = self.count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad count range {self.count_range}")
        if not 0 < self.size_range[0] <= self.size_range[1]:
            raise ValueError(f"bad size range {self.size_range}")


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    h = (h % 360.0) / 60.0
    c = v * s
    x = c * (1 - abs(h % 2 - 1))
    i = int(h)
    rgb = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)][i % 6]
    return np.array(rgb) + (v - c)


def _sample_grid(H: int, W: int, ss: int = SUPERSAMPLE):
    off = (np.arange(ss) + 0.5) / ss
    ys = (np.arange(H)[:, None] + off[None, :]).ravel()
    xs = (np.arange(W)[:, None] + off[None, :]).ravel()
    return ys[:, None], xs[None, :]


def _coverage(inside: np.ndarray, H: int, W: int, ss: int = SUPERSAMPLE) -> np.ndarray:
    return inside.reshape(H, ss, W, ss).mean(axis=(1, 3))


def disk_coverage(H, W, cy, cx, r) -> np.ndarray:
    ys, xs = _sample_grid(H, W)
    return _coverage((ys - cy) ** 2 + (xs - cx) ** 2 <= r * r, H, W)


def rect_coverage(H, W, cy, cx, h, w, angle=0.0) -> np.ndarray:
    ys, xs = _sample_grid(H, W)
    c, s = np.cos(angle), np.sin(angle)
    dy, dx = ys - cy, xs - cx
    a = c * dy + s * dx
    b = -s * dy + c * dx
    return _coverage((np.abs(a) <= h / 2) & (np.abs(b) <= w / 2), H, W)


def triangle_coverage(H, W, pts) -> np.ndarray:
    ys, xs = _sample_grid(H, W)
    (y0, x0), (y1, x1), (y2, x2) = pts

    def edge(ya, xa, yb, xb):
        return (xb - xa) * (ys - ya) - (yb - ya) * (xs - xa)

    e = [edge(y0, x0, y1, x1), edge(y1, x1, y2, x2), edge(y2, x2, y0, x0)]
    inside = ((e[0] >= 0) & (e[1] >= 0) & (e[2] >= 0)) | ((e[0] <= 0) & (e[1] <= 0) & (e[2] <= 0))
    return _coverage(inside, H, W)


def _draw_shape(rng, shape: Shape, H, W, size):
    cy = rng.uniform(size / 2, H - size / 2) if size < H else H / 2
    cx = rng.uniform(size / 2, W - size / 2) if size < W else W / 2
    if shape is Shape.DISK:
        return disk_coverage(H, W, cy, cx, size / 2)
    if shape is Shape.RECTANGLE:
        aspect = rng.uniform(0.5, 1.0)
        h, w = (size, size * aspect) if rng.random() < 0.5 else (size * aspect, size)
        return rect_coverage(H, W, cy, cx, h, w)
    ang = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
    r = size / np.sqrt(3)
    return triangle_coverage(H, W, np.stack([cy + r * np.sin(ang), cx + r * np.cos(ang)], axis=1))


def generate_scene(cfg: SceneConfig, index: int = 0):
    """Render scene ``index`` of the dataset defined by ``cfg``.

    Returns ``(image (3, H, W), instances)``. Shapes are painted back to
    front with anti-aliased coverage; each instance keeps the pixels where
    its own coverage is at least one half and no later shape covers half.
    Instances whose visible fraction drops below ``min_visible`` (or to
    zero) are removed from the annotations but stay painted.
    """
    rng = make_rng(cfg.seed, index)
    H, W = cfg.image_size
    bg = rng.uniform(0.05, 0.25)
    image = np.full((3, H, W), bg)
    n = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    painted = []
    for _ in range(n):
        shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
        size = rng.uniform(*cfg.size_range)
        cov = _draw_shape(rng, shape, H, W, size)
        color = _hsv_to_rgb(CLASS_HUES[shape] + rng.uniform(-cfg.hue_jitter, cfg.hue_jitter),
                            rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0))
        image = image * (1 - cov) + color[:, None, None] * cov
        painted.append((shape, cov >= 0.5))
    image = image + rng.normal(0.0, cfg.noise, size=image.shape)
    instances = []
    occluder = np.zeros((H, W), dtype=bool)
    for shape, full in reversed(painted):
        vis = full & ~occluder
        occluder |= full
        area = full.sum()
        if area and vis.any() and vis.sum() >= cfg.min_visible * area:
            instances.append(GroundTruthInstance(vis, int(shape)))
    instances.reverse()
    return image, instances


def generate_dataset(cfg: SceneConfig, n: int, offset: int = 0):
    return [generate_scene(cfg, offset + i) for i in range(n)]
