"""Sliding-window enumeration and mask-driven label assignment.

Image geometry: pixel ``i`` covers ``[i, i + 1)``. A window at grid ``(y, x)``
on a level with HW unit ``s`` is centered on pixel ``(y*s, x*s)``, i.e. at
continuous position ``(y*s + 0.5, x*s + 0.5)``. Mask sample ``v`` of that
window covers ``[c + (v - 1/2) sigma_vu, c + (v + 1/2) sigma_vu)``.

A window is positive for mask ``m`` when

1. the window's footprint contains ``m``'s tight box and ``m``'s longer side
   is at least half the window's longer side (masks below the smallest
   assignable size only need containment, and only on the smallest windows);
2. ``m``'s box center lies within one ``sigma_vu`` (L2) of the window center;
3. no other mask satisfies both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Units, centered_coords, coord_range

PIXEL_CENTER = 0.5


@dataclass(frozen=True, eq=False)
class GroundTruthInstance:
    mask: np.ndarray
    category: int
    bbox: tuple[int, int, int, int] = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2 or not m.any():
            raise ValueError("instance mask must be a nonempty 2D array")
        rows = np.flatnonzero(m.any(axis=1))
        cols = np.flatnonzero(m.any(axis=0))
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "bbox", (int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1))

    @property
    def box_center(self) -> tuple[float, float]:
        y0, x0, y1, x1 = self.bbox
        return (y0 + y1) / 2, (x0 + x1) / 2

    @property
    def longer_side(self) -> int:
        y0, x0, y1, x1 = self.bbox
        return max(y1 - y0, x1 - x0)


@dataclass(frozen=True)
class LevelGrid:
    """One pyramid level's window grid; ``units`` are the output mask units."""

    level: int
    height: int
    width: int
    units: Units
    vu_multiplier: int = 1  # bipyramid levels carry 2^k times more mask samples


@dataclass(frozen=True)
class WindowSpec:
    level: int
    y: int
    x: int
    size: tuple[int, int]
    units: Units
    size_index: int = 0

    @property
    def center(self) -> tuple[float, float]:
        s = self.units.sigma_hw
        return self.y * s + PIXEL_CENTER, self.x * s + PIXEL_CENTER

    @property
    def side(self) -> float:
        return max(self.size) * self.units.sigma_vu

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        return window_footprint(self.center, self.size, self.units.sigma_vu)


def window_footprint(center, size, sigma_vu) -> tuple[float, float, float, float]:
    (cy, cx), (V, U) = center, size
    vlo, vhi = coord_range(V)
    ulo, uhi = coord_range(U)
    return (cy + (vlo - 0.5) * sigma_vu, cx + (ulo - 0.5) * sigma_vu,
            cy + (vhi + 0.5) * sigma_vu, cx + (uhi + 0.5) * sigma_vu)


@dataclass(frozen=True, eq=False)
class Positive:
    target_mask: np.ndarray
    category: int
    target_box: tuple[int, int, int, int]
    instance: int


@dataclass(frozen=True, eq=False)
class Assignment:
    window: WindowSpec
    positive: Positive | None = None

    @property
    def is_positive(self) -> bool:
        return self.positive is not None


def enumerate_windows(levels: list[LevelGrid], window_sizes) -> list[WindowSpec]:
    """One window per (level, grid location, size), level-major then size-major."""
    out = []
    for g in levels:
        for si, s in enumerate(window_sizes):
            V, U = (s, s) if np.isscalar(s) else s
            vu = (V * g.vu_multiplier, U * g.vu_multiplier)
            for y in range(g.height):
                for x in range(g.width):
                    out.append(WindowSpec(g.level, y, x, vu, g.units, si))
    return out


def smallest_side(windows) -> float:
    return min(w.side for w in windows)


def qualify_grid(inst: GroundTruthInstance, grid: LevelGrid, vu: tuple[int, int],
                 min_side: float) -> np.ndarray:
    """Boolean ``(H, W)`` grid of windows for which ``inst`` meets containment and centrality."""
    s, svu = grid.units.sigma_hw, grid.units.sigma_vu
    cy = np.arange(grid.height)[:, None] * s + PIXEL_CENTER
    cx = np.arange(grid.width)[None, :] * s + PIXEL_CENTER
    V, U = vu
    vlo, vhi = coord_range(V)
    ulo, uhi = coord_range(U)
    y0, x0, y1, x1 = inst.bbox
    contains = ((cy + (vlo - 0.5) * svu <= y0) & (y1 <= cy + (vhi + 0.5) * svu)
                & (cx + (ulo - 0.5) * svu <= x0) & (x1 <= cx + (uhi + 0.5) * svu))
    side = max(V, U) * svu
    large_enough = inst.longer_side >= side / 2
    fallback = inst.longer_side < min_side / 2 and side == min_side
    by, bx = inst.box_center
    central = (by - cy) ** 2 + (bx - cx) ** 2 <= svu ** 2
    return contains & central & (large_enough or fallback)


def assign_grid(instances: list[GroundTruthInstance], grid: LevelGrid, vu: tuple[int, int],
                min_side: float) -> np.ndarray:
    """Instance index per window of one (level, size), ``-1`` for negatives."""
    if not instances:
        return np.full((grid.height, grid.width), -1, dtype=np.intp)
    q = np.stack([qualify_grid(m, grid, vu, min_side) for m in instances])
    return np.where(q.sum(axis=0) == 1, q.argmax(axis=0), -1)


def rasterize_target(mask: np.ndarray, center, vu, sigma_vu: float) -> np.ndarray:
    """Area-averaged coverage of ``mask`` in each window cell, values in ``[0, 1]``."""
    H, W = mask.shape

    def overlap(c, n, n_pix):
        k = centered_coords(n)
        lo = c + (k - 0.5) * sigma_vu
        hi = c + (k + 0.5) * sigma_vu
        pix = np.arange(n_pix)
        return np.clip(np.minimum(hi[:, None], pix + 1) - np.maximum(lo[:, None], pix), 0, None)

    Ay = overlap(center[0], vu[0], H)
    Ax = overlap(center[1], vu[1], W)
    return Ay @ mask.astype(np.float64) @ Ax.T / sigma_vu ** 2


def encode_box(box, center, side) -> np.ndarray:
    """``(dy, dx, log dh, log dw)`` of a box relative to a window center and side."""
    y0, x0, y1, x1 = box
    return np.array([
        ((y0 + y1) / 2 - center[0]) / side,
        ((x0 + x1) / 2 - center[1]) / side,
        np.log((y1 - y0) / side),
        np.log((x1 - x0) / side),
    ])


def decode_box(deltas, center, side) -> tuple[float, float, float, float]:
    dy, dx, lh, lw = (float(d) for d in deltas)
    cy, cx = center[0] + dy * side, center[1] + dx * side
    h, w = np.exp(np.clip(lh, -10, 10)) * side, np.exp(np.clip(lw, -10, 10)) * side
    return cy - h / 2, cx - w / 2, cy + h / 2, cx + w / 2


def assign(windows: list[WindowSpec], instances: list[GroundTruthInstance]) -> list[Assignment]:
    """Label every window positive (with targets) or negative."""
    if not windows:
        return []
    min_side = smallest_side(windows)
    groups: dict = {}
    for i, w in enumerate(windows):
        groups.setdefault((w.level, w.size_index, w.size, w.units), []).append(i)
    out: list[Assignment | None] = [None] * len(windows)
    for (level, _si, vu, units), idxs in groups.items():
        H = 1 + max(windows[i].y for i in idxs)
        W = 1 + max(windows[i].x for i in idxs)
        owner = assign_grid(instances, LevelGrid(level, H, W, units), vu, min_side)
        for i in idxs:
            w = windows[i]
            k = owner[w.y, w.x]
            if k < 0:
                out[i] = Assignment(w)
                continue
            m = instances[k]
            out[i] = Assignment(w, Positive(
                rasterize_target(m.mask, w.center, w.size, w.units.sigma_vu),
                m.category, m.bbox, int(k)))
    return out
