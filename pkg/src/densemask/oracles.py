"""Slow reference implementations used to cross-check the transforms.

These are written as explicit per-element loops straight from the index
formulas and share no code path with the vectorized kernels, apart from the
naive swap composition, which is by definition built from the unfused ops.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .core import Repr, StructuredTensor, Units, centered_coords, coord_range
from .transforms import Interp, subsample_hw, up_align2nat


def _read(t: StructuredTensor, v, u, y, x, fill):
    V, U, H, W = t.shape
    vlo, vhi = coord_range(V)
    ulo, uhi = coord_range(U)
    if vlo <= v <= vhi and ulo <= u <= uhi and 0 <= y < H and 0 <= x < W:
        return t.index(v, u, y, x)
    return fill


def align2nat_bruteforce(t: StructuredTensor, fill: float = 0.0) -> StructuredTensor:
    a = round(t.units.alpha)
    V, U, H, W = t.shape
    out = np.empty(t.shape)
    for iv, v in enumerate(centered_coords(V)):
        for iu, u in enumerate(centered_coords(U)):
            for y in range(H):
                for x in range(W):
                    out[iv, iu, y, x] = _read(t, v, u, y + a * v, x + a * u, fill)
    return StructuredTensor(out, Repr.NATURAL, t.units)


def nat2align_bruteforce(t: StructuredTensor, fill: float = 0.0) -> StructuredTensor:
    a = round(t.units.alpha)
    V, U, H, W = t.shape
    out = np.empty(t.shape)
    for iv, v in enumerate(centered_coords(V)):
        for iu, u in enumerate(centered_coords(U)):
            for y in range(H):
                for x in range(W):
                    out[iv, iu, y, x] = _read(t, v, u, y - a * v, x - a * u, fill)
    return StructuredTensor(out, Repr.ALIGNED, t.units)


def align2nat_general_bruteforce(t: StructuredTensor, target: Units, shape=None,
                                 fill: float = 0.0) -> StructuredTensor:
    """Evaluate the unit-aware transform with exact rational arithmetic."""
    src = t.units
    rv = Fraction(target.sigma_vu) / Fraction(src.sigma_vu)
    rh = Fraction(target.sigma_hw) / Fraction(src.sigma_hw)
    rc = Fraction(target.sigma_vu) / Fraction(src.sigma_hw)
    V, U, H, W = shape or t.shape
    out = np.empty((V, U, H, W))
    for iv, v in enumerate(centered_coords(V)):
        for iu, u in enumerate(centered_coords(U)):
            for y in range(H):
                for x in range(W):
                    coords = (rv * int(v), rv * int(u), rh * y + rc * int(v), rh * x + rc * int(u))
                    if any(c.denominator != 1 for c in coords):
                        raise ValueError("non-integral source coordinate")
                    out[iv, iu, y, x] = _read(t, *(int(c) for c in coords), fill)
    return StructuredTensor(out, Repr.NATURAL, target)


def swap_align2nat_naive(t: StructuredTensor, lam: int, interp: Interp = Interp.BILINEAR,
                         fill: float = 0.0) -> StructuredTensor:
    """The unfused two-op path, materializing the ``(lam*V, lam*U, H, W)`` tensor."""
    return subsample_hw(up_align2nat(t, lam, interp, fill), lam)


def _round_half_up(q: Fraction) -> int:
    return math.floor(q + Fraction(1, 2))


def instancefcn_direct(g: StructuredTensor, V: int, U: int,
                       fill: float = 0.0) -> StructuredTensor:
    """Direct construction ``F(v,u,y,x) = G([K/V v], [K/U u], y+v, x+u)``."""
    K1, K2, H, W = g.shape
    klo1, khi1 = coord_range(K1)
    klo2, khi2 = coord_range(K2)
    out = np.empty((V, U, H, W))
    for iv, v in enumerate(centered_coords(V)):
        bv = min(max(_round_half_up(Fraction(K1 * int(v), V)), klo1), khi1)
        for iu, u in enumerate(centered_coords(U)):
            bu = min(max(_round_half_up(Fraction(K2 * int(u), U)), klo2), khi2)
            for y in range(H):
                for x in range(W):
                    out[iv, iu, y, x] = _read(g, bv, bu, y + int(v), x + int(u), fill)
    units = Units(g.units.sigma_hw, g.units.sigma_hw)
    return StructuredTensor(out, Repr.NATURAL, units)


def inverse_pair_valid_set(alpha: int, shape) -> np.ndarray:
    """Boolean mask of coordinates where nat2align(align2nat(F)) reproduces F.

    ``align2nat`` then ``nat2align`` at aligned coordinate ``(v,u,y,x)`` reads
    the natural sample at ``(y - a*v, x - a*u)``, which in turn read the aligned
    sample at ``(y, x)``. Only the first hop can leave the domain.
    """
    V, U, H, W = shape
    ok = np.zeros(shape, dtype=bool)
    for iv, v in enumerate(centered_coords(V)):
        for iu, u in enumerate(centered_coords(U)):
            for y in range(H):
                for x in range(W):
                    ok[iv, iu, y, x] = 0 <= y - alpha * v < H and 0 <= x - alpha * u < W
    return ok
