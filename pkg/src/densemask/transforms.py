"""Coordinate and resolution transforms between natural and aligned tensors.

Two layers live here. The array kernels (``shift_vu``, ``upsample_vu``,
``swap_fused`` and their adjoints) work on ``(..., V, U, H, W)`` arrays with any
number of leading batch axes and are what the network layers call. The
:class:`~densemask.core.StructuredTensor` functions (``align2nat``,
``up_align2nat``, ``swap_align2nat``, ...) check representation tags and
units and keep the unit bookkeeping honest.

Every forward op has a ``*_backward`` partner returning the exact adjoint.
Out-of-range reads produce ``fill`` in the forward pass and contribute zero
gradient.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import Repr, StructuredTensor, Units, as_positive_int, centered_coords, coord_range

# upsample_vu processes this many output elements per chunk
_CHUNK_ELEMS = 1 << 22


class Interp(enum.Enum):
    BILINEAR = "bilinear"
    NEAREST = "nearest"


@dataclass(frozen=True)
class TransformConfig:
    lam: int = 1
    fill: float = 0.0
    interpolation: Interp = Interp.BILINEAR

    def __post_init__(self):
        if int(self.lam) != self.lam or self.lam < 1:
            raise ValueError(f"lambda must be a positive integer, got {self.lam}")


# ---------------------------------------------------------------------------
# array kernels
# ---------------------------------------------------------------------------


class AxisPlan(NamedTuple):
    """Per-output-sample source indices and weight along one VU axis."""

    i0: np.ndarray
    i1: np.ndarray
    w: np.ndarray


def axis_plan(n_src: int, lam: int, interp: Interp = Interp.BILINEAR) -> AxisPlan:
    """Map the ``lam * n_src`` centered output samples onto ``n_src`` source samples.

    Output coordinate ``v`` reads source coordinate ``v / lam``, clamped to the
    source range, so the center sample always maps onto the source center.
    """
    lo, hi = coord_range(n_src)
    s = np.clip(centered_coords(lam * n_src) / lam, lo, hi)
    if interp is Interp.NEAREST:
        f = np.clip(np.floor(s + 0.5), lo, hi).astype(np.intp)
        idx = f + n_src // 2
        return AxisPlan(idx, idx, np.zeros(len(s)))
    f = np.floor(s)
    w = s - f
    f = f.astype(np.intp)
    f1 = np.minimum(f + 1, hi)
    return AxisPlan(f + n_src // 2, f1 + n_src // 2, w)


def plan_matrix(plan: AxisPlan, n_src: int) -> np.ndarray:
    """Dense ``(n_out, n_src)`` interpolation matrix equivalent to ``plan``."""
    n_out = len(plan.w)
    A = np.zeros((n_out, n_src))
    rows = np.arange(n_out)
    np.add.at(A, (rows, plan.i0), 1.0 - plan.w)
    np.add.at(A, (rows, plan.i1), plan.w)
    return A


def _lerp2(a00, a01, a10, a11, wv, wu):
    # the single expression shared by the fused and naive paths
    top = a00 * (1.0 - wu) + a01 * wu
    bot = a10 * (1.0 - wu) + a11 * wu
    return top * (1.0 - wv) + bot * wv


def shift_vu(a: np.ndarray, kv: int, ku: int, fill: float = 0.0) -> np.ndarray:
    """``out[..., v, u, y, x] = a[..., v, u, y + kv*v, x + ku*u]`` with ``fill`` outside."""
    V, U, H, W = a.shape[-4:]
    tmp = np.full(a.shape, fill, dtype=np.float64)
    for iv, v in enumerate(centered_coords(V)):
        d = kv * int(v)
        lo, hi = max(0, -d), min(H, H - d)
        if lo < hi:
            tmp[..., iv, :, lo:hi, :] = a[..., iv, :, lo + d:hi + d, :]
    out = np.full(a.shape, fill, dtype=np.float64)
    for iu, u in enumerate(centered_coords(U)):
        d = ku * int(u)
        lo, hi = max(0, -d), min(W, W - d)
        if lo < hi:
            out[..., :, iu, :, lo:hi] = tmp[..., :, iu, :, lo + d:hi + d]
    return out


def upsample_vu(a: np.ndarray, lam: int, interp: Interp = Interp.BILINEAR) -> np.ndarray:
    """Upsample the VU axes by ``lam``; output ``(..., lam*V, lam*U, H, W)``."""
    V, U, H, W = a.shape[-4:]
    pv, pu = axis_plan(V, lam, interp), axis_plan(U, lam, interp)
    lead = a.shape[:-4]
    out = np.empty(lead + (lam * V, lam * U, H, W))
    rows = max(1, _CHUNK_ELEMS // max(1, out[..., 0, :, :, :].size))
    wu = pu.w[:, None, None]
    for r0 in range(0, lam * V, rows):
        r = slice(r0, min(lam * V, r0 + rows))
        iv0 = pv.i0[r][:, None]
        if interp is Interp.NEAREST:
            out[..., r, :, :, :] = a[..., iv0, pu.i0[None, :], :, :]
            continue
        iv1 = pv.i1[r][:, None]
        wv = pv.w[r][:, None, None, None]
        out[..., r, :, :, :] = _lerp2(
            a[..., iv0, pu.i0[None, :], :, :],
            a[..., iv0, pu.i1[None, :], :, :],
            a[..., iv1, pu.i0[None, :], :, :],
            a[..., iv1, pu.i1[None, :], :, :],
            wv,
            wu,
        )
    return out


def upsample_vu_adjoint(g: np.ndarray, src_vu: tuple[int, int], lam: int,
                        interp: Interp = Interp.BILINEAR) -> np.ndarray:
    V, U = src_vu
    Av = plan_matrix(axis_plan(V, lam, interp), V)
    Au = plan_matrix(axis_plan(U, lam, interp), U)
    return np.einsum("pv,qu,...pqyx->...vuyx", Av, Au, g, optimize=True)


def subsample(a: np.ndarray, factor: int) -> np.ndarray:
    H, W = a.shape[-2:]
    if H % factor or W % factor:
        raise ValueError(f"HW shape {(H, W)} not divisible by {factor}")
    return np.ascontiguousarray(a[..., ::factor, ::factor])


def subsample_adjoint(g: np.ndarray, factor: int) -> np.ndarray:
    h, w = g.shape[-2:]
    out = np.zeros(g.shape[:-2] + (h * factor, w * factor))
    out[..., ::factor, ::factor] = g
    return out


class _SwapPlan(NamedTuple):
    corners: list  # [(flat source index, weight)] per corner, broadcast to output
    valid: np.ndarray


def _swap_plan(shape, lam: int, interp: Interp) -> _SwapPlan:
    V, U, H, W = shape
    if H % lam or W % lam:
        raise ValueError(f"HW shape {(H, W)} not divisible by lambda={lam}")
    pv, pu = axis_plan(V, lam, interp), axis_plan(U, lam, interp)
    v = centered_coords(lam * V)[:, None, None, None]
    u = centered_coords(lam * U)[None, :, None, None]
    y = lam * np.arange(H // lam)[None, None, :, None] + v
    x = lam * np.arange(W // lam)[None, None, None, :] + u
    valid = (y >= 0) & (y < H) & (x >= 0) & (x < W)
    valid = np.broadcast_to(valid, (lam * V, lam * U, H // lam, W // lam))
    yx = np.clip(y, 0, H - 1) * W + np.clip(x, 0, W - 1)

    def flat(iv, iu):
        return (iv[:, None, None, None] * U + iu[None, :, None, None]) * (H * W) + yx

    wv = pv.w[:, None, None, None]
    wu = pu.w[None, :, None, None]
    if interp is Interp.NEAREST:
        return _SwapPlan([(flat(pv.i0, pu.i0), None)], valid)
    corners = [
        (flat(pv.i0, pu.i0), (1.0 - wv) * (1.0 - wu)),
        (flat(pv.i0, pu.i1), (1.0 - wv) * wu),
        (flat(pv.i1, pu.i0), wv * (1.0 - wu)),
        (flat(pv.i1, pu.i1), wv * wu),
    ]
    return _SwapPlan(corners, valid)


def swap_fused(a: np.ndarray, lam: int, interp: Interp = Interp.BILINEAR,
               fill: float = 0.0) -> np.ndarray:
    """Fused upsample-VU / align2nat / subsample-HW in O(V*U*H*W).

    Reads only the source samples each output element needs and evaluates the
    same interpolation expression as the unfused path, so results are
    bit-identical to ``subsample(shift_vu(upsample_vu(a, lam), 1, 1), lam)``.
    """
    V, U, H, W = a.shape[-4:]
    plan = _swap_plan((V, U, H, W), lam, interp)
    flat_a = a.reshape(a.shape[:-4] + (-1,))
    if interp is Interp.NEAREST:
        val = flat_a[..., plan.corners[0][0]]
    else:
        pv, pu = axis_plan(V, lam, interp), axis_plan(U, lam, interp)
        val = _lerp2(
            *(flat_a[..., idx] for idx, _ in plan.corners),
            pv.w[:, None, None, None],
            pu.w[None, :, None, None],
        )
    return np.where(plan.valid, val, fill)


def swap_fused_adjoint(g: np.ndarray, src_shape: tuple[int, int, int, int], lam: int,
                       interp: Interp = Interp.BILINEAR) -> np.ndarray:
    plan = _swap_plan(src_shape, lam, interp)
    n_src = math.prod(src_shape)
    lead = g.shape[:-4]
    L = math.prod(lead)
    g = np.where(plan.valid, g, 0.0).reshape(L, -1)
    offs = (np.arange(L) * n_src)[:, None]
    out = np.zeros(L * n_src)
    for idx, wt in plan.corners:
        vals = g if wt is None else g * np.broadcast_to(wt, plan.valid.shape).reshape(1, -1)
        idx = np.broadcast_to(idx, plan.valid.shape).reshape(1, -1) + offs
        out += np.bincount(idx.ravel(), weights=vals.ravel(), minlength=L * n_src)
    return out.reshape(lead + tuple(src_shape))


def nearest_bins(K: int, n: int) -> np.ndarray:
    """Array index of the score-map bin read by each of ``n`` centered samples.

    Bin coordinate is ``round(K / n * v)`` (round half up), clamped to the
    ``K`` bins.
    """
    lo, hi = coord_range(K)
    b = np.floor(K / n * centered_coords(n) + 0.5)
    return np.clip(b, lo, hi).astype(np.intp) + K // 2


def _scatter_flat(g: np.ndarray, idx: np.ndarray, valid: np.ndarray, src_shape) -> np.ndarray:
    n_src = math.prod(src_shape)
    lead = g.shape[:-4]
    L = math.prod(lead)
    gv = np.where(valid, g, 0.0).reshape(L, -1)
    full = np.broadcast_to(idx, valid.shape).reshape(1, -1) + (np.arange(L) * n_src)[:, None]
    out = np.bincount(full.ravel(), weights=gv.ravel(), minlength=L * n_src)
    return out.reshape(lead + tuple(src_shape))


# ---------------------------------------------------------------------------
# StructuredTensor API
# ---------------------------------------------------------------------------


def _require(t: StructuredTensor, tag: Repr, op: str):
    if t.repr is not tag:
        raise ValueError(f"{op} expects a {tag.name.lower()} tensor, got {t.repr.name.lower()}")


def _check_grad(t_out_shape, grad):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != tuple(t_out_shape):
        raise ValueError(f"upstream gradient shape {grad.shape} != output shape {tuple(t_out_shape)}")
    return grad


def _require_lambda_units(t: StructuredTensor, lam: int, op: str):
    if not math.isclose(t.units.sigma_vu, lam * t.units.sigma_hw, rel_tol=1e-9):
        raise ValueError(
            f"{op} needs sigma_vu == lambda * sigma_hw, got {t.units} with lambda={lam}"
        )


def align2nat(t: StructuredTensor, fill: float = 0.0) -> StructuredTensor:
    """Aligned to natural: ``F(v,u,y,x) = F^(v, u, y + a*v, x + a*u)``."""
    _require(t, Repr.ALIGNED, "align2nat")
    a = t.units.integer_alpha()
    return StructuredTensor(shift_vu(t.data, a, a, fill), Repr.NATURAL, t.units)


def align2nat_backward(t: StructuredTensor, grad) -> np.ndarray:
    a = t.units.integer_alpha()
    return shift_vu(_check_grad(t.shape, grad), -a, -a, 0.0)


def nat2align(t: StructuredTensor, fill: float = 0.0) -> StructuredTensor:
    """Natural to aligned: ``F^(v,u,y,x) = F(v, u, y - a*v, x - a*u)``."""
    _require(t, Repr.NATURAL, "nat2align")
    a = t.units.integer_alpha()
    return StructuredTensor(shift_vu(t.data, -a, -a, fill), Repr.ALIGNED, t.units)


def nat2align_backward(t: StructuredTensor, grad) -> np.ndarray:
    a = t.units.integer_alpha()
    return shift_vu(_check_grad(t.shape, grad), a, a, 0.0)


class _GeneralPlan(NamedTuple):
    idx: np.ndarray
    valid: np.ndarray


def _general_plan(src_shape, src_units: Units, dst_units: Units, out_shape) -> _GeneralPlan:
    Vs, Us, Hs, Ws = src_shape
    V, U, H, W = out_shape
    r_vu = dst_units.sigma_vu / src_units.sigma_vu
    r_hw = dst_units.sigma_hw / src_units.sigma_hw
    r_cross = dst_units.sigma_vu / src_units.sigma_hw

    def integral(x, what):
        r = np.round(x)
        if not np.allclose(x, r, rtol=0, atol=1e-9):
            bad = x[~np.isclose(x, r, rtol=0, atol=1e-9)].ravel()[0]
            raise ValueError(f"non-integral source {what} coordinate {bad:g}; units incompatible")
        return r.astype(np.intp)

    v, u = centered_coords(V), centered_coords(U)
    sv = integral(r_vu * v, "v")
    su = integral(r_vu * u, "u")
    sy = integral(r_hw * np.arange(H)[None, :] + r_cross * v[:, None], "y")  # (V, H)
    sx = integral(r_hw * np.arange(W)[None, :] + r_cross * u[:, None], "x")  # (U, W)

    vlo, vhi = coord_range(Vs)
    ulo, uhi = coord_range(Us)
    ok_v = (sv >= vlo) & (sv <= vhi)
    ok_u = (su >= ulo) & (su <= uhi)
    ok_y = (sy >= 0) & (sy < Hs)
    ok_x = (sx >= 0) & (sx < Ws)
    valid = (ok_v[:, None, None, None] & ok_u[None, :, None, None]
             & ok_y[:, None, :, None] & ok_x[None, :, None, :])
    iv = np.clip(sv + Vs // 2, 0, Vs - 1)
    iu = np.clip(su + Us // 2, 0, Us - 1)
    iy = np.clip(sy, 0, Hs - 1)
    ix = np.clip(sx, 0, Ws - 1)
    idx = ((iv[:, None, None, None] * Us + iu[None, :, None, None]) * Hs
           + iy[:, None, :, None]) * Ws + ix[None, :, None, :]
    return _GeneralPlan(idx, np.broadcast_to(valid, (V, U, H, W)))


def align2nat_general(t: StructuredTensor, target_units: Units, shape=None,
                      fill: float = 0.0) -> StructuredTensor:
    """Unit-aware aligned-to-natural transform for arbitrary unit pairs.

    Output sample ``(v, u, y, x)`` (in ``target_units``) reads the aligned
    input at ``(rv*v, rv*u, rh*y + rc*v, rh*x + rc*u)`` where
    ``rv = s_vu / s^_vu``, ``rh = s_hw / s^_hw`` and ``rc = s_vu / s^_hw``.
    Every source coordinate must be an integer; this is checked for the whole
    output domain before any data is read. ``shape`` defaults to the input
    shape.
    """
    _require(t, Repr.ALIGNED, "align2nat_general")
    shape = tuple(shape or t.shape)
    plan = _general_plan(t.shape, t.units, target_units, shape)
    val = t.data.reshape(-1)[plan.idx]
    return StructuredTensor(np.where(plan.valid, val, fill), Repr.NATURAL, target_units)


def align2nat_general_backward(t: StructuredTensor, target_units: Units, grad,
                               shape=None) -> np.ndarray:
    shape = tuple(shape or t.shape)
    plan = _general_plan(t.shape, t.units, target_units, shape)
    return _scatter_flat(_check_grad(shape, grad), plan.idx, plan.valid, t.shape)


def up_bilinear_vu(t: StructuredTensor, lam: int,
                   interp: Interp = Interp.BILINEAR) -> StructuredTensor:
    """Upsample VU by ``lam``: shape ``(lam*V, lam*U, H, W)``, ``sigma_vu / lam``."""
    lam = as_positive_int(lam, "lambda")
    units = Units(t.units.sigma_vu / lam, t.units.sigma_hw)
    return StructuredTensor(upsample_vu(t.data, lam, interp), t.repr, units)


def up_bilinear_vu_backward(t: StructuredTensor, lam: int, grad,
                            interp: Interp = Interp.BILINEAR) -> np.ndarray:
    V, U, H, W = t.shape
    grad = _check_grad((lam * V, lam * U, H, W), grad)
    return upsample_vu_adjoint(grad, (V, U), lam, interp)


def up_align2nat(t: StructuredTensor, lam: int, interp: Interp = Interp.BILINEAR,
                 fill: float = 0.0) -> StructuredTensor:
    """VU upsampling by ``lam`` followed by align2nat; output has sigma_vu == sigma_hw."""
    _require(t, Repr.ALIGNED, "up_align2nat")
    lam = as_positive_int(lam, "lambda")
    _require_lambda_units(t, lam, "up_align2nat")
    return align2nat(up_bilinear_vu(t, lam, interp), fill)


def up_align2nat_backward(t: StructuredTensor, lam: int, grad,
                          interp: Interp = Interp.BILINEAR) -> np.ndarray:
    V, U, H, W = t.shape
    grad = _check_grad((lam * V, lam * U, H, W), grad)
    return upsample_vu_adjoint(shift_vu(grad, -1, -1, 0.0), (V, U), lam, interp)


def subsample_hw(t: StructuredTensor, factor: int) -> StructuredTensor:
    """Keep phase-0 HW samples ``(factor*j, factor*i)``; ``sigma_hw * factor``."""
    factor = as_positive_int(factor, "factor")
    units = Units(t.units.sigma_vu, t.units.sigma_hw * factor)
    return StructuredTensor(subsample(t.data, factor), t.repr, units)


def subsample_hw_backward(t: StructuredTensor, factor: int, grad) -> np.ndarray:
    V, U, H, W = t.shape
    if H % factor or W % factor:
        raise ValueError(f"HW shape {(H, W)} not divisible by {factor}")
    grad = _check_grad((V, U, H // factor, W // factor), grad)
    return subsample_adjoint(grad, factor)


def swap_align2nat(t: StructuredTensor, lam: int, interp: Interp = Interp.BILINEAR,
                   fill: float = 0.0) -> StructuredTensor:
    """Fused ``subsample_hw(up_align2nat(t, lam), lam)``.

    Output shape ``(lam*V, lam*U, H/lam, W/lam)``; the fine unit moves from
    the HW axes to the VU axes. No ``(lam*V, lam*U, H, W)`` intermediate is
    built.
    """
    _require(t, Repr.ALIGNED, "swap_align2nat")
    lam = as_positive_int(lam, "lambda")
    _require_lambda_units(t, lam, "swap_align2nat")
    units = Units(t.units.sigma_vu / lam, t.units.sigma_hw * lam)
    return StructuredTensor(swap_fused(t.data, lam, interp, fill), Repr.NATURAL, units)


def swap_align2nat_backward(t: StructuredTensor, lam: int, grad,
                            interp: Interp = Interp.BILINEAR) -> np.ndarray:
    V, U, H, W = t.shape
    if H % lam or W % lam:
        raise ValueError(f"HW shape {(H, W)} not divisible by lambda={lam}")
    grad = _check_grad((lam * V, lam * U, H // lam, W // lam), grad)
    return swap_fused_adjoint(grad, t.shape, lam, interp)


def instancefcn_decode(g: StructuredTensor, V: int, U: int,
                       fill: float = 0.0) -> StructuredTensor:
    """Decode a ``(K, K, H, W)`` instance-sensitive score map into natural masks.

    Nearest-neighbor interpolates the ``K x K`` bins up to ``V x U`` samples,
    then applies align2nat with unit ratio 1. Output units are
    ``(sigma_hw, sigma_hw)`` of the input.
    """
    K1, K2 = g.shape[:2]
    if K1 > min(V, U) or K2 > min(V, U):
        raise ValueError(f"score map bins {(K1, K2)} exceed window {(V, U)}")
    bv, bu = nearest_bins(K1, V), nearest_bins(K2, U)
    up = g.data[bv[:, None], bu[None, :], :, :]
    units = Units(g.units.sigma_hw, g.units.sigma_hw)
    return StructuredTensor(shift_vu(up, 1, 1, fill), Repr.NATURAL, units)


def instancefcn_decode_backward(g: StructuredTensor, V: int, U: int, grad) -> np.ndarray:
    K1, K2, H, W = g.shape
    grad = shift_vu(_check_grad((V, U, H, W), grad), -1, -1, 0.0)
    Av = np.zeros((V, K1))
    Av[np.arange(V), nearest_bins(K1, V)] = 1.0
    Au = np.zeros((U, K2))
    Au[np.arange(U), nearest_bins(K2, U)] = 1.0
    return np.einsum("pv,qu,pqyx->vuyx", Av, Au, grad, optimize=True)
