"""Tensor bipyramid construction and fine-resolution feature-map conversion.

Level ``k`` of a bipyramid built on a ``(V, U, H, W)`` base has shape
``(2^k V, 2^k U, H / 2^k, W / 2^k)``: the mask resolution grows while the
window density shrinks, and every level holds ``V*U*H*W`` elements. The VU
unit is shared by all levels and the HW unit doubles per level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .core import FeatureMap, Repr, StructuredTensor, Units
from .oracles import swap_align2nat_naive
from .transforms import Interp, swap_align2nat


@dataclass(frozen=True)
class BipyramidSpec:
    base_vu: tuple[int, int]
    base_hw: tuple[int, int]
    levels: int
    base_sigma_hw: float
    base_sigma_vu: float | None = None  # defaults to base_sigma_hw

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("a bipyramid needs at least one level")
        step = 2 ** (self.levels - 1)
        H, W = self.base_hw
        if H % step or W % step:
            raise ValueError(f"HW {self.base_hw} not divisible by 2^(L-1) = {step}")

    @property
    def sigma_vu(self) -> float:
        return self.base_sigma_hw if self.base_sigma_vu is None else self.base_sigma_vu


def level_shape(spec: BipyramidSpec, k: int) -> tuple[tuple[int, int, int, int], Units]:
    if not 0 <= k < spec.levels:
        raise IndexError(f"level {k} outside [0, {spec.levels})")
    V, U = spec.base_vu
    H, W = spec.base_hw
    f = 2 ** k
    return (f * V, f * U, H // f, W // f), Units(spec.sigma_vu, spec.base_sigma_hw * f)


def build_bipyramid(per_level: list[StructuredTensor], interp: Interp = Interp.BILINEAR,
                    fill: float = 0.0) -> list[StructuredTensor]:
    """Apply ``swap_align2nat`` with ``lambda = 2^k`` to the aligned input of level ``k``."""
    return [swap_align2nat(t, 2 ** k, interp, fill) for k, t in enumerate(per_level)]


def convert_fpn_nodes(maps: list[nn.Node], w: nn.Node, b: nn.Node) -> list[nn.Node]:
    """Differentiable conversion of ``(N, C, H/2^k, W/2^k)`` maps to ``(N, C, H, W)``.

    Each level is bilinearly upsampled by ``2^k``, the finest map ``maps[0]``
    is added, then a shared 3x3 conv + ReLU is applied.
    """
    out = []
    for k, m in enumerate(maps):
        up = nn.upsample_hw(m, 2 ** k)
        out.append(nn.relu(nn.conv2d(nn.add(up, maps[0]), w, b)))
    return out


def convert_fpn_maps(maps: list[FeatureMap], finest: FeatureMap, conv_w: np.ndarray,
                     conv_b: np.ndarray | None = None) -> list[FeatureMap]:
    """Convert level maps at strides ``2^k * s`` to fine ``(C, H, W)`` maps at stride ``s``.

    ``maps[k]`` must have stride ``2^k * finest.stride`` and shape
    ``(C, H/2^k, W/2^k)``. The finest map is added to every upsampled level,
    including level 0, before the shared conv + ReLU.
    """
    C, H, W = finest.data.shape
    conv_w = np.asarray(conv_w, dtype=np.float64)
    if conv_w.shape != (C, C, 3, 3):
        raise ValueError(f"conv weights must be (C, C, 3, 3) = {(C, C, 3, 3)}, got {conv_w.shape}")
    conv_b = np.zeros(C) if conv_b is None else np.asarray(conv_b, dtype=np.float64)
    fin = nn.leaf(finest.data[None])
    w, b = nn.leaf(conv_w), nn.leaf(conv_b)
    out = []
    for k, m in enumerate(maps):
        f = 2 ** k
        if m.channels != C:
            raise ValueError(f"level {k} has {m.channels} channels, expected {C}")
        if m.height * f != H or m.width * f != W:
            raise ValueError(f"level {k} shape {m.data.shape} does not upsample to {(H, W)}")
        if not np.isclose(m.stride, finest.stride * f):
            raise ValueError(f"level {k} stride {m.stride} != {finest.stride * f}")
        up = nn.upsample_hw(nn.leaf(m.data[None]), f)
        y = nn.relu(nn.conv2d(nn.add(up, fin), w, b))
        out.append(FeatureMap(y.value[0], finest.stride))
    return out


def naive_bipyramid(per_level: list[StructuredTensor], interp: Interp = Interp.BILINEAR,
                    fill: float = 0.0) -> list[StructuredTensor]:
    return [swap_align2nat_naive(t, 2 ** k, interp, fill) for k, t in enumerate(per_level)]


def aligned_level_units(base_sigma_hw: float, k: int) -> Units:
    """Units a level-``k`` aligned head input must carry: ``sigma_vu = 2^k sigma_hw``."""
    return Units(base_sigma_hw * 2 ** k, base_sigma_hw)


def random_level_inputs(rng, V, U, H, W, levels, base_sigma_hw=1.0) -> list[StructuredTensor]:
    return [
        StructuredTensor(rng.normal(size=(V, U, H, W)), Repr.ALIGNED, aligned_level_units(base_sigma_hw, k))
        for k in range(levels)
    ]
