"""Toy backbone, the five mask heads, and the classification and box heads.

Head weights are shared across pyramid levels (the same parameter node is
used at every level within one forward pass) but never between tasks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .bipyramid import convert_fpn_nodes
from .core import FeatureMap, Repr, StructuredTensor, Units
from .transforms import Interp

PRIOR_PROB = 0.01


class HeadKind(enum.Enum):
    SIMPLE_NATURAL = "simple_natural"
    SIMPLE_ALIGNED = "simple_aligned"
    UPSCALE_NATURAL = "upscale_natural"
    UPSCALE_ALIGNED = "upscale_aligned"
    BIPYRAMID = "bipyramid"


@dataclass(frozen=True)
class NetConfig:
    head: HeadKind = HeadKind.BIPYRAMID
    lam: int = 1
    interpolation: Interp = Interp.BILINEAR
    window_sizes: tuple[int, ...] = (9,)
    levels: int = 2
    channels: int = 32
    tower_depth: int = 4
    num_classes: int = 3
    in_channels: int = 3
    stem_channels: int = 16
    base_stride: int = 2
    box_head: bool = True
    fill: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "head", HeadKind(self.head))
        object.__setattr__(self, "interpolation", Interp(self.interpolation))
        object.__setattr__(self, "window_sizes", tuple(int(s) for s in self.window_sizes))
        if self.base_stride not in (1, 2, 4, 8):
            raise ValueError("base_stride must be a power of two <= 8")
        lam = self.head_lambda
        for s in self.window_sizes:
            if s % lam:
                raise ValueError(f"window size {s} not divisible by lambda={lam}")

    @property
    def head_lambda(self) -> int:
        """VU upscaling factor of a baseline head (1 for simple and bipyramid heads)."""
        if self.head in (HeadKind.UPSCALE_NATURAL, HeadKind.UPSCALE_ALIGNED):
            return int(self.lam)
        return 1

    def level_stride(self, k: int) -> int:
        return self.base_stride * 2 ** k

    def mask_vu(self, size: int, k: int) -> tuple[int, int]:
        """Output mask samples of a window of ``size`` units at level ``k``."""
        f = 2 ** k if self.head is HeadKind.BIPYRAMID else 1
        return size * f, size * f

    def mask_units(self, k: int) -> Units:
        """Units of the natural output tensor at level ``k``."""
        s = self.level_stride(k)
        if self.head is HeadKind.BIPYRAMID:
            return Units(self.base_stride, s)
        return Units(s, s)

    def conv_channels(self, size: int) -> int:
        c = size // self.head_lambda
        return c * c


def _he(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_params(cfg: NetConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Deterministic He fan-in initialization; biases zero except the class prior."""
    rng = np.random.default_rng(seed)
    C, S, K = cfg.channels, len(cfg.window_sizes), cfg.num_classes
    p: dict[str, np.ndarray] = {}

    def conv(name, co, ci, k):
        p[name + ".w"] = _he(rng, (co, ci, k, k))
        p[name + ".b"] = np.zeros(co)

    n_stem = int(np.log2(cfg.base_stride))
    ci = cfg.in_channels
    for i in range(max(1, n_stem)):
        conv(f"stem{i}", cfg.stem_channels, ci, 3)
        ci = cfg.stem_channels
    conv("level0", C, ci, 3)
    for k in range(1, cfg.levels):
        conv(f"down{k}", C, C, 3)
    if cfg.head is HeadKind.BIPYRAMID:
        conv("fpn", C, C, 3)
    towers = ["mask", "cls"] + (["box"] if cfg.box_head else [])
    for t in towers:
        for i in range(cfg.tower_depth):
            conv(f"{t}.t{i}", C, C, 3)
    for si, s in enumerate(cfg.window_sizes):
        conv(f"mask.out{si}", cfg.conv_channels(s), C, 1)
    conv("cls.out", S * K, C, 3)
    p["cls.out.b"][:] = -np.log((1 - PRIOR_PROB) / PRIOR_PROB)
    if cfg.box_head:
        conv("box.out", S * 4, C, 3)
    return p


class Params:
    """Parameter nodes for one forward pass; the same node serves every level."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = arrays
        self.nodes = {k: nn.Node(v) for k, v in arrays.items()}

    def __getitem__(self, name) -> nn.Node:
        return self.nodes[name]

    def conv(self, x: nn.Node, name: str) -> nn.Node:
        return nn.conv2d(x, self.nodes[name + ".w"], self.nodes[name + ".b"])

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (n.grad if n.grad is not None else np.zeros_like(n.value))
                for k, n in self.nodes.items()}


@dataclass
class LevelOutput:
    level: int
    stride: float
    mask: list = field(default_factory=list)  # per window size, natural (N, V, U, H, W)
    mask_units: list = field(default_factory=list)
    cls: nn.Node | None = None
    box: nn.Node | None = None


def backbone(P: Params, cfg: NetConfig, images: nn.Node) -> list[nn.Node]:
    """Stem + strided levels; level ``k`` has stride ``base_stride * 2^k``."""
    h = images
    n_stem = int(np.log2(cfg.base_stride))
    for i in range(max(1, n_stem)):
        h = nn.relu(P.conv(h, f"stem{i}"))
        if i < n_stem:
            h = nn.stride2(h)
    feats = [nn.relu(P.conv(h, "level0"))]
    for k in range(1, cfg.levels):
        feats.append(nn.stride2(nn.relu(P.conv(feats[-1], f"down{k}"))))
    return feats


def _tower(P: Params, x: nn.Node, name: str, depth: int) -> nn.Node:
    for i in range(depth):
        x = nn.relu(P.conv(x, f"{name}.t{i}"))
    return x


def mask_head_node(P: Params, cfg: NetConfig, feat: nn.Node, level: int, size_index: int) -> nn.Node:
    """Tower + conv/reshape + representation transform for one window size."""
    h = _tower(P, feat, "mask", cfg.tower_depth)
    return mask_output_node(P, cfg, h, level, size_index)


def mask_output_node(P: Params, cfg: NetConfig, h: nn.Node, level: int, size_index: int) -> nn.Node:
    size = cfg.window_sizes[size_index]
    lam = cfg.head_lambda
    c = size // lam
    t = nn.reshape_vu(P.conv(h, f"mask.out{size_index}"), c, c)
    kind = cfg.head
    if kind is HeadKind.SIMPLE_NATURAL:
        return t
    if kind is HeadKind.SIMPLE_ALIGNED:
        return nn.shift_vu(t, 1, 1, cfg.fill)
    if kind is HeadKind.UPSCALE_NATURAL:
        return nn.upsample_vu(t, lam, cfg.interpolation)
    if kind is HeadKind.UPSCALE_ALIGNED:
        return nn.shift_vu(nn.upsample_vu(t, lam, cfg.interpolation), 1, 1, cfg.fill)
    return nn.swap_align2nat(t, 2 ** level, cfg.interpolation, cfg.fill)


def cls_head_node(P: Params, cfg: NetConfig, feat: nn.Node) -> nn.Node:
    return P.conv(_tower(P, feat, "cls", cfg.tower_depth), "cls.out")


def box_head_node(P: Params, cfg: NetConfig, feat: nn.Node) -> nn.Node:
    return P.conv(_tower(P, feat, "box", cfg.tower_depth), "box.out")


def forward(P: Params, cfg: NetConfig, images: np.ndarray) -> list[LevelOutput]:
    """Run the whole network on an ``(N, C, H, W)`` image batch (array or input node)."""
    x = images if isinstance(images, nn.Node) else nn.leaf(images)
    feats = backbone(P, cfg, x)
    if cfg.head is HeadKind.BIPYRAMID:
        mask_feats = convert_fpn_nodes(feats, P["fpn.w"], P["fpn.b"])
    else:
        mask_feats = feats
    outs = []
    for k in range(cfg.levels):
        lo = LevelOutput(level=k, stride=cfg.level_stride(k))
        h = _tower(P, mask_feats[k], "mask", cfg.tower_depth)
        for si in range(len(cfg.window_sizes)):
            lo.mask.append(mask_output_node(P, cfg, h, k, si))
            lo.mask_units.append(cfg.mask_units(k))
        lo.cls = cls_head_node(P, cfg, feats[k])
        if cfg.box_head:
            lo.box = box_head_node(P, cfg, feats[k])
        outs.append(lo)
    return outs


# ---------------------------------------------------------------------------
# single-map API
# ---------------------------------------------------------------------------


def conv_reshape(fm: FeatureMap, weight: np.ndarray, bias: np.ndarray, vu: tuple[int, int],
                 repr: Repr = Repr.NATURAL, sigma_vu: float | None = None) -> StructuredTensor:
    """1x1 conv projecting ``C`` channels to ``V*U``, reshaped to ``(V, U, H, W)``."""
    V, U = vu
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim == 2:
        w = w[:, :, None, None]
    if w.shape[0] != V * U:
        raise ValueError(f"{w.shape[0]} output channels do not factor as {V}x{U}")
    out = nn.conv2d(nn.leaf(fm.data[None]), nn.leaf(w), nn.leaf(bias))
    units = Units(fm.stride if sigma_vu is None else sigma_vu, fm.stride)
    return StructuredTensor(out.value.reshape(V, U, fm.height, fm.width), repr, units)


def run_head(cfg: NetConfig, fm: FeatureMap, params: dict, level: int = 0,
             size_index: int = 0) -> StructuredTensor:
    """Mask logits of one head on one feature map, in the natural representation.

    For the bipyramid head ``fm`` is the converted fine map and the output at
    level ``k`` has ``2^k`` times more mask samples and ``2^k`` times coarser HW.
    """
    P = Params(params)
    node = mask_head_node(P, cfg, nn.leaf(fm.data[None]), level, size_index)
    if cfg.head is HeadKind.BIPYRAMID:
        units = Units(fm.stride, fm.stride * 2 ** level)
    else:
        units = Units(fm.stride, fm.stride)
    return StructuredTensor(node.value[0], Repr.NATURAL, units)


def run_cls_head(cfg: NetConfig, fm: FeatureMap, params: dict) -> np.ndarray:
    """Class logits ``(num_sizes * num_classes, H, W)``, size-major."""
    return cls_head_node(Params(params), cfg, nn.leaf(fm.data[None])).value[0]


def run_box_head(cfg: NetConfig, fm: FeatureMap, params: dict) -> np.ndarray:
    """Box deltas ``(num_sizes * 4, H, W)`` as ``(dy, dx, log dh, log dw)`` per size."""
    return box_head_node(Params(params), cfg, nn.leaf(fm.data[None])).value[0]
