"""Toy end-to-end training, evaluation and ablation runs on synthetic scenes."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .assignment import WindowSpec, assign, encode_box
from .core import Repr, StructuredTensor
from .heads import HeadKind, NetConfig, Params, forward, init_params
from .inference import NMSMode, decode, eval_ap, nms, paste_mask
from .losses import focal_cls_loss, mask_bce, total_loss
from .synth import SceneConfig, generate_scene
from .transforms import Interp

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    net: NetConfig = field(default_factory=NetConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    n_train: int = 96
    n_val: int = 32
    epochs: int = 20
    batch_size: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    grad_clip: float = 5.0
    seed: int = 0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    focal_variant: str = "fl"
    nms_mode: NMSMode | None = None  # None: regressed boxes when available, else mask boxes
    score_thresh: float = 0.05
    topk: int = 50
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if self.nms_mode is not None:
            object.__setattr__(self, "nms_mode", NMSMode(self.nms_mode))
        n_cat = 1 + max(int(s) for s in self.scene.shapes)
        if n_cat > self.net.num_classes:
            raise ValueError(f"scenes use {n_cat} categories but the net predicts {self.net.num_classes}")

    @property
    def resolved_nms(self) -> NMSMode:
        if self.nms_mode is not None:
            return self.nms_mode
        return NMSMode.REGRESSED_BOX if self.net.box_head else NMSMode.MASK_BB

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["net"]["head"] = self.net.head.value
        d["net"]["interpolation"] = self.net.interpolation.value
        d["scene"]["shapes"] = [int(s) for s in self.scene.shapes]
        d["nms_mode"] = None if self.nms_mode is None else self.nms_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        net = NetConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("net", {}).items()})
        scene = SceneConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("scene", {}).items()})
        return cls(net=net, scene=scene, **d)

    def replace(self, **kw) -> ExperimentConfig:
        net_kw = {k[4:]: kw.pop(k) for k in list(kw) if k.startswith("net_")}
        scene_kw = {k[6:]: kw.pop(k) for k in list(kw) if k.startswith("scene_")}
        return dataclasses.replace(self, net=dataclasses.replace(self.net, **net_kw),
                                   scene=dataclasses.replace(self.scene, **scene_kw), **kw)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))


# ---------------------------------------------------------------------------
# dense targets
# ---------------------------------------------------------------------------


@dataclass
class ImageTargets:
    cls: list[np.ndarray]  # per level, (S*K, H_k, W_k) one-hot
    pos: dict  # (level, size_index) -> (ys, xs, masks (P, V, U), boxes (P, 4))
    num_pos: int


def network_windows(cfg: NetConfig, image_size) -> list[WindowSpec]:
    H, W = image_size
    out = []
    for k in range(cfg.levels):
        s = cfg.level_stride(k)
        units = cfg.mask_units(k)
        for si, size in enumerate(cfg.window_sizes):
            vu = cfg.mask_vu(size, k)
            for y in range(H // s):
                for x in range(W // s):
                    out.append(WindowSpec(k, y, x, vu, units, si))
    return out


def dense_targets(cfg: NetConfig, instances, image_size) -> ImageTargets:
    """Assignment results packed into per-level arrays for the training loss."""
    H, W = image_size
    S, K = len(cfg.window_sizes), cfg.num_classes
    cls = [np.zeros((S * K, H // cfg.level_stride(k), W // cfg.level_stride(k))) for k in range(cfg.levels)]
    groups: dict = {}
    for a in assign(network_windows(cfg, image_size), instances):
        if not a.is_positive:
            continue
        w, p = a.window, a.positive
        cls[w.level][w.size_index * K + p.category, w.y, w.x] = 1.0
        groups.setdefault((w.level, w.size_index), []).append(
            (w.y, w.x, p.target_mask, encode_box(p.target_box, w.center, w.side)))
    pos = {}
    for key, items in groups.items():
        ys, xs, ms, bs = zip(*items)
        pos[key] = (np.array(ys), np.array(xs), np.stack(ms), np.stack(bs))
    return ImageTargets(cls, pos, sum(len(v[0]) for v in pos.values()))


_DATA_CACHE: dict = {}


def make_split(cfg: ExperimentConfig, split: str):
    """``(images (N, 3, H, W), instances, targets)`` for ``split`` in {"train", "val"}."""
    n, offset = (cfg.n_train, 0) if split == "train" else (cfg.n_val, 1_000_000)
    key = (cfg.scene, cfg.net, n, offset)
    if key not in _DATA_CACHE:
        scenes = [generate_scene(cfg.scene, offset + i) for i in range(n)]
        images = np.stack([im for im, _ in scenes]) - 0.5
        insts = [g for _, g in scenes]
        targets = [dense_targets(cfg.net, g, cfg.scene.image_size) for g in insts]
        _DATA_CACHE.clear()
        _DATA_CACHE[key] = (images, insts, targets)
    return _DATA_CACHE[key]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def batch_loss(cfg: ExperimentConfig, outs, targets: list[ImageTargets]):
    """Weighted total loss of one batch and the gradient seeds for backprop."""
    net = cfg.net
    wm, wc, wb = cfg.loss_weights
    n_pos = sum(t.num_pos for t in targets)
    norm = max(1, n_pos)
    seeds = []
    mask_sum = cls_sum = box_sum = 0.0
    for lo in outs:
        k = lo.level
        tgt = np.stack([t.cls[k] for t in targets])
        c, g = focal_cls_loss(lo.cls.value, tgt, num_pos=n_pos, variant=cfg.focal_variant)
        cls_sum += c
        seeds.append((lo.cls, wc * g))
        for si, node in enumerate(lo.mask):
            gm = np.zeros_like(node.value)
            for n, t in enumerate(targets):
                if (k, si) not in t.pos:
                    continue
                ys, xs, masks, _ = t.pos[(k, si)]
                s, g = mask_bce(node.value[n, :, :, ys, xs], masks)
                mask_sum += s
                gm[n, :, :, ys, xs] = g / norm
            seeds.append((node, wm * gm))
        if lo.box is not None:
            gb = np.zeros_like(lo.box.value)
            for n, t in enumerate(targets):
                for si in range(len(net.window_sizes)):
                    if (k, si) not in t.pos:
                        continue
                    ys, xs, _, boxes = t.pos[(k, si)]
                    d = lo.box.value[n, 4 * si:4 * si + 4, ys, xs] - boxes
                    box_sum += np.abs(d).sum() / (4 * norm)
                    gb[n, 4 * si:4 * si + 4, ys, xs] = np.sign(d) / (4 * norm)
            seeds.append((lo.box, wb * gb))
    parts = (mask_sum / norm, cls_sum, box_sum)
    return total_loss(*parts, weights=(wm, wc, wb)), parts, seeds


@dataclass
class TrainResult:
    params: dict
    losses: list[float]
    parts: list[tuple[float, float, float]]
    seconds: float


def train(cfg: ExperimentConfig, progress: bool = False) -> TrainResult:
    """Momentum SGD on the synthetic training split; deterministic given the config."""
    t0 = time.perf_counter()
    images, _, targets = make_split(cfg, "train")
    params = init_params(cfg.net, cfg.seed)
    velocity: dict = {}
    order_rng = np.random.default_rng(cfg.seed)
    losses, parts_log = [], []
    n = len(images)
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        ep_loss, ep_parts, n_batches = 0.0, np.zeros(3), 0
        for b in range(0, n, cfg.batch_size):
            idx = perm[b:b + cfg.batch_size]
            P = Params(params)
            outs = forward(P, cfg.net, images[idx])
            loss, parts, seeds = batch_loss(cfg, outs, [targets[i] for i in idx])
            nn.backprop(seeds)
            grads = P.grads()
            gnorm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if cfg.grad_clip and gnorm > cfg.grad_clip:
                grads = {k: g * (cfg.grad_clip / gnorm) for k, g in grads.items()}
            nn.sgd_step(params, grads, velocity, cfg.lr, cfg.momentum)
            ep_loss += loss
            ep_parts += parts
            n_batches += 1
        losses.append(ep_loss / n_batches)
        parts_log.append(tuple(ep_parts / n_batches))
        msg = "epoch %d loss %.4f (mask %.4f cls %.4f box %.4f)"
        log.info(msg, epoch, losses[-1], *parts_log[-1])
        if progress:
            print(msg % (epoch, losses[-1], *parts_log[-1]), flush=True)
    return TrainResult(params, losses, parts_log, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# inference and evaluation
# ---------------------------------------------------------------------------


def predict(cfg: ExperimentConfig, params: dict, images: np.ndarray, batch: int = 16,
            score_thresh: float | None = None, topk: int | None = None):
    """Final detections per image: decode, paste masks, NMS."""
    net = cfg.net
    image_size = images.shape[-2:]
    thresh = cfg.score_thresh if score_thresh is None else score_thresh
    topk = cfg.topk if topk is None else topk
    out = []
    for b in range(0, len(images), batch):
        outs = forward(Params(params), net, images[b:b + batch])
        for n in range(len(images[b:b + batch])):
            cls = [lo.cls.value[n] for lo in outs]
            masks = [[StructuredTensor(m.value[n], Repr.NATURAL, u) for m, u in zip(lo.mask, lo.mask_units)]
                     for lo in outs]
            boxes = [lo.box.value[n] for lo in outs] if net.box_head else None
            dets = decode(cls, masks, boxes, net.num_classes, thresh, topk)
            for d in dets:
                paste_mask(d, image_size)
            out.append(nms(dets, mode=cfg.resolved_nms, image_size=image_size))
    return out


def evaluate(cfg: ExperimentConfig, params: dict, split: str = "val") -> dict[float, float]:
    images, insts, _ = make_split(cfg, split)
    return eval_ap(predict(cfg, params, images), insts)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, cfg: ExperimentConfig, params: dict, losses=()) -> None:
    arrays = {f"param/{k}": v for k, v in params.items()}
    np.savez(path, __version__=np.array(CHECKPOINT_VERSION),
             __config__=np.array(json.dumps(cfg.to_dict())),
             __losses__=np.asarray(losses, dtype=np.float64), **arrays)


def load_checkpoint(path):
    """``(config, params, losses)`` from a file written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        cfg = ExperimentConfig.from_dict(json.loads(str(z["__config__"])))
        params = {k[6:]: z[k].copy() for k in z.files if k.startswith("param/")}
        losses = z["__losses__"].tolist()
    return cfg, params, losses


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

ABLATION_FIELDS = ["name", "head", "lam", "interpolation", "window_sizes", "box_head", "seed",
                   "ap50", "ap75", "final_loss", "train_seconds"]


def run_one(cfg: ExperimentConfig) -> dict:
    res = train(cfg)
    ap = evaluate(cfg, res.params)
    return {
        "name": cfg.name,
        "head": cfg.net.head.value,
        "lam": cfg.net.lam,
        "interpolation": cfg.net.interpolation.value,
        "window_sizes": " ".join(str(s) for s in cfg.net.window_sizes),
        "box_head": int(cfg.net.box_head),
        "seed": cfg.seed,
        "ap50": round(ap[0.5], 6),
        "ap75": round(ap[0.75], 6),
        "final_loss": round(float(res.losses[-1]), 6) if res.losses else float("nan"),
        "train_seconds": round(res.seconds, 1),
    }


def run_ablation(configs: list[ExperimentConfig], out_csv=None, workers: int = 1) -> list[dict]:
    """Train and evaluate every config; rows follow the input order."""
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(run_one, configs))
    else:
        rows = [run_one(c) for c in configs]
    if out_csv is not None:
        with open(out_csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=ABLATION_FIELDS)
            w.writeheader()
            w.writerows(rows)
    return rows


def ablation_grid(base: ExperimentConfig, seeds=(0, 1, 2)) -> list[ExperimentConfig]:
    """The three directional comparisons, each over ``seeds``.

    Every head predicts 15x15 windows on level 0, so window footprints and
    label assignment agree across the grid and only the head differs.
    Representation (natural vs aligned) and interpolation (nearest vs
    bilinear) use upscale heads with ``lambda = 5``; the pyramid comparison
    pits the bipyramid head against the single-resolution aligned heads.
    """
    out = []
    for seed in seeds:
        b = base.replace(seed=seed, net_window_sizes=(15,))
        out += [
            b.replace(name="upscale_natural_bilinear", net_head=HeadKind.UPSCALE_NATURAL,
                      net_interpolation=Interp.BILINEAR, net_lam=5),
            b.replace(name="upscale_aligned_bilinear", net_head=HeadKind.UPSCALE_ALIGNED,
                      net_interpolation=Interp.BILINEAR, net_lam=5),
            b.replace(name="upscale_aligned_nearest", net_head=HeadKind.UPSCALE_ALIGNED,
                      net_interpolation=Interp.NEAREST, net_lam=5),
            b.replace(name="simple_aligned", net_head=HeadKind.SIMPLE_ALIGNED, net_lam=1),
            b.replace(name="bipyramid", net_head=HeadKind.BIPYRAMID, net_lam=1,
                      net_interpolation=Interp.BILINEAR),
        ]
    return out
