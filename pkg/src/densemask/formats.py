"""File formats: RLE masks, scene and detection JSON, PGM renders."""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .assignment import GroundTruthInstance


def rle_encode(mask: np.ndarray) -> dict:
    """Uncompressed column-major run lengths, starting with a (possibly empty) zero run."""
    m = np.asarray(mask, dtype=bool)
    flat = m.flatten(order="F").astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return {"size": [int(m.shape[0]), int(m.shape[1])], "counts": [int(r) for r in runs]}


def rle_decode(rle: dict) -> np.ndarray:
    H, W = rle["size"]
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if counts.sum() != H * W:
        raise ValueError(f"run lengths sum to {counts.sum()}, expected {H * W}")
    vals = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(vals, counts)
    return flat.reshape((H, W), order="F")


def scene_to_json(image: np.ndarray, instances: list[GroundTruthInstance]) -> dict:
    return {
        "image": {"shape": list(image.shape), "data": np.asarray(image, dtype=np.float64).ravel().tolist()},
        "annotations": [
            {"category": int(g.category), "bbox": list(g.bbox), "segmentation": rle_encode(g.mask)}
            for g in instances
        ],
    }


def scene_from_json(obj: dict):
    img = np.asarray(obj["image"]["data"], dtype=np.float64).reshape(obj["image"]["shape"])
    inst = [GroundTruthInstance(rle_decode(a["segmentation"]), int(a["category"])) for a in obj["annotations"]]
    return img, inst


def save_scenes(path, scenes) -> None:
    Path(path).write_text(json.dumps([scene_to_json(im, gts) for im, gts in scenes]))


def load_scenes(path):
    return [scene_from_json(o) for o in json.loads(Path(path).read_text())]


def detections_to_json(dets_per_image) -> list[dict]:
    """One record per detection; masks must already be pasted."""
    out = []
    for img, dets in enumerate(dets_per_image):
        for d in dets:
            w = d.window
            out.append({
                "image": img,
                "category": int(d.category),
                "score": float(d.score),
                "calibrated_score": None if d.calibrated_score is None else float(d.calibrated_score),
                "box": None if d.box is None else [float(b) for b in d.box],
                "window": {"level": w.level, "y": w.y, "x": w.x, "size": list(w.size)},
                "segmentation": rle_encode(d.binary_mask),
            })
    return out


def save_detections(path, dets_per_image) -> None:
    Path(path).write_text(json.dumps(detections_to_json(dets_per_image), indent=1))


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary (P5) 8-bit PGM from values in ``[0, 1]``."""
    g = np.clip(np.asarray(gray, dtype=np.float64), 0.0, 1.0)
    data = np.round(g * 255).astype(np.uint8)
    H, W = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError("not a binary PGM")
    W, H, maxval = (int(g) for g in m.groups())
    return np.frombuffer(raw[m.end():m.end() + W * H], dtype=np.uint8).reshape(H, W) / maxval


def render_detections(image: np.ndarray, dets, alpha: float = 0.5) -> np.ndarray:
    """Grayscale image with pasted masks brightened, for debugging."""
    gray = np.asarray(image).mean(axis=0)
    out = gray.copy()
    for d in dets:
        out = np.where(d.binary_mask, (1 - alpha) * out + alpha, out)
    return out
