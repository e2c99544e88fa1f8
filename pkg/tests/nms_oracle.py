"""Exhaustive suppression oracle and random detection sets."""

import itertools

import numpy as np

from densemask.assignment import WindowSpec
from densemask.core import Units
from densemask.inference import Detection


def det(score, cat=0, box=None, y=0, x=0, mask=None, size=(3, 3), units=Units(2, 2)):
    d = Detection(score, cat, WindowSpec(0, y, x, size, units), np.full(size, 0.9), box)
    d.binary_mask = mask
    return d


def _box_iou(a, b):
    ih = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iw = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ih * iw
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def exhaustive_nms(dets, thr):
    """Search all subsets per category for the one that is self-consistent.

    A kept set K is valid when each detection is in K exactly if no higher
    priority member of K overlaps it by more than ``thr``. Exactly one such
    set exists; it is found by enumeration, not by a greedy pass.
    """
    kept = []
    for c in sorted({d.category for d in dets}):
        group = sorted([d for d in dets if d.category == c], key=Detection.order_key)
        valid = []
        for bits in itertools.product([False, True], repeat=len(group)):
            K = [g for g, b in zip(group, bits) if b]
            ok = True
            for i, d in enumerate(group):
                blocked = any(_box_iou(e.box, d.box) > thr for e in K if group.index(e) < i)
                if bits[i] == blocked:
                    ok = False
                    break
            if ok:
                valid.append(K)
        assert len(valid) == 1
        kept += valid[0]
    return set(map(id, kept))


def random_dets(rng, n=20, n_cat=3, tie=False):
    out = []
    for k in range(n):
        y0, x0 = rng.uniform(0, 30, size=2)
        h, w = rng.uniform(4, 15, size=2)
        score = float(rng.choice([0.3, 0.6])) if tie else float(rng.random())
        out.append(det(score, int(rng.integers(n_cat)), (y0, x0, y0 + h, x0 + w), y=k // 5, x=k % 5))
    return out
