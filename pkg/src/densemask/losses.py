"""Training losses; each returns ``(loss, gradient)`` with respect to its predictions."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .core import StructuredTensor
from .nn import sigmoid

FG_WEIGHT = 1.5
LOGIT_CLAMP = 30.0
FOCAL_GAMMA = 3.0
FOCAL_ALPHA = 0.3
FL_STAR_BETA = 1.0


def _softplus(z):
    return np.logaddexp(0.0, z)


def mask_bce(logits: np.ndarray, targets: np.ndarray, fg_weight: float = FG_WEIGHT):
    """Sum over windows of per-window weighted BCE means.

    ``logits`` and ``targets`` are ``(P, V, U)``. The foreground term of each
    pixel is weighted by ``fg_weight``; each window's weighted sum is divided by
    its ``V*U`` pixel count. Returns ``(sum_of_window_means, grad)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    zc = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    n_pix = z.shape[-2] * z.shape[-1]
    per_px = fg_weight * t * _softplus(-zc) + (1.0 - t) * _softplus(zc)
    p = sigmoid(zc)
    g = ((1.0 - t) * p - fg_weight * t * (1.0 - p)) / n_pix
    g = np.where(np.abs(z) > LOGIT_CLAMP, 0.0, g)
    return float(per_px.sum() / n_pix), g


def mask_loss(preds, assignments):
    """Mean over positive windows of the per-window weighted BCE.

    ``preds`` is either one natural :class:`StructuredTensor` or a mapping
    ``(level, size_index) -> StructuredTensor``; each positive assignment's
    window selects the ``(V, U)`` mask at its grid location. Negatives
    contribute nothing. Returns ``(loss, grads)`` where ``grads`` mirrors
    ``preds`` with plain arrays.
    """
    single = isinstance(preds, StructuredTensor)
    table = {None: preds} if single else dict(preds)
    grads = {k: np.zeros(t.shape) for k, t in table.items()}
    groups = defaultdict(list)
    for a in assignments:
        if a.is_positive:
            key = None if single else (a.window.level, a.window.size_index)
            groups[key].append(a)
    n_pos = sum(len(v) for v in groups.values())
    if n_pos == 0:
        return 0.0, (grads[None] if single else grads)
    total = 0.0
    for key, items in groups.items():
        t = table[key]
        if t.shape[:2] != items[0].window.size:
            raise ValueError(f"prediction VU {t.shape[:2]} != window size {items[0].window.size}")
        ys = np.array([a.window.y for a in items])
        xs = np.array([a.window.x for a in items])
        z = t.data[:, :, ys, xs].transpose(2, 0, 1)
        tgt = np.stack([a.positive.target_mask for a in items])
        s, g = mask_bce(z, tgt)
        total += s
        np.add.at(grads[key], (slice(None), slice(None), ys, xs), g.transpose(1, 2, 0) / n_pos)
    return total / n_pos, (grads[None] if single else grads)


def focal_terms(logits, targets, gamma=FOCAL_GAMMA, alpha=FOCAL_ALPHA, variant="fl"):
    """Elementwise focal loss and its derivative w.r.t. the logits.

    ``variant="fl"`` is the alpha-balanced ``-a_t (1 - p_t)^g log p_t``;
    ``variant="fl_star"`` is ``-a_t log sigmoid(g * x_t + beta) / g`` with
    ``x_t = x`` for positives and ``-x`` for negatives.
    """
    raw = np.asarray(logits, dtype=np.float64)
    x = np.clip(raw, -LOGIT_CLAMP, LOGIT_CLAMP)
    y = np.asarray(targets, dtype=np.float64)
    live = np.abs(raw) <= LOGIT_CLAMP
    sgn = 2.0 * y - 1.0
    a_t = np.where(y > 0.5, alpha, 1.0 - alpha)
    xt = sgn * x
    if variant == "fl_star":
        z = gamma * xt + FL_STAR_BETA
        loss = a_t * _softplus(-z) / gamma
        grad = -a_t * sgn * (1.0 - sigmoid(z))
        return loss, grad * live
    if variant != "fl":
        raise ValueError(f"unknown focal variant {variant!r}")
    q = sigmoid(xt)
    log_q = -_softplus(-xt)
    loss = -a_t * (1.0 - q) ** gamma * log_q
    grad = a_t * sgn * (gamma * (1.0 - q) ** gamma * q * log_q - (1.0 - q) ** (gamma + 1))
    return loss, grad * live


def focal_cls_loss(cls_logits, targets, num_pos=None, gamma=FOCAL_GAMMA, alpha=FOCAL_ALPHA,
                   variant="fl"):
    """Focal loss summed over all windows and classes, divided by ``max(1, num_pos)``.

    ``targets`` is a one-hot array shaped like ``cls_logits``; ``num_pos``
    defaults to the number of positive targets.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if num_pos is None:
        num_pos = int(targets.sum())
    norm = max(1, num_pos)
    loss, grad = focal_terms(cls_logits, targets, gamma, alpha, variant)
    return float(loss.sum() / norm), grad / norm


def box_l1_loss(pred, target):
    """Mean absolute error over the 4 delta components of every positive window."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    d = pred - target
    return float(np.abs(d).sum() / d.size), np.sign(d) / d.size


def total_loss(mask: float, cls: float, box: float, weights=(1.0, 1.0, 1.0)) -> float:
    wm, wc, wb = weights
    return wm * mask + wc * cls + wb * box


def cls_targets(assignments, shape, num_classes: int) -> np.ndarray:
    """One-hot ``(num_sizes * num_classes, H, W)`` class targets for one level."""
    out = np.zeros(shape)
    for a in assignments:
        if a.is_positive:
            w = a.window
            out[w.size_index * num_classes + a.positive.category, w.y, w.x] = 1.0
    return out

