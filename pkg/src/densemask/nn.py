"""Minimal reverse-mode differentiation over numpy arrays.

Each op returns a :class:`Node` holding its value, its parents and a closure
mapping the upstream gradient to one gradient per parent. :func:`backprop`
walks the graph in reverse topological order and accumulates ``.grad`` on
every node, so a parameter node used by several levels collects the sum of
their gradients.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import transforms as T


class Node:
    __slots__ = ("value", "parents", "backward_fn", "grad")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def leaf(value) -> Node:
    return Node(np.asarray(value, dtype=np.float64))


def _topo(roots):
    order, seen = [], set()
    stack = [(r, False) for r in roots]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents if id(p) not in seen)
    return order


def backprop(seeds) -> None:
    """Propagate ``[(node, upstream_grad), ...]`` back to every ancestor."""
    for node, g in seeds:
        node.grad = g if node.grad is None else node.grad + g
    for node in reversed(_topo([n for n, _ in seeds])):
        if node.grad is None or node.backward_fn is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is not None:
                parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _im2col(x, k):
    N, C, H, W = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H, W, k, k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * k * k)


def _col2im(dcols, shape, k):
    N, C, H, W = shape
    p = k // 2
    d = dcols.reshape(N, H, W, C, k, k)
    dxp = np.zeros((N, C, H + 2 * p, W + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + H, j:j + W] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + H, p:p + W]


def conv2d(x: Node, w: Node, b: Node) -> Node:
    """Square-kernel convolution, stride 1, zero padding preserving ``(H, W)``."""
    N, C, H, W = x.shape
    Co, Ci, k, k2 = w.shape
    if Ci != C or k != k2 or k % 2 == 0:
        raise ValueError(f"conv weight {w.shape} incompatible with input {x.shape}")
    cols = _im2col(x.value, k)
    wm = w.value.reshape(Co, -1)
    out = (cols @ wm.T + b.value).reshape(N, H, W, Co).transpose(0, 3, 1, 2)

    def backward(g):
        gf = g.transpose(0, 2, 3, 1).reshape(-1, Co)
        dw = (gf.T @ cols).reshape(w.shape)
        db = gf.sum(axis=0)
        dx = _col2im(gf @ wm, x.shape, k)
        return dx, dw, db

    return Node(np.ascontiguousarray(out), (x, w, b), backward)


def relu(x: Node) -> Node:
    mask = x.value > 0
    return Node(x.value * mask, (x,), lambda g: (g * mask,))


def add(a: Node, b: Node) -> Node:
    return Node(a.value + b.value, (a, b), lambda g: (g, g))


def stride2(x: Node) -> Node:
    """Strided 2x pooling: keep phase-0 samples so coarse ``j`` sits on fine ``2j``."""
    H, W = x.shape[-2:]
    return Node(
        np.ascontiguousarray(x.value[..., ::2, ::2]),
        (x,),
        lambda g: (_unstride(g, H, W),),
    )


def _unstride(g, H, W):
    out = np.zeros(g.shape[:-2] + (H, W))
    out[..., ::2, ::2] = g
    return out


def hw_upsample_matrix(n_src: int, factor: int) -> np.ndarray:
    """Top-left-origin bilinear: output ``y`` reads source ``y / factor``, edge clamped."""
    n_out = n_src * factor
    s = np.clip(np.arange(n_out) / factor, 0, n_src - 1)
    f = np.floor(s).astype(np.intp)
    w = s - f
    f1 = np.minimum(f + 1, n_src - 1)
    A = np.zeros((n_out, n_src))
    np.add.at(A, (np.arange(n_out), f), 1.0 - w)
    np.add.at(A, (np.arange(n_out), f1), w)
    return A


def upsample_hw(x: Node, factor: int) -> Node:
    if factor == 1:
        return x
    H, W = x.shape[-2:]
    Ay, Ax = hw_upsample_matrix(H, factor), hw_upsample_matrix(W, factor)
    out = np.einsum("py,qx,...yx->...pq", Ay, Ax, x.value, optimize=True)
    return Node(out, (x,), lambda g: (np.einsum("py,qx,...pq->...yx", Ay, Ax, g, optimize=True),))


def reshape_vu(x: Node, V: int, U: int) -> Node:
    """``(N, V*U, H, W)`` channels to ``(N, V, U, H, W)``, channel order row-major in (v, u)."""
    N, C, H, W = x.shape
    if C != V * U:
        raise ValueError(f"{C} channels cannot form a {V}x{U} window")
    return Node(x.value.reshape(N, V, U, H, W), (x,), lambda g: (g.reshape(N, C, H, W),))


def shift_vu(x: Node, kv: int, ku: int, fill: float = 0.0) -> Node:
    return Node(
        T.shift_vu(x.value, kv, ku, fill),
        (x,),
        lambda g: (T.shift_vu(g, -kv, -ku, 0.0),),
    )


def upsample_vu(x: Node, lam: int, interp: T.Interp = T.Interp.BILINEAR) -> Node:
    if lam == 1:
        return x
    V, U = x.shape[-4:-2]
    return Node(
        T.upsample_vu(x.value, lam, interp),
        (x,),
        lambda g: (T.upsample_vu_adjoint(g, (V, U), lam, interp),),
    )


def swap_align2nat(x: Node, lam: int, interp: T.Interp = T.Interp.BILINEAR,
                   fill: float = 0.0) -> Node:
    src = x.shape[-4:]
    return Node(
        T.swap_fused(x.value, lam, interp, fill),
        (x,),
        lambda g: (T.swap_fused_adjoint(g, src, lam, interp),),
    )


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float) -> dict:
    """Momentum SGD: ``v <- m*v + g``; ``w <- w - lr*v``. Updates in place and returns params."""
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name}")
        v = velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        velocity[name] = v
        w -= lr * v
    return params
