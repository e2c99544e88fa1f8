"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

from . import nn
from .heads import Params, forward, init_params

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP, coords=None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (perturbed in place, then restored).

    ``coords`` restricts the check to a list of flat indices; other entries
    of the result are left at zero.
    """
    if not x.flags.c_contiguous:
        raise ValueError("x must be C-contiguous so in-place perturbations reach f")
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size) if coords is None else coords:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def check_linear_op(fwd, bwd, x: np.ndarray, rng, h: float = FD_STEP) -> float:
    """FD check of ``bwd`` as the gradient of ``<fwd(x), y>`` for a random ``y``."""
    y = rng.normal(size=np.shape(fwd(x)))
    x = x.copy()
    num = numeric_grad(lambda: float(np.sum(fwd(x) * y)), x, h)
    return rel_error(bwd(y), num)


def output_nodes(outs) -> list:
    nodes = []
    for lo in outs:
        nodes += list(lo.mask) + [lo.cls] + ([lo.box] if lo.box is not None else [])
    return nodes


def network_grad_errors(cfg, images: np.ndarray, rng, n_coords: int = 20, param_seed: int = 0,
                        h: float = FD_STEP) -> dict[str, float]:
    """FD check of the full network (every head stack) on random output probes.

    The objective is ``sum_i <output_i, Y_i>`` over all mask, class and box
    outputs with fixed random ``Y_i``. Returns the max relative error over
    ``n_coords`` random parameter entries and ``n_coords`` random input
    pixels.
    """
    params = init_params(cfg, param_seed)
    for k in params:
        params[k] = params[k] + 0.05 * rng.normal(size=params[k].shape)
    images = np.array(images, dtype=np.float64)
    probes = [rng.normal(size=n.shape) for n in output_nodes(forward(Params(params), cfg, images))]

    def objective():
        outs = forward(Params(params), cfg, images)
        return float(sum(np.sum(n.value * y) for n, y in zip(output_nodes(outs), probes)))

    P = Params(params)
    x = nn.leaf(images)
    nn.backprop(list(zip(output_nodes(forward(P, cfg, x)), probes)))
    grads = P.grads()

    names = sorted(params)
    worst_p = 0.0
    for _ in range(n_coords):
        name = names[int(rng.integers(len(names)))]
        i = int(rng.integers(params[name].size))
        num = numeric_grad(objective, params[name], h, [i]).reshape(-1)[i]
        worst_p = max(worst_p, rel_error(grads[name].reshape(-1)[i], num))
    coords = rng.choice(images.size, size=min(n_coords, images.size), replace=False)
    num_x = numeric_grad(objective, images, h, coords).reshape(-1)[coords]
    worst_x = rel_error(x.grad.reshape(-1)[coords], num_x)
    return {"params": worst_p, "input": worst_x}
