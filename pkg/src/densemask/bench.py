"""Timing of the fused swap against the materializing two-step path."""

from __future__ import annotations

import csv
import time

import numpy as np

from .core import Repr, StructuredTensor, Units
from .oracles import swap_align2nat_naive
from .transforms import Interp, swap_align2nat

BENCH_FIELDS = ["lambda", "elements", "fused_ns", "naive_ns"]


def _best_ns(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return best


def bench_swap(lams=(2, 4, 8), vu: int = 15, hw: int = 64, repeats: int = 3, naive: bool = True,
               interp: Interp = Interp.BILINEAR, seed: int = 0) -> list[dict]:
    """Best-of-``repeats`` wall time for an aligned ``(vu, vu, hw, hw)`` input per lambda.

    Input and output hold the same ``vu*vu*hw*hw`` elements for every lambda,
    so the fused time should stay flat while the naive path, which builds a
    ``(lam*vu, lam*vu, hw, hw)`` intermediate, grows like ``lam^2``.
    """
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(vu, vu, hw, hw))
    rows = []
    for lam in lams:
        t = StructuredTensor(data, Repr.ALIGNED, Units(lam, 1))
        fused = _best_ns(lambda: swap_align2nat(t, lam, interp), repeats)
        slow = _best_ns(lambda: swap_align2nat_naive(t, lam, interp), repeats) if naive else -1
        rows.append({"lambda": lam, "elements": data.size, "fused_ns": fused, "naive_ns": slow})
    return rows


def write_csv(rows, f) -> None:
    w = csv.DictWriter(f, fieldnames=BENCH_FIELDS)
    w.writeheader()
    w.writerows(rows)
