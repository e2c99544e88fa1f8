"""Randomized transform-vs-oracle comparisons, reported as a table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracles as O
from . import transforms as T
from .core import Repr, StructuredTensor, Units
from .transforms import Interp


@dataclass
class CheckRow:
    name: str
    cases: int
    mismatches: int
    max_abs_err: float

    @property
    def ok(self) -> bool:
        return self.mismatches == 0


def random_tensor(rng, shape, repr: Repr, units: Units) -> StructuredTensor:
    return StructuredTensor(rng.normal(size=shape), repr, units)


def _compare(name, pairs) -> CheckRow:
    bad, err, n = 0, 0.0, 0
    for a, b in pairs:
        n += 1
        if a.shape != b.shape or not np.array_equal(a, b):
            bad += 1
            if a.shape == b.shape:
                err = max(err, float(np.max(np.abs(a - b))))
            else:
                err = float("inf")
    return CheckRow(name, n, bad, err)


def _cases_align2nat(rng, n):
    for _ in range(n):
        V, U = rng.integers(1, 6, size=2)
        H, W = rng.integers(1, 9, size=2)
        a = int(rng.integers(1, 3))
        t = random_tensor(rng, (V, U, H, W), Repr.ALIGNED, Units(a, 1))
        yield T.align2nat(t).data, O.align2nat_bruteforce(t).data


def _cases_nat2align(rng, n):
    for _ in range(n):
        V, U = rng.integers(1, 6, size=2)
        H, W = rng.integers(1, 9, size=2)
        a = int(rng.integers(1, 3))
        t = random_tensor(rng, (V, U, H, W), Repr.NATURAL, Units(a, 1))
        yield T.nat2align(t).data, O.nat2align_bruteforce(t).data


def _cases_swap(rng, n):
    for _ in range(n):
        lam = int(rng.choice([1, 2, 4]))
        V, U = rng.integers(1, 6, size=2)
        H, W = lam * rng.integers(1, 16 // lam + 1, size=2)
        interp = Interp.BILINEAR if rng.random() < 0.5 else Interp.NEAREST
        t = random_tensor(rng, (V, U, H, W), Repr.ALIGNED, Units(lam, 1))
        yield T.swap_align2nat(t, lam, interp).data, O.swap_align2nat_naive(t, lam, interp).data


def _cases_instancefcn(rng, n):
    for _ in range(n):
        K = int(rng.choice([1, 3, 5]))
        V = int(rng.choice([9, 15]))
        H, W = rng.integers(1, 7, size=2)
        g = random_tensor(rng, (K, K, H, W), Repr.ALIGNED, Units(1, 1))
        yield T.instancefcn_decode(g, V, V).data, O.instancefcn_direct(g, V, V).data


def _cases_general(rng, n):
    for _ in range(n):
        V, U = rng.integers(1, 5, size=2)
        H, W = rng.integers(1, 7, size=2)
        a = int(rng.integers(1, 3))
        units = Units(a, 1)
        t = random_tensor(rng, (V, U, H, W), Repr.ALIGNED, units)
        yield T.align2nat_general(t, units).data, O.align2nat_general_bruteforce(t, units).data


CHECKS = {
    "align2nat": _cases_align2nat,
    "nat2align": _cases_nat2align,
    "swap_align2nat": _cases_swap,
    "instancefcn_decode": _cases_instancefcn,
    "align2nat_general": _cases_general,
}


def check_transforms(seed: int = 0, cases: int = 50) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    return [_compare(name, gen(rng, cases)) for name, gen in CHECKS.items()]


def format_rows(rows: list[CheckRow]) -> str:
    lines = [f"{'op':<22}{'cases':>7}{'mismatch':>10}{'max_err':>12}  status"]
    for r in rows:
        lines.append(f"{r.name:<22}{r.cases:>7}{r.mismatches:>10}{r.max_abs_err:>12.3g}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)


def apply_op(t: StructuredTensor, op: str, lam: int = 1, interp: Interp = Interp.BILINEAR,
             fill: float = 0.0) -> StructuredTensor:
    """Run one named transform on a loaded tensor (for fixture exchange)."""
    if op == "align2nat":
        return T.align2nat(t, fill)
    if op == "nat2align":
        return T.nat2align(t, fill)
    if op == "up_align2nat":
        return T.up_align2nat(t, lam, interp, fill)
    if op == "swap_align2nat":
        return T.swap_align2nat(t, lam, interp, fill)
    if op == "up_bilinear_vu":
        return T.up_bilinear_vu(t, lam, interp)
    if op == "subsample_hw":
        return T.subsample_hw(t, lam)
    raise ValueError(f"unknown op {op!r}")
