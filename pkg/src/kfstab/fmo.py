"""Partition of a Jordan-form state matrix into FMO blocks.

Two eigenvalues share a block when their ratio is a root of unity.  Roots of
unity are recognised up to order ``Tolerances.n_max_order`` by rational
approximation of ``arg(x / alpha) / 2 pi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np

from .matrix_core import DEFAULT_TOL, Tolerances, jordan_chains
from .model import SystemModel


class PartitionError(ValueError):
    pass


def cfmo(values, tol: Tolerances = DEFAULT_TOL) -> tuple[int, complex] | None:
    """Smallest common finite multiplicative order of ``values``.

    Returns ``(N, alpha)`` with ``alpha`` the first value, so that every
    ``x**N == alpha**N``; ``None`` if no order up to ``n_max_order`` works.
    """
    vals = [complex(v) for v in values]
    if not vals:
        raise ValueError("cfmo needs at least one value")
    if any(v == 0 for v in vals):
        raise ValueError("cfmo is undefined for zero values")
    alpha = vals[0]
    order = 1
    for x in vals[1:]:
        r = x / alpha
        if abs(abs(r) - 1.0) > tol.tol_angle:
            return None
        turn = (np.angle(r) / (2 * np.pi)) % 1.0
        frac = Fraction(turn).limit_denominator(tol.n_max_order)
        if abs(float(frac) - turn) > tol.tol_angle:
            return None
        order = lcm(order, frac.denominator)
        if order > tol.n_max_order:
            return None
    return order, alpha


@dataclass(frozen=True, eq=False)
class FmoBlock:
    index: int
    col_range: tuple[int, int]
    alpha: complex
    order: int
    jbar: int
    A: np.ndarray
    C_parts: tuple
    eigenvalues: tuple = field(default=())

    @property
    def cols(self) -> slice:
        return slice(*self.col_range)

    @property
    def size(self) -> int:
        return self.col_range[1] - self.col_range[0]

    @property
    def is_zero(self) -> bool:
        return self.alpha == 0

    def summary(self) -> dict:
        return {"index": self.index, "columns": list(self.col_range), "alpha": [self.alpha.real, self.alpha.imag],
                "abs_alpha": abs(self.alpha), "order": self.order, "jbar": self.jbar}


@dataclass(frozen=True, eq=False)
class FmoPartition:
    blocks: tuple

    @property
    def jbar_global(self) -> int:
        return max(b.jbar for b in self.blocks)

    @property
    def N_lcm(self) -> int:
        return lcm(*(b.order for b in self.blocks))

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __getitem__(self, k):
        return self.blocks[k]


def partition(system: SystemModel, tol: Tolerances = DEFAULT_TOL) -> FmoPartition:
    """Group contiguous Jordan chains into maximal FMO blocks.

    Equal-CFMO chains must already be adjacent in ``A``; a compatible chain
    separated from its group raises :class:`PartitionError`.
    """
    try:
        chains = jordan_chains(system.A)
    except ValueError as exc:
        raise PartitionError(str(exc)) from exc
    groups: list[dict] = []
    for start, size, lam in chains:
        is_zero = abs(lam) == 0.0
        cur = groups[-1] if groups else None
        if cur is not None and _joins(cur, lam, is_zero, tol):
            cur["stop"] = start + size
            cur["values"].append(lam)
            cur["jbar"] = max(cur["jbar"], size)
            continue
        for g in groups[:-1]:
            if _joins(g, lam, is_zero, tol):
                raise PartitionError(
                    f"eigenvalue {lam:.6g} at column {start} belongs with columns {g['start']}..{g['stop'] - 1}; "
                    "permute A (and the columns of every C) so that these Jordan blocks are adjacent")
        groups.append({"start": start, "stop": start + size, "values": [lam], "jbar": size, "zero": is_zero})

    blocks = []
    for g in groups:
        if g["zero"]:
            order, alpha = 1, 0j
        else:
            order, alpha = cfmo(g["values"], tol)
        cols = slice(g["start"], g["stop"])
        blocks.append(dict(col_range=(g["start"], g["stop"]), alpha=alpha, order=order, jbar=g["jbar"],
                           A=system.A[cols, cols].copy(),
                           C_parts=tuple(c[:, cols].copy() for c in system.alphabet.C_stack),
                           eigenvalues=tuple(g["values"])))
    blocks.sort(key=lambda b: (-abs(b["alpha"]), -b["jbar"]))
    return FmoPartition(tuple(FmoBlock(index=k, **b) for k, b in enumerate(blocks)))


def _joins(group: dict, lam: complex, is_zero: bool, tol: Tolerances) -> bool:
    if group["zero"] or is_zero:
        return group["zero"] and is_zero
    return cfmo(group["values"] + [lam], tol) is not None
