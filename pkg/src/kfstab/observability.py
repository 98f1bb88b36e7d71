"""Block observability matrices, rank tests and the kernel lattice."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .fmo import FmoBlock
from .matrix_core import DEFAULT_TOL, Subspace, Tolerances, block_power, intersect, nullspace, subspace_equal
from .model import SystemModel

ENUMERATION_CAP = 10**6
DELETION_CAP = 10**5


class LatticeCapError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ObsMatrix:
    block: object
    gamma: tuple
    matrix: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape


def _block_data(block, alphabet):
    if isinstance(block, FmoBlock):
        return block.A, block.C_parts
    if isinstance(block, SystemModel):
        return block.A, tuple(block.alphabet.C_stack)
    A, Cs = block
    return np.asarray(A, dtype=complex), tuple(np.asarray(c, dtype=complex) for c in Cs)


def build_obs(block, alphabet, gamma, offset: int = 0) -> ObsMatrix:
    """Stack ``C_{gamma_s} A^(offset + s)`` for ``s = 0..T-1``.

    ``block`` is an :class:`FmoBlock`, a whole :class:`SystemModel`, or a raw
    ``(A, C_list)`` pair; ``alphabet`` is accepted for symmetry with the
    whole-system case and otherwise unused.
    """
    A, Cs = _block_data(block, alphabet)
    gamma = tuple(int(g) for g in gamma)
    n = A.shape[0]
    if not gamma:
        return ObsMatrix(block, gamma, np.zeros((0, n), dtype=complex))
    rows = []
    power = block_power(A, offset)
    for s, g in enumerate(gamma):
        if s:
            # closed-form binomial powers past 64 steps limit error build-up
            power = block_power(A, offset + s) if offset + s > 64 else power @ A
        rows.append(Cs[g] @ power)
    return ObsMatrix(block, gamma, np.vstack(rows))


def _as_matrix(o) -> np.ndarray:
    return o.matrix if isinstance(o, ObsMatrix) else np.asarray(o, dtype=complex)


def has_fcr(o, tol: Tolerances = DEFAULT_TOL) -> bool:
    m = _as_matrix(o)
    if m.shape[0] == 0:
        return False
    return nullspace(m, tol).dim == 0


def fcr_strength(o, q: int, tol: Tolerances = DEFAULT_TOL) -> tuple[bool, bool]:
    """Full column rank with strength ``q``; returns ``(holds, exact)``.

    Exact by enumerating deleted row sets when there are at most
    ``DELETION_CAP`` of them.  Otherwise a sufficient test is used (every
    ``n``-subset of nonzero rows independent) and an unconfirmed result is
    reported with ``exact=False``.
    """
    if q < 0:
        raise ValueError("q must be >= 0")
    m = _as_matrix(o)
    rows, n = m.shape
    if rows <= q:
        return False, True
    if comb(rows, q) <= DELETION_CAP:
        for drop in itertools.combinations(range(rows), q):
            keep = np.delete(m, list(drop), axis=0)
            if not has_fcr(keep, tol):
                return False, True
        return True, True
    nz = m[np.linalg.norm(m, axis=1) > 1e-300]
    if len(nz) - q < n:
        return False, True
    if comb(len(nz), n) <= DELETION_CAP:
        general = all(has_fcr(nz[list(s)], tol) for s in itertools.combinations(range(len(nz)), n))
        if general:
            return True, True
    return False, False


def has_fcr_strength(o, q: int, tol: Tolerances = DEFAULT_TOL) -> bool:
    return fcr_strength(o, q, tol)[0]


def obs_kernel(block, gamma, tol: Tolerances = DEFAULT_TOL, offset: int = 0) -> Subspace:
    return nullspace(build_obs(block, None, gamma, offset).matrix, tol)


@dataclass(frozen=True, eq=False)
class KernelLattice:
    """Kernels of length-N block observability matrices, closed under intersection.

    ``invariant`` records whether every element is mapped into itself by
    ``A^N``; only then is the kernel of a concatenation the meet of the
    chunk kernels.  ``elements[0]`` is the whole block space and ``elements[-1]`` the trivial
    subspace; strict containment always points to a larger index.
    """

    block: FmoBlock
    elements: tuple
    meet_table: np.ndarray
    psi_table: dict
    invariant: bool

    @property
    def N(self) -> int:
        return self.block.order

    @property
    def I(self) -> int:
        return len(self.elements) - 1

    def index_of(self, s: Subspace, tol: Tolerances = DEFAULT_TOL) -> int | None:
        return _find(self.elements, s, tol)

    def psi(self, gamma) -> int:
        """Lattice index of ``ker O(gamma)`` for ``len(gamma)`` a multiple of N."""
        gamma = tuple(gamma)
        N = self.N
        if len(gamma) % N:
            raise ValueError(f"sequence length {len(gamma)} is not a multiple of N={N}")
        idx = 0
        for c in range(0, len(gamma), N):
            idx = int(self.meet_table[idx, self.psi_table[gamma[c:c + N]]])
        return idx

    def summary(self) -> dict:
        return {"size": len(self.elements), "dims": [e.dim for e in self.elements], "invariant": self.invariant}


def _find(elements, s: Subspace, tol: Tolerances) -> int | None:
    for i, e in enumerate(elements):
        if e.dim == s.dim and subspace_equal(e, s, tol):
            return i
    return None


def build_lattice(block: FmoBlock, alphabet=None, tol: Tolerances = DEFAULT_TOL,
                  cap: int = ENUMERATION_CAP) -> KernelLattice:
    n = block.size
    n_sym = len(block.C_parts)
    N = block.order
    if n_sym ** N > cap:
        raise LatticeCapError(
            f"{n_sym}^{N} sequences exceed the enumeration cap {cap}; use the Monte Carlo estimator")

    elements = [Subspace.full(n)]
    seq_kernel = {}
    for seq in itertools.product(range(n_sym), repeat=N):
        k = obs_kernel(block, seq, tol)
        i = _find(elements, k, tol)
        if i is None:
            elements.append(k)
            i = len(elements) - 1
        seq_kernel[seq] = elements[i]
    if _find(elements, Subspace.trivial(n), tol) is None:
        elements.append(Subspace.trivial(n))

    # close under pairwise intersection
    changed = True
    while changed:
        changed = False
        for a, b in itertools.combinations(list(elements), 2):
            m = intersect(a, b, tol)
            if _find(elements, m, tol) is None:
                elements.append(m)
                changed = True

    elements.sort(key=lambda e: -e.dim)
    size = len(elements)
    meet = np.empty((size, size), dtype=int)
    for i in range(size):
        for j in range(i, size):
            k = _find(elements, intersect(elements[i], elements[j], tol), tol)
            meet[i, j] = meet[j, i] = k
    psi = {seq: _find(elements, k, tol) for seq, k in seq_kernel.items()}
    # chunks start at multiples of N, so exact composition needs A^N-invariance
    AN = block_power(block.A, N)
    invariant = all(e.contains(Subspace.span(AN @ e.basis), tol) for e in elements if 0 < e.dim < n)
    return KernelLattice(block, tuple(elements), meet, psi, invariant)


class KernelTracker:
    """Incremental ``ker O(Gamma)`` bookkeeping for a block.

    Kernels are interned in a registry (id 0 is the whole space); the step
    ``K -> K & ker(C_g A^s)`` is cached per ``(id, symbol, s)``.  Works for
    any Jordan block, including ones whose lattice is not A-invariant.
    """

    def __init__(self, block: FmoBlock, tol: Tolerances = DEFAULT_TOL, seed_elements=()):
        self.block = block
        self.tol = tol
        self.kernels: list[Subspace] = [Subspace.full(block.size)]
        for e in seed_elements:
            self.intern(e)
        self._row_kernels: dict = {}
        self._steps: dict = {}

    def intern(self, s: Subspace) -> int:
        i = _find(self.kernels, s, self.tol)
        if i is None:
            self.kernels.append(s)
            i = len(self.kernels) - 1
        return i

    def dim(self, kid: int) -> int:
        return self.kernels[kid].dim

    def dims(self) -> np.ndarray:
        return np.array([k.dim for k in self.kernels])

    def row_kernel(self, sym: int, s: int) -> Subspace:
        key = (sym, s)
        if key not in self._row_kernels:
            self._row_kernels[key] = obs_kernel(self.block, (sym,), self.tol, offset=s)
        return self._row_kernels[key]

    def step(self, kid: int, sym: int, s: int) -> int:
        key = (kid, sym, s)
        out = self._steps.get(key)
        if out is None:
            cur = self.kernels[kid]
            out = kid if cur.dim == 0 else self.intern(intersect(cur, self.row_kernel(sym, s), self.tol))
            self._steps[key] = out
        return out

    def step_many(self, kids: np.ndarray, syms: np.ndarray, s: int) -> np.ndarray:
        """Vectorised :meth:`step` over arrays of kernel ids and symbols."""
        width = int(syms.max()) + 1 if syms.size else 1
        codes = kids.astype(np.int64) * width + syms
        uniq, inv = np.unique(codes, return_inverse=True)
        mapped = np.array([self.step(int(c // width), int(c % width), s) for c in uniq], dtype=int)
        return mapped[inv]
