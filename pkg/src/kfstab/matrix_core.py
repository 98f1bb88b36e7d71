"""Dense complex linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays of dtype ``complex128``; :func:`cmatrix`
is the single entry point that coerces and validates them.  Subspaces carry
an orthonormal basis so that intersection and equality tests reduce to
small SVD problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

DENSE_EIG_LIMIT = 512


@dataclass(frozen=True)
class Tolerances:
    tol_rank: float = 1e-9
    tol_orth: float = 1e-10
    tol_angle: float = 1e-9
    n_max_order: int = 64
    eps_margin: float = 1e-6

    def __post_init__(self):
        for name in ("tol_rank", "tol_orth", "tol_angle", "eps_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.n_max_order < 1:
            raise ValueError("n_max_order must be >= 1")

    @property
    def angle_cutoff(self) -> float:
        """Largest principal angle (radians) still treated as zero."""
        return float(np.sqrt(self.tol_rank))


DEFAULT_TOL = Tolerances()


def cmatrix(data, rows: int | None = None, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    """Coerce ``data`` into a finite 2-D complex array, checking the shape if asked."""
    m = np.array(data, dtype=complex)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got {m.ndim} dimensions")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name}: entries must be finite")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"{name}: expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"{name}: expected {cols} columns, got {m.shape[1]}")
    return m


@dataclass(frozen=True, eq=False)
class Subspace:
    """A subspace of C^n stored through an orthonormal basis (n x dim)."""

    ambient_dim: int
    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=complex).reshape(self.ambient_dim, -1)
        object.__setattr__(self, "basis", b)
        if b.shape[1] > self.ambient_dim:
            raise ValueError("basis has more columns than the ambient dimension")
        if b.shape[1]:
            gram = b.conj().T @ b
            if np.max(np.abs(gram - np.eye(b.shape[1]))) > 1e3 * DEFAULT_TOL.tol_orth:
                raise ValueError("basis columns are not orthonormal")

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(n, np.eye(n, dtype=complex))

    @classmethod
    def trivial(cls, n: int) -> "Subspace":
        return cls(n, np.zeros((n, 0), dtype=complex))

    @classmethod
    def span(cls, vectors) -> "Subspace":
        """Orthonormalised span of the columns of ``vectors``."""
        v = cmatrix(vectors)
        if v.shape[1] == 0:
            return cls.trivial(v.shape[0])
        q = scipy.linalg.orth(v)
        return cls(v.shape[0], q)

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def contains(self, other: "Subspace", tol: Tolerances = DEFAULT_TOL) -> bool:
        """True if ``other`` is (numerically) a subspace of ``self``."""
        _check_ambient(self, other)
        if other.dim == 0:
            return True
        if other.dim > self.dim:
            return False
        resid = other.basis - self.basis @ (self.basis.conj().T @ other.basis)
        return np.linalg.norm(resid, 2) <= np.sin(tol.angle_cutoff)

    def __repr__(self):
        return f"Subspace(ambient_dim={self.ambient_dim}, dim={self.dim})"


def _check_ambient(a: Subspace, b: Subspace):
    if a.ambient_dim != b.ambient_dim:
        raise ValueError(f"ambient dimension mismatch: {a.ambient_dim} vs {b.ambient_dim}")


def numerical_rank(m: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> int:
    m = np.asarray(m, dtype=complex)
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol.tol_rank * s[0]))


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    keep = norms > 1e-300
    return m[keep] / norms[keep, None]


def nullspace(m, tol: Tolerances = DEFAULT_TOL, normalize_rows: bool = True) -> Subspace:
    """Orthonormal basis of ``{x : m x = 0}``.

    Rows are scaled to unit norm first (zero rows dropped); this leaves the
    kernel unchanged while keeping rows that grow like |alpha|^t comparable.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[1] == 0:
        raise ValueError("nullspace needs a nonempty 2-D matrix")
    n = m.shape[1]
    if normalize_rows:
        m = _normalize_rows(m)
    if m.shape[0] == 0 or not np.any(m):
        return Subspace.full(n)
    _, s, vh = np.linalg.svd(m, full_matrices=True)
    rank = int(np.sum(s > tol.tol_rank * s[0]))
    basis = vh[rank:].conj().T
    return Subspace(n, basis)


def intersect(a: Subspace, b: Subspace, tol: Tolerances = DEFAULT_TOL) -> Subspace:
    _check_ambient(a, b)
    n = a.ambient_dim
    if a.dim == 0 or b.dim == 0:
        return Subspace.trivial(n)
    if a.dim == n:
        return b
    if b.dim == n:
        return a
    eye = np.eye(n)
    stacked = np.vstack([eye - a.projector(), eye - b.projector()])
    return nullspace(stacked, tol, normalize_rows=False)


def subspace_equal(a: Subspace, b: Subspace, tol: Tolerances = DEFAULT_TOL) -> bool:
    _check_ambient(a, b)
    if a.dim != b.dim:
        return False
    if a.dim == 0:
        return True
    # sine of the largest principal angle
    resid = b.basis - a.basis @ (a.basis.conj().T @ b.basis)
    return float(np.linalg.norm(resid, 2)) <= np.sin(tol.angle_cutoff)


def spectral_radius(m) -> float:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("spectral_radius needs a square matrix")
    n = m.shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_EIG_LIMIT:
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    try:
        vals = scipy.sparse.linalg.eigs(m, k=1, which="LM", return_eigenvectors=False, v0=np.ones(n))
        return float(np.abs(vals[0]))
    except scipy.sparse.linalg.ArpackNoConvergence:
        return _power_radius(m)


def _power_radius(m: np.ndarray, iters: int = 5000) -> float:
    # Gelfand-style growth estimate, deterministic start vector
    x = np.ones(m.shape[0], dtype=complex) / np.sqrt(m.shape[0])
    log_growth = 0.0
    for k in range(1, iters + 1):
        x = m @ x
        nrm = np.linalg.norm(x)
        if nrm == 0:
            return 0.0
        log_growth += np.log(nrm)
        x /= nrm
    return float(np.exp(log_growth / iters))


def kron(a, b) -> np.ndarray:
    return np.kron(np.asarray(a), np.asarray(b))


# --- Jordan-form utilities ---------------------------------------------------

def jordan_block(alpha: complex, size: int) -> np.ndarray:
    return alpha * np.eye(size, dtype=complex) + np.eye(size, k=1, dtype=complex)


def jordan_chains(a, atol: float = 1e-12) -> list[tuple[int, int, complex]]:
    """Split a Jordan-form matrix into chains ``(start, size, eigenvalue)``.

    Raises ``ValueError`` if ``a`` is not in Jordan normal form.
    """
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("A must be square")
    allowed = np.eye(n, dtype=bool) | np.eye(n, k=1, dtype=bool)
    if np.any(np.abs(a[~allowed]) > atol):
        raise ValueError("A is not in Jordan form: nonzero entries off the diagonal and superdiagonal")
    sup = np.diag(a, 1)
    for v in sup:
        if abs(v) > atol and abs(v - 1) > atol:
            raise ValueError("A is not in Jordan form: superdiagonal entries must be 0 or 1")
    chains = []
    start = 0
    for i in range(n):
        last = i == n - 1 or abs(sup[i]) <= atol
        if not last and abs(a[i, i] - a[i + 1, i + 1]) > atol:
            raise ValueError("A is not in Jordan form: chain with unequal diagonal entries")
        if last:
            chains.append((start, i - start + 1, complex(a[start, start])))
            start = i + 1
    return chains


def jordan_power(alpha: complex, size: int, t: int) -> np.ndarray:
    """``J_size(alpha)**t`` from the binomial closed form (t may be negative)."""
    out = np.zeros((size, size), dtype=complex)
    for j in range(size):
        if t >= 0:
            c = comb(t, j) if j <= t else 0
        else:
            c = (-1) ** j * comb(-t + j - 1, j)
        if c == 0:
            continue
        out += np.eye(size, k=j) * (c * alpha ** (t - j))
    return out


def block_power(a, t: int) -> np.ndarray:
    """Power of a Jordan-form matrix; chains use the binomial closed form."""
    a = np.asarray(a, dtype=complex)
    if t <= 64:
        return np.linalg.matrix_power(a, t)
    out = np.zeros_like(a)
    for start, size, lam in jordan_chains(a):
        sl = slice(start, start + size)
        out[sl, sl] = jordan_power(lam, size, t)
    return out


def _scaled_norms(alpha: complex, size: int, t: int) -> tuple[float, float]:
    # ||A^t|| / |alpha|^t and ||A^-t|| * |alpha|^t, overflow-free
    fwd = np.zeros((size, size), dtype=complex)
    inv = np.zeros((size, size), dtype=complex)
    for j in range(size):
        fwd += np.eye(size, k=j) * (comb(t, j) * alpha ** (-j) if j <= t else 0)
        inv += np.eye(size, k=j) * ((-1) ** j * comb(t + j - 1, j) * alpha ** (-j))
    return float(np.linalg.norm(fwd, 2)), float(np.linalg.norm(inv, 2))


def matrix_power_norm(alpha: complex, J: int, t: int, t_max: int = 100) -> tuple[float, float, float]:
    """Norm of ``J_J(alpha)**t`` with polynomial-times-geometric envelopes.

    Returns ``(norm, upper, lower)`` with ``upper = |alpha|^t c1 t^(J-1)`` and
    ``lower = |alpha|^t c2 t^(1-J)`` bounding ``||A^t||`` from above and
    ``||A^-t||^-1`` from below.  ``c1``/``c2`` are the extremal ratios over
    ``1 <= t' <= max(t, t_max)``.
    """
    if alpha == 0:
        raise ValueError("alpha must be nonzero")
    if J < 1 or t < 1:
        raise ValueError("J and t must be >= 1")
    horizon = max(t, t_max)
    c1, c2 = 0.0, np.inf
    for s in range(1, horizon + 1):
        f, g = _scaled_norms(alpha, J, s)
        c1 = max(c1, f / s ** (J - 1))
        c2 = min(c2, (1.0 / g) / s ** (1 - J))
    f, _ = _scaled_norms(alpha, J, t)
    mag = abs(alpha) ** t
    return mag * f, mag * c1 * t ** (J - 1), mag * c2 * t ** (1 - J)
