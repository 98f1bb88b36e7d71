"""Per-block stability exponent Phi and the resulting verdict.

Three estimators are offered:

* ``phi_exact``: spectral radius of the lattice transition operators built
  from the finite hidden chain (window length ``M = lcm(N, tau)``).
* ``phi_closed_form``: product of conditional "stay blind" probabilities,
  valid when exactly one block-level measurement matrix is blind.
* ``phi_monte_carlo``: decay rate of the sampled non-full-rank probability,
  fitted by generalised least squares.
"""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import lcm

import numpy as np
from scipy import stats

from .fmo import FmoBlock, FmoPartition, partition
from .matrix_core import DEFAULT_TOL, Tolerances, numerical_rank, spectral_radius
from .model import (DiagnosticsReport, FiniteMarkovChannel, GaussianHiddenChannel, SystemModel, make_rng,
                    phase_support, sample_paths, sequence_probability, spawn_seeds, stationary_phase_distribution,
                    validate)
from .observability import (KernelLattice, KernelTracker, LatticeCapError, build_lattice, build_obs, has_fcr)

log = logging.getLogger(__name__)

SIGMA_CAP = 10**7
MIN_HITS = 20
CI_LEVEL = 0.95

STABLE, UNSTABLE, INCONCLUSIVE = "Stable", "Unstable", "Inconclusive"


class SigmaCapError(RuntimeError):
    pass


@dataclass
class PhiResult:
    block: int
    phi: float
    method: str
    abs_alpha: float
    ci: tuple | None = None
    per_phase: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    seconds: float | None = None

    @property
    def margin(self) -> float:
        return self.abs_alpha ** 2 * self.phi

    def to_dict(self, timings: bool = True) -> dict:
        d = {"block": self.block, "phi": self.phi, "method": self.method, "abs_alpha": self.abs_alpha,
             "margin": self.margin, "ci": list(self.ci) if self.ci is not None else None,
             "per_phase": list(self.per_phase), "flags": list(self.flags)}
        if timings:
            d["seconds"] = self.seconds
        return d


@dataclass
class StabilityReport:
    results: list
    verdict: str
    eps_margin: float
    diagnostics: DiagnosticsReport | None = None

    def to_dict(self, timings: bool = True) -> dict:
        return {"verdict": self.verdict, "eps_margin": self.eps_margin,
                "blocks": [r.to_dict(timings) for r in self.results],
                "diagnostics": self.diagnostics.to_dict() if self.diagnostics else None}


def window_length(block: FmoBlock, channel) -> int:
    return lcm(block.order, channel.period)


# --- exact spectral route --------------------------------------------------

@dataclass(frozen=True, eq=False)
class SigmaOperator:
    """``matrices[(i, j)][e2, e]``: probability that a window started in state
    ``e`` moves the kernel from ``K_j`` to ``K_i`` and ends in state ``e2``.

    Rows/columns are indexed by ``support`` (the phase-``t`` support of the
    hidden chain).
    """

    block: FmoBlock
    lattice: KernelLattice
    t: int
    M: int
    support: np.ndarray
    matrices: dict

    def transition(self) -> np.ndarray:
        """Sum of ``matrices[(i, 0)]`` over ``i``: the plain M-step chain."""
        return sum(m for (i, j), m in self.matrices.items() if j == 0)


def build_sigma(block: FmoBlock, lattice: KernelLattice, channel, t: int, M: int | None = None,
                cap: int = SIGMA_CAP) -> SigmaOperator:
    if not isinstance(channel, FiniteMarkovChannel):
        raise TypeError("build_sigma needs a finite-state channel")
    M = M or window_length(block, channel)
    if M % block.order or M % channel.period:
        raise ValueError("M must be a common multiple of N and the channel period")
    N = block.order
    h = channel.emission
    S = phase_support(channel, t)
    n_states = channel.n_states
    symbols = np.unique(h)
    masks = {a: (h == a) for a in symbols}

    def advance(key, a):
        idx, part = key
        part = part + (int(a),)
        if len(part) == N:
            idx = int(lattice.meet_table[idx, lattice.psi_table[part]])
            part = ()
        return idx, part

    dp: dict = {}
    for a in np.unique(h[S]):
        mat = np.zeros((len(S), n_states))
        rows = np.flatnonzero(h[S] == a)
        mat[rows, S[rows]] = 1.0
        dp[advance((0, ()), a)] = mat
    ops = 0
    for m in range(1, M):
        K = channel.kernel(t + m - 1)
        nxt: dict = {}
        for key, mat in dp.items():
            prop = mat @ K
            ops += prop.size * n_states
            for a in symbols:
                part = prop * masks[a]
                if not part.any():
                    continue
                k2 = advance(key, a)
                nxt[k2] = nxt[k2] + part if k2 in nxt else part
        dp = nxt
        if ops > cap:
            raise SigmaCapError(f"window enumeration exceeds {cap} path-weight operations")

    I = lattice.I
    K = channel.kernel(t + M - 1)
    mats = {}
    for (w, part), mat in dp.items():
        assert part == ()
        end = (mat @ K)[:, S].T
        for j in range(I + 1):
            i = int(lattice.meet_table[w, j])
            mats[(i, j)] = mats[(i, j)] + end if (i, j) in mats else end.copy()
    zero = np.zeros((len(S), len(S)))
    for i, j in itertools.product(range(I + 1), repeat=2):
        mats.setdefault((i, j), zero.copy())
    return SigmaOperator(block, lattice, t, M, S, mats)


def _is_proper(channel: FiniteMarkovChannel) -> bool:
    for s in range(channel.period):
        a, b = phase_support(channel, s), phase_support(channel, s + 1)
        if np.any(channel.kernel(s)[np.ix_(a, b)] <= 0):
            return False
    return True


def phi_exact(block: FmoBlock, lattice: KernelLattice, channel, tol: Tolerances = DEFAULT_TOL,
              cap: int = SIGMA_CAP) -> PhiResult:
    t0 = time.perf_counter()
    M = window_length(block, channel)
    per_phase = []
    for t in range(channel.period):
        sig = build_sigma(block, lattice, channel, t, M, cap)
        rho = max(spectral_radius(sig.matrices[(i, i)]) for i in range(lattice.I))
        per_phase.append(rho ** (1.0 / M))
    flags = []
    if not _is_proper(channel):
        flags.append("channel_not_proper")
    if not lattice.invariant:
        flags.append("lattice_not_A_invariant")
    return PhiResult(block.index, float(max(per_phase)), "exact", abs(block.alpha), None, per_phase, flags,
                     time.perf_counter() - t0)


# --- closed form -----------------------------------------------------------

def _group_block_matrices(block: FmoBlock) -> list[list[int]]:
    groups: list[list[int]] = []
    for d, c in enumerate(block.C_parts):
        for g in groups:
            ref = block.C_parts[g[0]]
            if np.allclose(c, ref, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(ref).max())):
                g.append(d)
                break
        else:
            groups.append([d])
    return groups


def _observable(A: np.ndarray, C: np.ndarray, tol: Tolerances) -> bool:
    n = A.shape[0]
    rows, p = [], np.eye(n, dtype=complex)
    for _ in range(n):
        rows.append(C @ p)
        p = p @ A
    return has_fcr(np.vstack(rows), tol)


def closed_form_blind_symbols(block: FmoBlock, tol: Tolerances = DEFAULT_TOL) -> list[int] | None:
    """Alphabet indices sharing the single blind block matrix, or ``None``.

    Applies when exactly one distinct block-level matrix lacks full column
    rank, it leaves ``(A_k, C)`` unobservable, and all others have full
    column rank.
    """
    groups = _group_block_matrices(block)
    n = block.size
    deficient = [g for g in groups if numerical_rank(block.C_parts[g[0]], tol) < n]
    if len(deficient) != 1:
        return None
    if _observable(block.A, block.C_parts[deficient[0][0]], tol):
        return None
    return deficient[0]


def phi_closed_form(block: FmoBlock, channel, tol: Tolerances = DEFAULT_TOL, max_periods: int = 100_000,
                    alphabet=None) -> PhiResult | None:
    """Product over one period of ``P(blind at t | blind at every earlier time)``.

    The conditionals are taken in the infinite-past limit by iterating the
    normalised forward filter on the all-blind event until it settles.
    """
    if not isinstance(channel, FiniteMarkovChannel):
        return None
    blind_syms = closed_form_blind_symbols(block, tol)
    if blind_syms is None:
        return None
    t0 = time.perf_counter()
    flags = []
    if alphabet is not None and len({_rkey(alphabet.R(d)) for d in blind_syms}) > 1:
        flags.append("blind_symbol_has_several_R")
    blind = np.isin(channel.emission, blind_syms)
    tau = channel.period
    v = stationary_phase_distribution(channel, 0).copy()
    conds = np.ones(tau)
    prev = None
    for _ in range(max_periods):
        for s in range(tau):
            mass = float(v[blind].sum())
            conds[s] = mass
            if mass <= 0.0:
                return PhiResult(block.index, 0.0, "closed_form", abs(block.alpha), None, [0.0] * tau,
                                 flags, time.perf_counter() - t0)
            v = np.where(blind, v, 0.0) / mass
            v = v @ channel.kernel(s)
        if prev is not None and np.max(np.abs(conds - prev)) <= 1e-15:
            break
        prev = conds.copy()
    else:
        flags.append("filter_not_converged")
    phi = float(np.prod(conds) ** (1.0 / tau))
    return PhiResult(block.index, phi, "closed_form", abs(block.alpha), None, list(conds), flags,
                     time.perf_counter() - t0)


def _rkey(r: np.ndarray) -> tuple:
    return tuple(np.round(np.asarray(r).ravel(), 12))


# --- Monte Carlo -----------------------------------------------------------

def default_t_grid(block: FmoBlock, channel, multiples: int = 40) -> list[int]:
    M = window_length(block, channel)
    return [M * k for k in range(1, multiples + 1)]


def _survival_counts(block, channel, t, grid, trials, rng, tracker: KernelTracker) -> np.ndarray:
    T_max = max(grid)
    _, gamma = sample_paths(channel, t, T_max, trials, rng)
    if np.any(gamma < 0):
        raise ValueError("sampled channel states fall outside every emission region")
    kids = np.zeros(trials, dtype=int)
    alive = np.ones(trials, dtype=bool)
    counts = np.zeros(len(grid), dtype=np.int64)
    want = {T: i for i, T in enumerate(grid)}
    for s in range(T_max):
        idx = np.flatnonzero(alive)
        if idx.size:
            kids[idx] = tracker.step_many(kids[idx], gamma[idx, s], s)
            alive[idx] = tracker.dims()[kids[idx]] > 0
        if s + 1 in want:
            counts[want[s + 1]] = int(alive.sum())
        if not idx.size:
            break
    return counts


def fit_decay_rate(grid, counts, trials: int, level: float = CI_LEVEL) -> dict:
    """GLS fit of ``log p(T) = a + T log(phi)`` for nested survival events.

    Uses the longer half of the bins with at least ``MIN_HITS`` hits, since
    short horizons still carry transients of the subdominant modes.  The
    covariance of the log frequencies is ``(1 - p_a) / (n p_a)`` for the
    shorter horizon ``a`` of each pair, exact to first order for nested
    events.
    """
    grid = np.asarray(grid, dtype=float)
    counts = np.asarray(counts, dtype=float)
    use = counts >= MIN_HITS
    hits = np.flatnonzero(use)
    if len(hits) >= 4:
        use[hits[:len(hits) // 2]] = False
    out = {"phi": None, "log_phi": None, "se": None, "ci": None, "bins": int(use.sum())}
    if use.sum() < 2:
        return out
    T = grid[use]
    p = counts[use] / trials
    y = np.log(p)
    v = (1 - p) / (trials * p)
    idx = np.arange(len(T))
    cov = v[np.minimum.outer(idx, idx)]
    cov += 1e-15 * np.eye(len(T))
    X = np.column_stack([np.ones_like(T), T])
    Wi = np.linalg.solve(cov, X)
    info = X.T @ Wi
    beta = np.linalg.solve(info, Wi.T @ y)
    se = float(np.sqrt(np.linalg.inv(info)[1, 1]))
    z = stats.norm.ppf(0.5 + level / 2)
    slope = float(beta[1])
    out.update(phi=float(np.exp(slope)), log_phi=slope, se=se,
               ci=(float(np.exp(slope - z * se)), float(np.exp(slope + z * se))))
    return out


def phi_monte_carlo(block: FmoBlock, lattice: KernelLattice | None, channel, t_grid=None, trials: int = 100_000,
                    seed=0, tol: Tolerances = DEFAULT_TOL, threads: int = 1, level: float = CI_LEVEL) -> PhiResult:
    """Sampled decay rate of ``P(O_k(Gamma_{t,T}) lacks full column rank)``.

    Phases are fitted separately; the reported interval is the envelope of
    per-phase intervals at Bonferroni-adjusted level, so it covers the
    maximum with probability at least ``level``.
    """
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    t_start = time.perf_counter()
    grid = sorted(t_grid or default_t_grid(block, channel))
    tau = channel.period
    seeds = spawn_seeds(seed, tau)
    phase_level = 1 - (1 - level) / tau

    def run(t):
        tracker = KernelTracker(block, tol, lattice.elements if lattice is not None else ())
        counts = _survival_counts(block, channel, t, grid, trials, make_rng(seeds[t]), tracker)
        return counts, fit_decay_rate(grid, counts, trials, phase_level)

    if threads > 1 and tau > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            runs = list(ex.map(run, range(tau)))
    else:
        runs = [run(t) for t in range(tau)]

    flags: list = []
    per_phase, lows, highs = [], [], []
    for t, (counts, fit) in enumerate(runs):
        if fit["phi"] is not None:
            per_phase.append(fit["phi"])
            lows.append(fit["ci"][0])
            highs.append(fit["ci"][1])
            continue
        if counts[0] == 0:
            per_phase.append(0.0)
            lows.append(0.0)
            highs.append(float((3.0 / trials) ** (1.0 / grid[0])))
            flags.append(f"phase{t}:no_hits")
        else:
            est = float((counts[0] / trials) ** (1.0 / grid[0]))
            per_phase.append(est)
            lows.append(0.0)
            highs.append(est)
            flags.append(f"phase{t}:single_bin_upper_estimate")
        if counts[-1] > 0:
            flags.append(f"phase{t}:hits_at_largest_T")
    phi = float(max(per_phase))
    ci = (float(max(lows)), float(max(highs)))
    res = PhiResult(block.index, phi, "monte_carlo", abs(block.alpha), ci, per_phase, flags,
                    time.perf_counter() - t_start)
    res.counts = [r[0].tolist() for r in runs]
    res.t_grid = grid
    return res


# --- exact probabilities of the non-full-rank event ------------------------

def non_fcr_probability(block: FmoBlock, channel, t: int, T: int, method: str = "dp",
                        tol: Tolerances = DEFAULT_TOL) -> float:
    """``P(N_k^{t,T})`` computed exactly.

    ``method="enumerate"`` sums ``P(Gamma)`` over every symbol sequence whose
    observability matrix lacks full column rank; ``"dp"`` propagates the
    hidden-state law jointly with the kernel of the growing matrix.
    """
    if not isinstance(channel, FiniteMarkovChannel):
        raise TypeError("exact probabilities need a finite-state channel")
    if method == "enumerate":
        n_sym = int(channel.emission.max()) + 1
        total = 0.0
        for seq in itertools.product(range(n_sym), repeat=T):
            p = sequence_probability(channel, t, seq)
            if p > 0 and not has_fcr(build_obs(block, None, seq), tol):
                total += p
        return total
    tracker = KernelTracker(block, tol)
    h = channel.emission
    mu = stationary_phase_distribution(channel, t)
    dist = {}
    for a in np.unique(h):
        v = mu * (h == a)
        if v.any():
            k = tracker.step(0, int(a), 0)
            dist[k] = dist.get(k, 0) + v
    for s in range(1, T):
        K = channel.kernel(t + s - 1)
        nxt: dict = {}
        for kid, v in dist.items():
            if tracker.dim(kid) == 0:
                continue
            prop = v @ K
            for a in np.unique(h):
                part = prop * (h == a)
                if not part.any():
                    continue
                k2 = tracker.step(kid, int(a), s)
                nxt[k2] = nxt[k2] + part if k2 in nxt else part
        dist = nxt
    return float(sum(v.sum() for kid, v in dist.items() if tracker.dim(kid) > 0))


# --- verdict ---------------------------------------------------------------

def verdict(part: FmoPartition, phi_results, tol: Tolerances = DEFAULT_TOL,
            diagnostics: DiagnosticsReport | None = None) -> StabilityReport:
    by_block = {r.block: r for r in phi_results}
    missing = [b.index for b in part if not b.is_zero and b.index not in by_block]
    if missing:
        raise ValueError(f"missing Phi results for blocks {missing}")
    eps = tol.eps_margin
    results = []
    unstable = inconclusive = False
    for b in part:
        r = by_block.get(b.index) or PhiResult(b.index, 0.0, "zero_block", 0.0)
        results.append(r)
        if b.is_zero or abs(b.alpha) < 1:
            continue
        if r.margin > 1 + eps:
            unstable = True
        elif r.margin >= 1 - eps:
            inconclusive = True
    v = UNSTABLE if unstable else INCONCLUSIVE if inconclusive else STABLE
    return StabilityReport(results, v, eps, diagnostics)


# --- orchestration ---------------------------------------------------------

STRATEGIES = ("closed_form", "exact", "monte_carlo")


@dataclass
class Analysis:
    partition: FmoPartition
    lattices: dict
    report: StabilityReport
    notices: list


def analyze(system: SystemModel, channel, strategies=STRATEGIES, tol: Tolerances = DEFAULT_TOL,
            mc_trials: int = 100_000, mc_seed=0, mc_grid=None, lattice_cap: int = 10**6,
            sigma_cap: int = SIGMA_CAP, threads: int = 1) -> Analysis:
    """Partition, then Phi per block by the first strategy that applies."""
    diag = validate(system, channel)
    part = partition(system, tol)
    lattices: dict = {}
    results = []
    notices: list = []
    for b in part:
        if b.is_zero:
            continue
        res = None
        lat = None
        for strat in strategies:
            if strat == "closed_form":
                res = phi_closed_form(b, channel, tol, alphabet=system.alphabet)
                if res is None:
                    notices.append(f"block {b.index}: closed form not applicable")
            elif strat == "exact":
                if isinstance(channel, GaussianHiddenChannel):
                    notices.append(f"block {b.index}: exact route needs a finite channel")
                    continue
                try:
                    lat = lat or build_lattice(b, system.alphabet, tol, lattice_cap)
                    res = phi_exact(b, lat, channel, tol, sigma_cap)
                except (LatticeCapError, SigmaCapError) as exc:
                    notices.append(f"block {b.index}: {exc}; falling back")
            elif strat == "monte_carlo":
                if lat is None and not isinstance(channel, GaussianHiddenChannel):
                    try:
                        lat = build_lattice(b, system.alphabet, tol, lattice_cap)
                    except LatticeCapError:
                        lat = None
                res = phi_monte_carlo(b, lat, channel, mc_grid, mc_trials, mc_seed, tol, threads)
            else:
                raise ValueError(f"unknown strategy {strat!r}")
            if res is not None:
                break
        if res is None:
            raise RuntimeError(f"block {b.index}: no strategy in {list(strategies)} produced Phi")
        if lat is not None:
            lattices[b.index] = lat
        results.append(res)
    return Analysis(part, lattices, verdict(part, results, tol, diag), notices)
