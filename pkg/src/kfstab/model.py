"""System and channel models.

The measurement pair ``gamma_t = (C_t, R_t)`` is an index into a finite
:class:`MeasurementAlphabet`.  It is emitted by a hidden Markov chain whose
transition kernels repeat with some period ``tau``.

Kernel convention used everywhere in the package: ``kernels[s][i, j]`` is
``P(state_{t+1} = j | state_t = i)`` for ``t = s (mod tau)``; ``mu0`` is the
law of the hidden state at time 0.  The symbol observed at time ``t`` is
``emission[state_t]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.linalg

from .matrix_core import cmatrix, jordan_chains, spectral_radius

STOCHASTIC_TOL = 1e-12
CYCLO_TOL = 1e-10
PSD_TOL = 1e-10


# --- RNG -------------------------------------------------------------------

def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Independent child seeds for ``n`` concurrent tasks."""
    return np.random.SeedSequence(seed).spawn(n)


# --- system ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MeasurementAlphabet:
    pairs: tuple
    labels: tuple = ()

    def __post_init__(self):
        pairs = tuple((cmatrix(c, name="C"), cmatrix(r, name="R")) for c, r in self.pairs)
        if not pairs:
            raise ValueError("measurement alphabet must be nonempty")
        object.__setattr__(self, "pairs", pairs)
        labels = tuple(self.labels) or tuple(f"a{i}" for i in range(len(pairs)))
        if len(labels) != len(pairs):
            raise ValueError("one label per alphabet entry required")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.pairs)

    def C(self, d: int) -> np.ndarray:
        return self.pairs[d][0]

    def R(self, d: int) -> np.ndarray:
        return self.pairs[d][1]

    @property
    def C_stack(self) -> np.ndarray:
        return np.stack([c for c, _ in self.pairs])

    @property
    def R_stack(self) -> np.ndarray:
        return np.stack([r for _, r in self.pairs])


@dataclass(frozen=True, eq=False)
class SystemModel:
    A: np.ndarray
    Q: np.ndarray
    alphabet: MeasurementAlphabet
    P0: np.ndarray | None = None

    def __post_init__(self):
        A = cmatrix(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", cmatrix(self.Q, n, n, name="Q"))
        P0 = np.eye(n) if self.P0 is None else self.P0
        object.__setattr__(self, "P0", cmatrix(P0, n, n, name="P0"))
        p = self.alphabet.C(0).shape[0]
        for d, (c, r) in enumerate(self.alphabet.pairs):
            if c.shape != (p, n):
                raise ValueError(f"alphabet entry {d}: C must be {p}x{n}, got {c.shape[0]}x{c.shape[1]}")
            if r.shape != (p, p):
                raise ValueError(f"alphabet entry {d}: R must be {p}x{p}, got {r.shape[0]}x{r.shape[1]}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.alphabet.C(0).shape[0]


# --- channels --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FiniteMarkovChannel:
    """Hidden Markov channel on a finite state space."""

    kernels: tuple
    emission: np.ndarray
    mu0: np.ndarray | None = None
    state_labels: tuple = ()
    variant: str = field(default="FiniteMarkov")

    def __post_init__(self):
        ks = tuple(np.asarray(k, dtype=float) for k in self.kernels)
        if not ks:
            raise ValueError("at least one kernel required")
        m = ks[0].shape[0]
        for k in ks:
            if k.shape != (m, m):
                raise ValueError(f"kernels must all be {m}x{m}")
        object.__setattr__(self, "kernels", ks)
        h = np.asarray(self.emission, dtype=int)
        if h.shape != (m,):
            raise ValueError(f"emission must map each of the {m} states to a symbol")
        object.__setattr__(self, "emission", h)
        if self.mu0 is not None:
            mu = np.asarray(self.mu0, dtype=float)
            if mu.shape != (m,):
                raise ValueError(f"mu0 must have {m} entries")
            object.__setattr__(self, "mu0", mu)

    @property
    def period(self) -> int:
        return len(self.kernels)

    @property
    def n_states(self) -> int:
        return self.kernels[0].shape[0]

    def kernel(self, t: int) -> np.ndarray:
        """Transition matrix from time ``t`` to ``t + 1``."""
        return self.kernels[t % self.period]

    def to_finite(self) -> "FiniteMarkovChannel":
        return self

    def with_kernels(self, kernels) -> "FiniteMarkovChannel":
        return FiniteMarkovChannel(tuple(kernels), self.emission, self.mu0, self.state_labels, self.variant)


def IidChannel(probs) -> FiniteMarkovChannel:
    """Independent symbols; ``probs[s]`` is the symbol law at phase ``s``."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    tau, n_sym = probs.shape
    kernels = tuple(np.tile(probs[(s + 1) % tau], (n_sym, 1)) for s in range(tau))
    return FiniteMarkovChannel(kernels, np.arange(n_sym), probs[0], variant="Iid")


def GilbertElliottChannel(p_gb: float, p_bg: float, emit_good, emit_bad) -> FiniteMarkovChannel:
    """Two-state good/bad chain; each state draws a symbol from its own law.

    Hidden states are the pairs ``(chain state, symbol)``.
    """
    chain = np.array([[1 - p_gb, p_gb], [p_bg, 1 - p_bg]])
    emit = np.vstack([np.asarray(emit_good, float), np.asarray(emit_bad, float)])
    n_sym = emit.shape[1]
    states = list(itertools.product(range(2), range(n_sym)))
    k = np.array([[chain[g, g2] * emit[g2, a2] for g2, a2 in states] for g, _ in states])
    denom = p_gb + p_bg
    pi = np.array([p_bg / denom, p_gb / denom]) if denom > 0 else np.array([1.0, 0.0])
    mu0 = np.array([pi[g] * emit[g, a] for g, a in states])
    labels = tuple(f"{'GB'[g]}:{a}" for g, a in states)
    return FiniteMarkovChannel((k,), np.array([a for _, a in states]), mu0, labels, variant="GilbertElliott")


def lift_markov_order(cond_table: dict, order: int, n_symbols: int, mu0: dict | None = None) -> FiniteMarkovChannel:
    """Encode an order-L symbol process as a first-order chain on contexts.

    ``cond_table[context]`` is the law of the next symbol given the last
    ``order`` symbols (oldest first).  The hidden state is the context and
    emits its newest symbol.  Without ``mu0`` the stationary law is used.
    """
    contexts = list(itertools.product(range(n_symbols), repeat=order))
    index = {c: i for i, c in enumerate(contexts)}
    k = np.zeros((len(contexts), len(contexts)))
    for c in contexts:
        probs = np.asarray(cond_table[c], dtype=float)
        for a, pa in enumerate(probs):
            k[index[c], index[c[1:] + (a,)]] += pa
    mu = None if mu0 is None else np.array([mu0.get(c, 0.0) for c in contexts])
    ch = FiniteMarkovChannel((k,), np.array([c[-1] for c in contexts]), mu,
                             tuple("".join(map(str, c)) for c in contexts), variant="FiniteMarkov")
    if mu is None:
        ch = FiniteMarkovChannel(ch.kernels, ch.emission, _perron_left(k), ch.state_labels, ch.variant)
    return ch


@dataclass(frozen=True, eq=False)
class BoxRegion:
    lower: np.ndarray
    upper: np.ndarray
    symbol: int

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= self.lower) & (x < self.upper), axis=-1)


@dataclass(frozen=True, eq=False)
class GaussianHiddenChannel:
    """``state_t = K state_{t-1} + eps_t``; symbol chosen by the first box containing the state."""

    K: np.ndarray
    Sigma: np.ndarray
    regions: tuple
    variant: str = "GaussianHidden"

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        d = K.shape[0]
        if K.shape != (d, d):
            raise ValueError("K must be square")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Sigma", np.atleast_2d(np.asarray(self.Sigma, dtype=float)).reshape(d, d))
        regs = []
        for r in self.regions:
            if not isinstance(r, BoxRegion):
                r = BoxRegion(np.broadcast_to(np.asarray(r["lower"], float), (d,)),
                              np.broadcast_to(np.asarray(r["upper"], float), (d,)), int(r["symbol"]))
            regs.append(r)
        object.__setattr__(self, "regions", tuple(regs))

    @property
    def period(self) -> int:
        return 1

    @property
    def dim(self) -> int:
        return self.K.shape[0]

    def stationary_cov(self) -> np.ndarray:
        return scipy.linalg.solve_discrete_lyapunov(self.K, self.Sigma)

    def emit(self, x: np.ndarray) -> np.ndarray:
        out = np.full(x.shape[:-1], -1, dtype=int)
        for r in reversed(self.regions):
            out = np.where(r.contains(x), r.symbol, out)
        return out


ChannelModel = FiniteMarkovChannel | GaussianHiddenChannel


def _require_finite(channel) -> FiniteMarkovChannel:
    if not isinstance(channel, FiniteMarkovChannel):
        raise TypeError(f"operation needs a finite-state channel, got {channel.variant}")
    return channel


def _perron_left(p: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eig(p.T)
    i = int(np.argmin(np.abs(vals - 1.0)))
    v = np.abs(np.real(vecs[:, i]))
    return v / v.sum()


# --- operations ------------------------------------------------------------

def stationary_phase_distribution(channel, t: int) -> np.ndarray:
    """Law of the hidden state at phase ``t``.

    ``mu0`` pushed through the first ``t mod tau`` kernels; when the channel
    has no ``mu0`` the left Perron vector of the tau-step product is used.
    """
    ch = _require_finite(channel)
    mu = ch.mu0
    if mu is None:
        mu = _perron_left(reduce(np.matmul, ch.kernels))
    for s in range(t % ch.period):
        mu = mu @ ch.kernel(s)
    return mu


def phase_support(channel, t: int, atol: float = 0.0) -> np.ndarray:
    return np.flatnonzero(stationary_phase_distribution(channel, t) > atol)


@dataclass(frozen=True, eq=False)
class ChannelTrace:
    t0: int
    gamma: np.ndarray
    hidden: np.ndarray
    seed: object = None

    def __len__(self):
        return len(self.gamma)


def sample_paths(channel, t0: int, T: int, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised sampling of ``n`` traces; returns ``(hidden, gamma)``.

    For finite channels ``hidden`` is ``n x T`` state indices; for the
    Gaussian channel it is ``n x T x dim``.
    """
    rng = make_rng(rng)
    if isinstance(channel, GaussianHiddenChannel):
        d = channel.dim
        chol = np.linalg.cholesky(channel.stationary_cov() + 1e-300 * np.eye(d))
        noise = np.linalg.cholesky(channel.Sigma + 1e-300 * np.eye(d))
        x = np.empty((n, T, d))
        x[:, 0] = rng.standard_normal((n, d)) @ chol.T
        for i in range(1, T):
            x[:, i] = x[:, i - 1] @ channel.K.T + rng.standard_normal((n, d)) @ noise.T
        return x, channel.emit(x)
    ch = _require_finite(channel)
    hidden = np.empty((n, T), dtype=int)
    cdf0 = np.cumsum(stationary_phase_distribution(ch, t0))
    hidden[:, 0] = _draw(cdf0[None, :], rng.random(n))
    cdfs = [np.cumsum(k, axis=1) for k in ch.kernels]
    for i in range(1, T):
        cdf = cdfs[(t0 + i - 1) % ch.period]
        hidden[:, i] = _draw(cdf[hidden[:, i - 1]], rng.random(n))
    return hidden, ch.emission[hidden]


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (u[:, None] * cdf_rows[:, -1:] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def sample_trace(channel, t0: int, T: int, seed=None) -> ChannelTrace:
    if T < 1:
        raise ValueError("T must be >= 1")
    hidden, gamma = sample_paths(channel, t0, T, 1, make_rng(seed))
    return ChannelTrace(t0, gamma[0], hidden[0], seed)


def sequence_probability(channel, t0: int, gamma) -> float:
    """Exact ``P(Gamma_{t0,T} = gamma)`` by the forward algorithm."""
    ch = _require_finite(channel)
    gamma = list(gamma)
    if not gamma:
        return 1.0
    f = stationary_phase_distribution(ch, t0) * (ch.emission == gamma[0])
    for i, g in enumerate(gamma[1:], start=1):
        f = (f @ ch.kernel(t0 + i - 1)) * (ch.emission == g)
    return float(f.sum())


# --- diagnostics -----------------------------------------------------------

@dataclass
class DiagnosticsReport:
    issues: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    proper: bool | None = None
    zeta_bound: float | None = None
    cyclostationary: bool | None = None

    @property
    def valid(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict:
        return {"valid": self.valid, "issues": list(self.issues), "notes": list(self.notes),
                "proper": self.proper, "zeta_bound": self.zeta_bound,
                "cyclostationary": self.cyclostationary}


def _psd_issue(m: np.ndarray, name: str) -> str | None:
    scale = max(1.0, float(np.linalg.norm(m, 2)))
    if np.max(np.abs(m - m.conj().T)) > PSD_TOL * scale:
        return f"{name} is not Hermitian"
    if np.min(np.linalg.eigvalsh((m + m.conj().T) / 2)) < -PSD_TOL * scale:
        return f"{name} is not positive semidefinite"
    return None


def validate(system: SystemModel, channel, gaussian_samples: int = 100_000, seed: int = 0) -> DiagnosticsReport:
    rep = DiagnosticsReport()
    try:
        jordan_chains(system.A)
    except ValueError as exc:
        rep.issues.append(str(exc))
    for name, m in (("Q", system.Q), ("P0", system.P0)):
        if (msg := _psd_issue(m, name)) is not None:
            rep.issues.append(msg)
    for d, r in enumerate(system.alphabet.R_stack):
        if (msg := _psd_issue(r, f"R[{d}]")) is not None:
            rep.issues.append(msg)

    if isinstance(channel, GaussianHiddenChannel):
        _validate_gaussian(channel, system, rep, gaussian_samples, seed)
        return rep

    ch = _require_finite(channel)
    if np.any(ch.emission < 0) or np.any(ch.emission >= len(system.alphabet)):
        rep.issues.append("emission references a symbol outside the alphabet")
    stochastic = True
    for s, k in enumerate(ch.kernels):
        if np.any(k < 0) or np.any(np.abs(k.sum(axis=1) - 1) > STOCHASTIC_TOL):
            rep.issues.append(f"kernel {s} is not row-stochastic")
            stochastic = False
    if ch.mu0 is not None and (np.any(ch.mu0 < 0) or abs(ch.mu0.sum() - 1) > STOCHASTIC_TOL):
        rep.issues.append("mu0 is not a probability distribution")
        stochastic = False
    if not stochastic:
        return rep

    mu = stationary_phase_distribution(ch, 0)
    back = stationary_phase_distribution(ch, 0)
    for s in range(ch.period):
        back = back @ ch.kernel(s)
    tv = 0.5 * float(np.abs(back - mu).sum())
    rep.cyclostationary = tv <= CYCLO_TOL
    if not rep.cyclostationary:
        rep.issues.append(f"not cyclostationary: mu0 moves by {tv:.3g} in total variation over one period")

    proper = True
    zeta = 0.0
    for s in range(ch.period):
        sup_now = phase_support(ch, s)
        sup_next = phase_support(ch, s + 1)
        if np.any(ch.kernel(s)[np.ix_(sup_now, sup_next)] <= 0):
            proper = False
        zeta = max(zeta, float(np.max(1.0 / stationary_phase_distribution(ch, s)[sup_now])))
    rep.proper = proper
    rep.zeta_bound = zeta
    if not proper:
        rep.notes.append("channel is not proper: the spectral formula for Phi is applied without its restriction guarantee")
    return rep


def _validate_gaussian(ch: GaussianHiddenChannel, system, rep: DiagnosticsReport, n: int, seed: int):
    rep.cyclostationary = True
    rho = spectral_radius(ch.K)
    if rho >= 1:
        rep.issues.append(f"hidden dynamics not stable: spectral radius {rho:.6g} >= 1")
        return
    if _psd_issue(ch.Sigma, "Sigma") is not None:
        rep.issues.append("Sigma is not positive semidefinite")
        return
    if any(r.symbol < 0 or r.symbol >= len(system.alphabet) for r in ch.regions):
        rep.issues.append("region references a symbol outside the alphabet")
    _, gamma = sample_paths(ch, 0, 1, n, make_rng(seed))
    uncovered = float(np.mean(gamma < 0))
    if uncovered > 1e-9:
        rep.issues.append(f"regions leave {uncovered:.3g} of the sampled stationary mass uncovered")
    rep.notes.append("Gaussian hidden Markov channel: assumptions hold; Phi is available by Monte Carlo only")
