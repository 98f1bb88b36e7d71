"""Random Riccati recursion, expected-covariance growth and filter simulation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .fmo import partition
from .matrix_core import DEFAULT_TOL, Tolerances, cmatrix, numerical_rank
from .model import (ChannelTrace, FiniteMarkovChannel, SystemModel, make_rng, sample_paths, sample_trace,
                    stationary_phase_distribution)

RESCALE_AT = 1e100
TILTS = tuple(4.0 ** k for k in range(1, 7))


def _herm(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + np.conj(np.swapaxes(p, -1, -2)))


def _floor_psd(p: np.ndarray) -> np.ndarray:
    """Hermitian part with negative eigenvalues clipped to zero (batched)."""
    p = _herm(p)
    w, v = np.linalg.eigh(p)
    if np.all(w >= 0):
        return p
    w = np.clip(w, 0, None)
    return _herm((v * w[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2)))


def _riccati(P, C, R, A, Q, tol: Tolerances = DEFAULT_TOL):
    # works on single matrices and on stacks sharing the leading axis
    Ah = np.conj(A.T)
    Ch = np.conj(np.swapaxes(C, -1, -2))
    APA = A @ P @ Ah
    PC = P @ Ch
    S = C @ PC + R
    Sinv = np.linalg.pinv(_herm(S), rcond=tol.tol_rank, hermitian=True)
    APC = A @ PC
    gain = APC @ Sinv @ np.conj(np.swapaxes(APC, -1, -2))
    return _floor_psd(APA + Q - gain)


def riccati_step(P, C, R, A, Q, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """One step of ``P -> APA* + Q - APC*(CPC* + R)^+ CPA*``."""
    A = cmatrix(A, name="A")
    n = A.shape[0]
    P = cmatrix(P, n, n, "P")
    Q = cmatrix(Q, n, n, "Q")
    C = cmatrix(C, cols=n, name="C")
    R = cmatrix(R, C.shape[0], C.shape[0], "R")
    return _riccati(P, C, R, A, Q, tol)


@dataclass(frozen=True, eq=False)
class CovTrajectory:
    t0: int
    P_seq: tuple
    gamma_used: ChannelTrace | None = None

    def __len__(self):
        return len(self.P_seq)

    @property
    def final(self) -> np.ndarray:
        return self.P_seq[-1]

    def norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(p, 2) for p in self.P_seq])


def compose(P0, gamma, system: SystemModel, t0: int = 0, tol: Tolerances = DEFAULT_TOL) -> CovTrajectory:
    """Fold :func:`riccati_step` along ``gamma`` (a trace or a symbol sequence)."""
    trace = gamma if isinstance(gamma, ChannelTrace) else None
    symbols = trace.gamma if trace is not None else gamma
    if trace is not None:
        t0 = trace.t0
    P = _floor_psd(cmatrix(P0, system.n, system.n, "P0"))
    seq = [P]
    for g in symbols:
        P = _riccati(P, system.alphabet.C(int(g)), system.alphabet.R(int(g)), system.A, system.Q, tol)
        seq.append(P)
    return CovTrajectory(t0, tuple(seq), trace)


def expected_cov_exact(system: SystemModel, channel: FiniteMarkovChannel, T: int, P0=None, t0: int = 0,
                       tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """``E Psi(P0, Gamma_{t0,T})`` by enumerating every positive-probability sequence."""
    if T > 12:
        raise ValueError("exact enumeration is limited to T <= 12")
    if not isinstance(channel, FiniteMarkovChannel):
        raise TypeError("exact enumeration needs a finite-state channel")
    P0 = system.P0 if P0 is None else cmatrix(P0, system.n, system.n, "P0")
    h = channel.emission
    symbols = np.unique(h)
    total = np.zeros((system.n, system.n), dtype=complex)

    def walk(fwd, P, s):
        nonlocal total
        if s == T:
            total += fwd.sum() * P
            return
        if s:
            fwd = fwd @ channel.kernel(t0 + s - 1)
        for a in symbols:
            f = fwd * (h == a)
            if f.sum() <= 0:
                continue
            walk(f, _riccati(P, system.alphabet.C(int(a)), system.alphabet.R(int(a)), system.A, system.Q, tol),
                 s + 1)

    walk(stationary_phase_distribution(channel, t0), _floor_psd(P0), 0)
    return total


# --- growth estimation ---------------------------------------------------

@dataclass
class GrowthEstimate:
    horizons: np.ndarray
    mean_norms: np.ndarray
    slope: float
    ci: tuple
    trials: int
    seed: object
    se: float = float("nan")
    log_mean_norms: np.ndarray | None = None
    log_mean_se: np.ndarray | None = None
    proposal: str = "mixture"
    trajectories: list = field(default_factory=list)

    @property
    def diverging(self) -> bool:
        return self.slope - 3 * self.se > 0

    def to_dict(self) -> dict:
        return {"horizons": [int(h) for h in self.horizons], "log_mean_norms": [float(x) for x in self.log_mean_norms],
                "slope": self.slope, "se": self.se, "ci": list(self.ci), "trials": self.trials,
                "seed": self.seed if isinstance(self.seed, (int, type(None))) else str(self.seed),
                "proposal": self.proposal}


def _blind_indicators(system: SystemModel, channel: FiniteMarkovChannel, tol: Tolerances) -> list[np.ndarray]:
    """Per unstable block, which hidden states emit a matrix that cannot see the whole block."""
    out = []
    for b in partition(system, tol):
        if b.is_zero or abs(b.alpha) < 1:
            continue
        blind_sym = np.array([numerical_rank(c, tol) < b.size for c in b.C_parts])
        ind = blind_sym[channel.emission]
        if ind.any() and not ind.all():
            out.append(ind)
    return out


def _tilted(channel: FiniteMarkovChannel, t0: int, ind: np.ndarray, theta: float):
    w = np.where(ind, theta, 1.0)
    mu = stationary_phase_distribution(channel, t0) * w
    ks = []
    for k in channel.kernels:
        k = k * w[None, :]
        s = k.sum(axis=1, keepdims=True)
        ks.append(np.divide(k, s, out=np.zeros_like(k), where=s > 0))
    return mu / mu.sum(), ks


def _proposals(system, channel, t0, tol, tilts):
    base = (stationary_phase_distribution(channel, t0), list(channel.kernels))
    comps = [base]
    for ind in _blind_indicators(system, channel, tol):
        comps.extend(_tilted(channel, t0, ind, th) for th in tilts)
    return comps


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _sample_mixture(channel, comps, t0, T, n, rng):
    """Draw ``n`` hidden paths from an equal-weight mixture of Markov proposals.

    Returns ``(hidden, log_w)`` with ``log_w[:, s]`` the log importance weight
    of the length-``s + 1`` prefix (balance heuristic).
    """
    L = len(comps)
    which = rng.integers(L, size=n)
    mus = np.stack([c[0] for c in comps])
    tau = channel.period
    K = np.stack([np.stack(c[1]) for c in comps])          # L x tau x m x m
    logK = _log(K)
    logmu = _log(mus)
    cdf0 = np.cumsum(mus, axis=1)
    cdfK = np.cumsum(K, axis=3)
    hidden = np.empty((n, T), dtype=int)
    u = rng.random((n, T))
    e = _draw_rows(cdf0[which], u[:, 0])
    hidden[:, 0] = e
    logp = logmu[:, e].T                                    # n x L
    log_w = np.empty((n, T))
    log_w[:, 0] = logp[:, 0] - logsumexp(logp, axis=1) + np.log(L)
    for s in range(1, T):
        ph = (t0 + s - 1) % tau
        e2 = _draw_rows(cdfK[which, ph, e], u[:, s])
        logp = logp + logK[:, ph, e, e2].T
        e = e2
        hidden[:, s] = e
        log_w[:, s] = logp[:, 0] - logsumexp(logp, axis=1) + np.log(L)
    return hidden, log_w


def _draw_rows(cdf_rows, u):
    idx = (u[:, None] * cdf_rows[:, -1:] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def _fit_slope(h, y):
    X = np.column_stack([np.ones_like(h), h])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(beta[1])


def _log_mean_norm(log_scale, P, mask):
    """``log || sum_i exp(log_scale_i) P_i || - log n`` over trials in ``mask``."""
    ls = log_scale[mask]
    keep = np.isfinite(ls)
    if not keep.any():
        return -np.inf
    ls = ls[keep]
    top = ls.max()
    M = np.einsum("i,ijk->jk", np.exp(ls - top), P[mask][keep])
    nrm = np.linalg.norm(M, 2)
    return top + np.log(nrm) - np.log(mask.sum()) if nrm > 0 else -np.inf


def estimate_growth(system: SystemModel, channel, P0=None, t0: int = 0, horizons=None, trials: int = 2000,
                    seed=0, proposal: str = "mixture", batches: int = 20, record: int = 0,
                    tol: Tolerances = DEFAULT_TOL) -> GrowthEstimate:
    """Growth rate of ``|| E Psi(P0, Gamma_{t0,T}) ||`` in ``T``.

    The mean is estimated from sampled traces.  With ``proposal="mixture"``
    traces come from a mixture of the channel and versions tilted towards
    states that leave an unstable block unobserved, reweighted by the
    balance heuristic; this keeps the rare long blackouts that dominate the
    mean of an unstable system in the sample.  ``proposal="plain"`` samples
    the channel directly.

    ``slope`` is the least-squares slope of ``log || mean ||`` over the upper
    half of ``horizons``; its standard error is a delete-one-batch jackknife.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    horizons = np.array(sorted(set(int(h) for h in (horizons if horizons is not None else range(10, 201, 10)))))
    if horizons[0] < 1:
        raise ValueError("horizons must be >= 1")
    rng = make_rng(seed)
    T = int(horizons[-1])
    n = system.n
    P0 = system.P0 if P0 is None else cmatrix(P0, n, n, "P0")

    finite = isinstance(channel, FiniteMarkovChannel)
    if proposal == "mixture" and finite:
        comps = _proposals(system, channel, t0, tol, TILTS)
        hidden, log_w = _sample_mixture(channel, comps, t0, T, trials, rng)
        gamma = channel.emission[hidden]
        if len(comps) == 1:
            proposal = "plain"
    elif proposal in ("mixture", "plain"):
        _, gamma = sample_paths(channel, t0, T, trials, rng)
        log_w = np.zeros((trials, T))
        proposal = "plain"
    else:
        raise ValueError(f"unknown proposal {proposal!r}")
    if np.any(gamma < 0):
        raise ValueError("sampled channel states fall outside every emission region")

    Cs, Rs = system.alphabet.C_stack, system.alphabet.R_stack
    P = np.broadcast_to(_floor_psd(P0), (trials, n, n)).copy()
    log_scale = np.zeros(trials)
    batch_of = np.arange(trials) % batches
    want = {int(h): k for k, h in enumerate(horizons)}
    log_means = np.empty(len(horizons))
    jack = np.empty((batches, len(horizons)))
    traj: list = []
    for s in range(T):
        g = gamma[:, s]
        scale = np.exp(-log_scale)[:, None, None]
        P = _riccati(P, Cs[g], Rs[g] * scale, system.A, system.Q[None] * scale, tol)
        nrm = np.linalg.norm(P, ord=2, axis=(1, 2))
        big = nrm > RESCALE_AT
        if big.any():
            P[big] /= nrm[big, None, None]
            log_scale[big] += np.log(nrm[big])
            nrm[big] = 1.0
        if record:
            with np.errstate(divide="ignore"):
                lg = np.log(nrm[:record]) + log_scale[:record]
            traj.extend((s + 1, float(np.exp(x)) if x < 700 else float("inf"), float(x), i)
                        for i, x in enumerate(lg))
        k = want.get(s + 1)
        if k is not None:
            lw = log_w[:, s] + log_scale
            log_means[k] = _log_mean_norm(lw, P, np.ones(trials, bool))
            for b in range(batches):
                jack[b, k] = _log_mean_norm(lw, P, batch_of != b)

    upper = horizons >= np.median(horizons) if len(horizons) > 2 else np.ones(len(horizons), bool)
    hh = horizons[upper].astype(float)
    slope = _fit_slope(hh, log_means[upper])
    js = np.array([_fit_slope(hh, jack[b, upper]) for b in range(batches)])
    se = float(np.sqrt((batches - 1) / batches * np.sum((js - js.mean()) ** 2)))
    log_se = np.sqrt((batches - 1) / batches * np.sum((jack - jack.mean(axis=0)) ** 2, axis=0))
    with np.errstate(over="ignore"):
        means = np.exp(log_means)
    return GrowthEstimate(horizons, means, slope, (slope - 1.96 * se, slope + 1.96 * se), trials, seed, se,
                          log_means, log_se, proposal, traj)


def write_trajectories(path, rows) -> None:
    """CSV with columns ``t, norm_P, log_norm_P, trial_id``.

    ``rows`` is an iterable of such tuples or of :class:`CovTrajectory`.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "norm_P", "log_norm_P", "trial_id"])
        for i, r in enumerate(rows):
            if isinstance(r, CovTrajectory):
                for t, nrm in enumerate(r.norms()):
                    w.writerow([r.t0 + t, nrm, np.log(nrm) if nrm > 0 else float("-inf"), i])
            else:
                w.writerow(list(r))


# --- full filter simulation -----------------------------------------------

@dataclass(frozen=True, eq=False)
class FilterRun:
    states: np.ndarray
    measurements: np.ndarray
    estimates: np.ndarray
    covariances: CovTrajectory

    def squared_errors(self) -> np.ndarray:
        return np.sum(np.abs(self.states - self.estimates) ** 2, axis=-1)


def _noise_factor(S: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(_herm(S))
    return v * np.sqrt(np.clip(w, 0, None))


def _draw_noise(S, size, rng, complex_noise):
    F = _noise_factor(S)
    z = rng.standard_normal(size + (S.shape[0],))
    if complex_noise:
        z = (z + 1j * rng.standard_normal(z.shape)) / np.sqrt(2)
    return z @ F.T


def simulate_filter(system: SystemModel, channel, horizon: int, seed=None, t0: int = 0,
                    x0_mean=None, tol: Tolerances = DEFAULT_TOL) -> FilterRun:
    """Co-simulate state, measurements and the one-step-ahead Kalman estimate.

    ``x_0 ~ N(x0_mean, P0)`` and ``estimates[t]`` is ``xhat_{t|t-1}``, so the
    error covariance at step ``t`` is ``covariances.P_seq[t]``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = make_rng(seed)
    trace = sample_trace(channel, t0, horizon, rng)
    A, Q = system.A, system.Q
    real = all(np.isrealobj(m) or not np.any(np.imag(m)) for m in (A, Q, system.P0, system.alphabet.C_stack,
                                                                   system.alphabet.R_stack))
    n, p = system.n, system.p
    xhat = np.zeros(n, complex) if x0_mean is None else cmatrix(x0_mean).ravel()
    x = xhat + _draw_noise(system.P0, (), rng, not real)
    P = _floor_psd(system.P0)
    states, meas, ests, Ps = [], [], [], [P]
    for s in range(horizon):
        g = int(trace.gamma[s])
        C, R = system.alphabet.C(g), system.alphabet.R(g)
        y = C @ x + _draw_noise(R, (), rng, not real)
        states.append(x)
        meas.append(y)
        ests.append(xhat)
        S = _herm(C @ P @ np.conj(C.T) + R)
        K = A @ P @ np.conj(C.T) @ np.linalg.pinv(S, rcond=tol.tol_rank, hermitian=True)
        xhat = A @ xhat + K @ (y - C @ xhat)
        P = _riccati(P, C, R, A, Q, tol)
        Ps.append(P)
        x = A @ x + _draw_noise(Q, (), rng, not real)
    states.append(x)
    ests.append(xhat)
    cast = (lambda a: np.real(a)) if real else (lambda a: a)
    return FilterRun(cast(np.array(states)), cast(np.array(meas).reshape(horizon, p)), cast(np.array(ests)),
                     CovTrajectory(t0, tuple(Ps), trace))
