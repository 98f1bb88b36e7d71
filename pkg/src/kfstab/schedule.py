"""Multi-sensor systems with scheduled, lossy transmissions.

A :class:`SensorSuite` (plant ``F``, noise ``N``, sensors ``(H_s, E_s)``)
is combined with a :class:`SchedulePlan` (which sensors are sent at each
time, and which packets survive) into a single :class:`SystemModel` driven
by a product hidden Markov channel.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from math import lcm

import numpy as np
import scipy.linalg

from .fmo import cfmo
from .matrix_core import DEFAULT_TOL, Tolerances, cmatrix, jordan_chains
from .model import (FiniteMarkovChannel, GilbertElliottChannel, IidChannel, MeasurementAlphabet, SystemModel,
                    stationary_phase_distribution)

COND_WARN = 1e8
COND_FAIL = 1e13


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SensorSuite:
    F: np.ndarray
    N_cov: np.ndarray
    sensors: tuple
    R_slots: int
    jordan: tuple | None = None     # optional (A, V) with A = V F V^-1

    def __post_init__(self):
        F = cmatrix(self.F, name="F")
        n = F.shape[0]
        if F.shape != (n, n):
            raise ScheduleError("F must be square")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "N_cov", cmatrix(self.N_cov, n, n, "N"))
        if not self.sensors:
            raise ScheduleError("at least one sensor required")
        sens = []
        for s, (H, E) in enumerate(self.sensors):
            H = cmatrix(H, cols=n, name=f"sensors[{s}].H")
            E = cmatrix(E, H.shape[0], H.shape[0], f"sensors[{s}].E")
            if np.min(np.linalg.eigvalsh(0.5 * (E + E.conj().T))) < -1e-10:
                raise ScheduleError(f"sensors[{s}].E is not positive semidefinite")
            sens.append((H, E))
        rows = {H.shape[0] for H, _ in sens}
        if len(rows) != 1:
            raise ScheduleError("all sensors must produce measurements of the same size")
        object.__setattr__(self, "sensors", tuple(sens))
        if not 1 <= self.R_slots <= len(sens):
            raise ScheduleError(f"R_slots must be between 1 and {len(sens)}")
        if self.jordan is not None:
            A, V = (cmatrix(m, n, n, name) for m, name in zip(self.jordan, ("jordan.A", "jordan.V")))
            if not np.allclose(V @ F, A @ V, atol=1e-8 * max(1.0, np.abs(F).max())):
                raise ScheduleError("supplied Jordan data does not satisfy A V = V F")
            object.__setattr__(self, "jordan", (A, V))

    @property
    def S(self) -> int:
        return len(self.sensors)

    @property
    def m(self) -> int:
        return self.sensors[0][0].shape[0]

    @property
    def H(self) -> np.ndarray:
        return np.vstack([H for H, _ in self.sensors])

    @property
    def E(self) -> np.ndarray:
        return scipy.linalg.block_diag(*[E for _, E in self.sensors])


@dataclass(frozen=True, eq=False)
class LossModel:
    """Packet-survival process: ``channel`` emits indices into ``outcomes``
    (rows of 0/1 per transmission slot, 1 = delivered)."""

    channel: FiniteMarkovChannel
    outcomes: np.ndarray

    def __post_init__(self):
        out = np.atleast_2d(np.asarray(self.outcomes, dtype=int))
        if not np.isin(out, (0, 1)).all():
            raise ScheduleError("loss outcomes must be 0/1")
        if not isinstance(self.channel, FiniteMarkovChannel):
            raise ScheduleError("aggregation needs a finite-state loss channel")
        if self.channel.emission.max() >= len(out):
            raise ScheduleError("loss channel emits an index without an outcome row")
        object.__setattr__(self, "outcomes", out)

    @property
    def slots(self) -> int:
        return self.outcomes.shape[1]


def no_loss(slots: int) -> LossModel:
    return LossModel(IidChannel([[1.0]]), np.ones((1, slots), dtype=int))


def iid_loss(p_loss, slots: int = 1) -> LossModel:
    """Independent losses; ``p_loss`` is one probability or one per slot."""
    p = np.broadcast_to(np.asarray(p_loss, dtype=float), (slots,))
    if np.any((p < 0) | (p > 1)):
        raise ScheduleError("loss probabilities must lie in [0, 1]")
    outcomes = np.array(list(itertools.product((0, 1), repeat=slots)))
    probs = np.prod(np.where(outcomes == 1, 1 - p, p), axis=1)
    return LossModel(IidChannel(probs[None, :]), outcomes)


def gilbert_elliott_loss(p_gb: float, p_bg: float, loss_good: float, loss_bad: float) -> LossModel:
    """Single-slot bursty losses driven by a good/bad chain."""
    emit_good = [loss_good, 1 - loss_good]
    emit_bad = [loss_bad, 1 - loss_bad]
    return LossModel(GilbertElliottChannel(p_gb, p_bg, emit_good, emit_bad), np.array([[0], [1]]))


def _selection(m, slots: int, S: int) -> np.ndarray:
    m = np.real(cmatrix(m, slots, S, "selection"))
    ok = np.isin(m, (0, 1)).all() and np.all(m.sum(axis=1) == 1) and len({tuple(r) for r in m}) == slots
    if not ok:
        raise ScheduleError("selection matrices must consist of distinct standard basis rows")
    return m


@dataclass(frozen=True, eq=False)
class SchedulePlan:
    """``chain`` emits indices into ``selections``; ``loss`` is independent of it."""

    selections: tuple
    chain: FiniteMarkovChannel
    loss: LossModel
    variant: str = "TimeBased"

    @property
    def period(self) -> int:
        return lcm(self.chain.period, self.loss.channel.period)


def time_based(selections, loss: LossModel) -> SchedulePlan:
    """Deterministic cycle through ``selections`` (period = their count)."""
    tau = len(selections)
    if tau < 1:
        raise ScheduleError("at least one selection matrix required")
    shift = np.roll(np.eye(tau), 1, axis=1)
    mu0 = np.eye(tau)[0]
    ch = FiniteMarkovChannel(tuple(shift for _ in range(tau)), np.arange(tau), mu0, variant="FiniteMarkov")
    return SchedulePlan(tuple(selections), ch, loss, "TimeBased")


def random_schedule(selections, loss: LossModel, probs=None, kernel=None) -> SchedulePlan:
    """Selections drawn i.i.d. from ``probs`` or from a Markov ``kernel``."""
    k = len(selections)
    if kernel is not None:
        kernel = np.asarray(kernel, dtype=float)
        ch = FiniteMarkovChannel((kernel,), np.arange(k), None)
    else:
        p = np.full(k, 1.0 / k) if probs is None else np.asarray(probs, dtype=float)
        ch = IidChannel(p[None, :])
    return SchedulePlan(tuple(selections), ch, loss, "Random")


def jordan_transform(F: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """``(A, V)`` with ``A = V F V^-1`` diagonal and equal-CFMO eigenvalues adjacent.

    ``F`` already in Jordan form is returned unchanged with ``V = I``.
    """
    F = cmatrix(F, name="F")
    n = F.shape[0]
    try:
        jordan_chains(F)
        return F, np.eye(n, dtype=complex)
    except ValueError:
        pass
    lam, W = np.linalg.eig(F)
    cond = np.linalg.cond(W)
    if not np.isfinite(cond) or cond > COND_FAIL:
        raise ScheduleError("F is not diagonalizable; supply its Jordan form and transform explicitly")
    if cond > COND_WARN:
        warnings.warn(f"eigenvector matrix of F is ill-conditioned (cond={cond:.3g})", RuntimeWarning)
    groups: list[list[int]] = []
    for i, x in enumerate(lam):
        for g in groups:
            ref = lam[g[0]]
            if (x == 0) == (ref == 0) and (x == 0 or cfmo([ref, x], tol) is not None):
                g.append(i)
                break
        else:
            groups.append([i])
    groups.sort(key=lambda g: -abs(lam[g[0]]))
    order = [i for g in groups for i in g]
    W = W[:, order]
    V = np.linalg.inv(W)
    return np.diag(lam[order]), V


def _pair_key(C: np.ndarray, R: np.ndarray) -> tuple:
    return tuple(float(f"{x:.12g}") for x in np.concatenate([C.ravel().view(float), R.ravel().view(float)]))


def aggregate(suite: SensorSuite, plan: SchedulePlan, P0=None,
              tol: Tolerances = DEFAULT_TOL) -> tuple[SystemModel, FiniteMarkovChannel]:
    """Equivalent random-measurement system and its product channel.

    ``C = B H V^-1`` and ``R = B E B^T`` with ``B = (L kron I)(M kron I)``;
    lost slots give zero rows.  Hidden states are (schedule state, loss
    state) pairs.
    """
    S, m, slots = suite.S, suite.m, suite.R_slots
    if plan.loss.slots != slots:
        raise ScheduleError(f"loss model has {plan.loss.slots} slots, suite transmits {slots}")
    sels = [_selection(M, slots, S) for M in plan.selections]
    A, V = suite.jordan if suite.jordan is not None else jordan_transform(suite.F, tol)
    Vinv = np.linalg.inv(V)
    HV = suite.H @ Vinv
    E = suite.E
    Im = np.eye(m)

    sch, loss = plan.chain, plan.loss.channel
    pairs, labels, index = [], [], {}
    emission = []
    states = list(itertools.product(range(sch.n_states), range(loss.n_states)))
    for a, b in states:
        sel = sels[sch.emission[a]]
        l = plan.loss.outcomes[loss.emission[b]]
        B = np.kron(np.diag(l), Im) @ np.kron(sel, Im)
        C, R = B @ HV, B @ E @ B.T
        key = _pair_key(C, R)
        if key not in index:
            index[key] = len(pairs)
            pairs.append((C, R))
            sent = [f"s{int(np.argmax(r)) + 1}" + ("" if keep else "-lost") for r, keep in zip(sel, l)]
            labels.append(",".join(sent))
        emission.append(index[key])

    tau = plan.period
    kernels = tuple(np.kron(sch.kernel(t), loss.kernel(t)) for t in range(tau))
    mu0 = np.kron(stationary_phase_distribution(sch, 0), stationary_phase_distribution(loss, 0))
    state_labels = tuple(f"{a}:{b}" for a, b in states)
    channel = FiniteMarkovChannel(kernels, np.array(emission), mu0, state_labels, variant="FiniteMarkov")
    Q = V @ suite.N_cov @ V.conj().T
    n = A.shape[0]
    P0 = np.eye(n) if P0 is None else P0
    system = SystemModel(A, Q, MeasurementAlphabet(pairs, tuple(labels)), P0)
    return system, channel


def alternating_sensors(alpha1: float, alpha2: float, loss=0.0) -> tuple[SystemModel, FiniteMarkovChannel]:
    """Two sensors sent alternately over one lossy slot.

    ``A = diag(J_2(alpha1), alpha2)``; sensor 1 sees the Jordan pair and
    sensor 2 the scalar mode.  ``loss`` is a :class:`LossModel` or an i.i.d.
    loss probability.
    """
    if not alpha1 > alpha2 > 0:
        raise ScheduleError("need alpha1 > alpha2 > 0")
    F = np.array([[alpha1, 1, 0], [0, alpha1, 0], [0, 0, alpha2]], dtype=complex)
    H1 = [[2, 1, 0], [0, 1, 0]]
    H2 = [[0, 0, 1], [0, 0, 2]]
    suite = SensorSuite(F, np.eye(3), ((H1, np.eye(2)), (H2, np.eye(2))), 1)
    if not isinstance(loss, LossModel):
        loss = iid_loss(float(loss), 1)
    plan = time_based(([[1, 0]], [[0, 1]]), loss)
    return aggregate(suite, plan)


example_7_3 = alternating_sensors
