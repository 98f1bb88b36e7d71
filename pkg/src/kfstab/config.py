"""JSON analysis configs.

Matrices are lists of rows; an entry is a number or ``[re, im]``.  A config
has exactly one of ``system`` / ``sensor_suite``, a ``channel`` section and
optional ``engine`` and ``simulation`` sections (see ``configs/`` for
examples).  Schema errors name the offending JSON path and, when it can be
found, the line in the source text.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .matrix_core import Tolerances
from .model import (BoxRegion, FiniteMarkovChannel, GaussianHiddenChannel, GilbertElliottChannel, IidChannel,
                    MeasurementAlphabet, SystemModel)
from .schedule import (LossModel, SensorSuite, aggregate, gilbert_elliott_loss, iid_loss, no_loss, random_schedule,
                       time_based)

DEFAULT_SEED = 20240601


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        self.path, self.line = path, line
        where = f"{path or '<root>'}" + (f" (line {line})" if line else "")
        super().__init__(f"{where}: {message}")


# --- locating a JSON path in the raw text ---------------------------------

_dec = json.JSONDecoder()


def _ws(text: str, i: int) -> int:
    while i < len(text) and text[i] in " \t\r\n":
        i += 1
    return i


def _locate(text: str, parts: list) -> int | None:
    """Character offset of the value at ``parts`` (keys and indices)."""
    i = _ws(text, 0)
    try:
        for p in parts:
            if isinstance(p, int):
                if text[i] != "[":
                    return None
                i = _ws(text, i + 1)
                for _ in range(p):
                    _, i = _dec.raw_decode(text, i)
                    i = _ws(text, i)
                    if text[i] != ",":
                        return None
                    i = _ws(text, i + 1)
            else:
                if text[i] != "{":
                    return None
                i = _ws(text, i + 1)
                while True:
                    key, i = _dec.raw_decode(text, i)
                    i = _ws(text, _ws(text, i) + 1)      # skip ':'
                    if key == p:
                        break
                    _, i = _dec.raw_decode(text, i)
                    i = _ws(text, i)
                    if text[i] != ",":
                        return None
                    i = _ws(text, i + 1)
        return i
    except (ValueError, IndexError):
        return None


def _split_path(path: str) -> list:
    parts: list = []
    for chunk in path.replace("]", "").split("."):
        if not chunk:
            continue
        key, *idx = chunk.split("[")
        if key:
            parts.append(key)
        parts.extend(int(k) for k in idx)
    return parts


class _Reader:
    def __init__(self, text: str):
        self.text = text

    def error(self, path: str, msg: str) -> ConfigError:
        parts = _split_path(path)
        while parts:
            off = _locate(self.text, parts)
            if off is not None:
                return ConfigError(path, msg, self.text.count("\n", 0, off) + 1)
            parts = parts[:-1]
        return ConfigError(path, msg)

    def get(self, d: dict, key: str, path: str, default=...):
        if not isinstance(d, dict):
            raise self.error(path, "expected an object")
        if key not in d:
            if default is ...:
                raise self.error(path, f"missing required key '{key}'")
            return default
        return d[key]

    def scalar(self, v, path: str) -> complex:
        if isinstance(v, bool):
            raise self.error(path, "expected a number")
        if isinstance(v, (int, float)):
            return complex(v)
        if isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                                       for x in v):
            return complex(v[0], v[1])
        raise self.error(path, "expected a number or [re, im]")

    def matrix(self, v, path: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [[v]]
        if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
            raise self.error(path, "expected a matrix (non-empty list of rows)")
        width = len(v[0])
        out = np.empty((len(v), width), dtype=complex)
        for i, r in enumerate(v):
            if len(r) != width:
                raise self.error(f"{path}[{i}]", f"row has {len(r)} entries, expected {width}")
            for j, x in enumerate(r):
                out[i, j] = self.scalar(x, f"{path}[{i}][{j}]")
        if rows is not None and out.shape[0] != rows:
            raise self.error(path, f"expected {rows} rows, got {out.shape[0]}")
        if cols is not None and out.shape[1] != cols:
            raise self.error(path, f"expected {cols} columns, got {out.shape[1]}")
        return out

    def real_array(self, v, path: str, ndim: int) -> np.ndarray:
        try:
            a = np.array(v, dtype=float)
        except (TypeError, ValueError):
            raise self.error(path, "expected real numbers") from None
        if a.ndim != ndim:
            raise self.error(path, f"expected a {ndim}-dimensional array of numbers")
        return a

    def number(self, v, path: str, lo: float | None = None, hi: float | None = None) -> float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(path, "expected a real number")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise self.error(path, f"value {v} outside [{lo}, {hi}]")
        return float(v)


# --- config objects --------------------------------------------------------

@dataclass
class EngineOptions:
    strategies: tuple = ("closed_form", "exact", "monte_carlo")
    tol: Tolerances = field(default_factory=Tolerances)
    lattice_cap: int = 10**6
    sigma_cap: int = 10**7
    mc_trials: int = 100_000
    mc_grid: list | None = None
    seed: int = DEFAULT_SEED


@dataclass
class SimulationOptions:
    horizons: list = field(default_factory=lambda: list(range(10, 201, 10)))
    trials: int = 2000
    seed: int = DEFAULT_SEED
    t0: int = 0
    P0: np.ndarray | None = None
    proposal: str = "mixture"


@dataclass
class AnalysisConfig:
    raw: dict
    text: str
    system: SystemModel
    channel: object
    engine: EngineOptions
    simulation: SimulationOptions

    @property
    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


STRATEGY_NAMES = ("closed_form", "exact", "monte_carlo")
LOSS_TYPES = ("iid_loss", "gilbert_elliott_loss", "no_loss")


def _system(rd: _Reader, d: dict, path: str) -> SystemModel:
    A = rd.matrix(rd.get(d, "A", path), f"{path}.A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise rd.error(f"{path}.A", "must be square")
    Q = rd.matrix(rd.get(d, "Q", path), f"{path}.Q", n, n)
    P0 = d.get("P0")
    P0 = None if P0 is None else rd.matrix(P0, f"{path}.P0", n, n)
    entries = rd.get(d, "alphabet", path)
    if not isinstance(entries, list) or not entries:
        raise rd.error(f"{path}.alphabet", "expected a non-empty list of {label, C, R}")
    pairs, labels = [], []
    p = None
    for k, e in enumerate(entries):
        ep = f"{path}.alphabet[{k}]"
        C = rd.matrix(rd.get(e, "C", ep), f"{ep}.C", p, n)
        p = C.shape[0]
        R = rd.matrix(rd.get(e, "R", ep), f"{ep}.R", p, p)
        pairs.append((C, R))
        labels.append(str(e.get("label", f"d{k}")))
    try:
        return SystemModel(A, Q, MeasurementAlphabet(pairs, tuple(labels)), P0)
    except ValueError as exc:
        raise rd.error(path, str(exc)) from None


def _channel(rd: _Reader, d: dict, path: str, n_symbols: int | None):
    kind = rd.get(d, "type", path)
    try:
        if kind == "finite_markov":
            ks = rd.get(d, "kernels", path)
            kernels = tuple(rd.real_array(k, f"{path}.kernels[{i}]", 2) for i, k in enumerate(ks))
            em = rd.real_array(rd.get(d, "emission", path), f"{path}.emission", 1).astype(int)
            mu0 = d.get("mu0")
            mu0 = None if mu0 is None else rd.real_array(mu0, f"{path}.mu0", 1)
            ch = FiniteMarkovChannel(kernels, em, mu0, tuple(d.get("state_labels", ())))
        elif kind == "iid":
            ch = IidChannel(rd.real_array(rd.get(d, "probs", path), f"{path}.probs", 2))
        elif kind == "gilbert_elliott":
            ch = GilbertElliottChannel(rd.number(rd.get(d, "p_gb", path), f"{path}.p_gb", 0, 1),
                                       rd.number(rd.get(d, "p_bg", path), f"{path}.p_bg", 0, 1),
                                       rd.real_array(rd.get(d, "emit_good", path), f"{path}.emit_good", 1),
                                       rd.real_array(rd.get(d, "emit_bad", path), f"{path}.emit_bad", 1))
        elif kind == "gaussian_hidden":
            K = np.real(rd.matrix(rd.get(d, "K", path), f"{path}.K"))
            Sigma = np.real(rd.matrix(rd.get(d, "Sigma", path), f"{path}.Sigma"))
            regions = []
            for i, r in enumerate(rd.get(d, "regions", path)):
                rp = f"{path}.regions[{i}]"
                lo = _bound(rd, rd.get(r, "lower", rp), f"{rp}.lower", -np.inf, K.shape[0])
                hi = _bound(rd, rd.get(r, "upper", rp), f"{rp}.upper", np.inf, K.shape[0])
                regions.append(BoxRegion(lo, hi, int(rd.get(r, "symbol", rp))))
            ch = GaussianHiddenChannel(K, Sigma, tuple(regions))
        elif kind in LOSS_TYPES:
            raise rd.error(f"{path}.type", f"'{kind}' describes packet loss and needs a sensor_suite section")
        else:
            raise rd.error(f"{path}.type", f"unknown channel type {kind!r}")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise rd.error(path, str(exc)) from None
    if n_symbols is not None and isinstance(ch, FiniteMarkovChannel) and ch.emission.max() >= n_symbols:
        raise rd.error(f"{path}", f"channel emits symbol {int(ch.emission.max())} but the alphabet has "
                                  f"{n_symbols} entries")
    return ch


def _bound(rd: _Reader, v, path: str, missing: float, d: int) -> np.ndarray:
    # null means unbounded on that side
    v = v if isinstance(v, list) else [v] * d
    v = [missing if x is None else x for x in v]
    a = rd.real_array(v, path, 1)
    if a.shape != (d,):
        raise rd.error(path, f"expected {d} bounds")
    return a


def _loss(rd: _Reader, d: dict, path: str, slots: int) -> LossModel:
    kind = rd.get(d, "type", path)
    try:
        if kind == "iid_loss":
            lam = rd.get(d, "lam", path)
            lam = rd.number(lam, f"{path}.lam", 0, 1) if not isinstance(lam, list) else \
                rd.real_array(lam, f"{path}.lam", 1)
            return iid_loss(lam, slots)
        if kind == "gilbert_elliott_loss":
            if slots != 1:
                raise rd.error(path, "gilbert_elliott_loss supports a single transmission slot")
            return gilbert_elliott_loss(*(rd.number(rd.get(d, k, path), f"{path}.{k}", 0, 1)
                                          for k in ("p_gb", "p_bg", "loss_good", "loss_bad")))
        if kind == "no_loss":
            return no_loss(slots)
    except ConfigError:
        raise
    except ValueError as exc:
        raise rd.error(path, str(exc)) from None
    raise rd.error(f"{path}.type", f"sensor_suite channels must be one of {list(LOSS_TYPES)}, got {kind!r}")


def _suite(rd: _Reader, d: dict, path: str, channel: dict):
    F = rd.matrix(rd.get(d, "F", path), f"{path}.F")
    n = F.shape[0]
    N = rd.matrix(rd.get(d, "N", path), f"{path}.N", n, n)
    sensors = []
    for k, s in enumerate(rd.get(d, "sensors", path)):
        sp = f"{path}.sensors[{k}]"
        H = rd.matrix(rd.get(s, "H", sp), f"{sp}.H", None, n)
        E = rd.matrix(rd.get(s, "E", sp), f"{sp}.E", H.shape[0], H.shape[0])
        sensors.append((H, E))
    slots = int(rd.number(rd.get(d, "R_slots", path, 1), f"{path}.R_slots", 1))
    jordan = d.get("jordan")
    if jordan is not None:
        jordan = (rd.matrix(rd.get(jordan, "A", f"{path}.jordan"), f"{path}.jordan.A", n, n),
                  rd.matrix(rd.get(jordan, "V", f"{path}.jordan"), f"{path}.jordan.V", n, n))
    P0 = d.get("P0")
    P0 = None if P0 is None else rd.matrix(P0, f"{path}.P0", n, n)
    sched = rd.get(d, "schedule", path)
    sp = f"{path}.schedule"
    sels = [np.real(rd.matrix(m, f"{sp}.selections[{i}]", slots, len(sensors)))
            for i, m in enumerate(rd.get(sched, "selections", sp))]
    loss = _loss(rd, channel, "channel", slots)
    try:
        suite = SensorSuite(F, N, tuple(sensors), slots, jordan)
        kind = sched.get("type", "time_based")
        if kind == "time_based":
            plan = time_based(sels, loss)
        elif kind == "random":
            probs = sched.get("probs")
            kern = sched.get("kernel")
            plan = random_schedule(sels, loss,
                                   None if probs is None else rd.real_array(probs, f"{sp}.probs", 1),
                                   None if kern is None else rd.real_array(kern, f"{sp}.kernel", 2))
        else:
            raise rd.error(f"{sp}.type", f"unknown schedule type {kind!r}")
        return aggregate(suite, plan, P0)
    except ConfigError:
        raise
    except ValueError as exc:
        raise rd.error(path, str(exc)) from None


def _engine(rd: _Reader, d: dict) -> EngineOptions:
    e = EngineOptions()
    if not d:
        return e
    strat = d.get("strategies", list(e.strategies))
    if isinstance(strat, str):
        strat = [strat]
    for s in strat:
        if s not in STRATEGY_NAMES:
            raise rd.error("engine.strategies", f"unknown strategy {s!r}")
    e.strategies = tuple(strat)
    tol_keys = ("tol_rank", "tol_orth", "tol_angle", "n_max_order", "eps_margin")
    try:
        e.tol = Tolerances(**{k: d[k] for k in tol_keys if k in d})
    except (TypeError, ValueError) as exc:
        raise rd.error("engine", str(exc)) from None
    e.lattice_cap = int(d.get("lattice_cap", e.lattice_cap))
    e.sigma_cap = int(d.get("sigma_cap", e.sigma_cap))
    e.mc_trials = int(d.get("mc_trials", e.mc_trials))
    e.mc_grid = d.get("mc_grid", e.mc_grid)
    e.seed = int(d.get("seed", e.seed))
    return e


def _simulation(rd: _Reader, d: dict, n: int) -> SimulationOptions:
    s = SimulationOptions()
    if not d:
        return s
    if "horizons" in d:
        s.horizons = [int(h) for h in d["horizons"]]
    s.trials = int(d.get("trials", s.trials))
    s.seed = int(d.get("seed", s.seed))
    s.t0 = int(d.get("t0", 0))
    s.proposal = d.get("proposal", s.proposal)
    if d.get("P0") is not None:
        s.P0 = rd.matrix(d["P0"], "simulation.P0", n, n)
    return s


def build(raw: dict, text: str | None = None) -> AnalysisConfig:
    text = text if text is not None else json.dumps(raw, indent=2)
    rd = _Reader(text)
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be an object")
    has_sys, has_suite = "system" in raw, "sensor_suite" in raw
    if has_sys == has_suite:
        raise ConfigError("", "exactly one of 'system' or 'sensor_suite' is required")
    ch_raw = rd.get(raw, "channel", "")
    if has_sys:
        system = _system(rd, raw["system"], "system")
        channel = _channel(rd, ch_raw, "channel", len(system.alphabet))
    else:
        system, channel = _suite(rd, raw["sensor_suite"], "sensor_suite", ch_raw)
    return AnalysisConfig(raw, text, system, channel, _engine(rd, raw.get("engine")),
                          _simulation(rd, raw.get("simulation"), system.n))


def loads(text: str) -> AnalysisConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    return build(raw, text)


def load(path) -> AnalysisConfig:
    with open(path) as fh:
        return loads(fh.read())


def with_param(raw: dict, param: str, value) -> dict:
    """Copy of ``raw`` with the dotted path ``param`` set to ``value``.

    The path must already exist; this catches typos in sweep names.
    """
    out = copy.deepcopy(raw)
    parts = _split_path(param)
    if not parts:
        raise ConfigError(param, "empty parameter name")
    node = out
    for p in parts[:-1]:
        try:
            node = node[p]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(param, "unknown parameter") from None
    last = parts[-1]
    try:
        node[last]
    except (KeyError, IndexError, TypeError):
        raise ConfigError(param, "unknown parameter") from None
    node[last] = value
    return out


# --- serialisation of built models ----------------------------------------

def _enc(m: np.ndarray):
    m = np.asarray(m)
    if not np.iscomplexobj(m) or not np.any(m.imag):
        return np.real(m).tolist()
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def system_to_dict(system: SystemModel) -> dict:
    return {"A": _enc(system.A), "Q": _enc(system.Q), "P0": _enc(system.P0),
            "alphabet": [{"label": lab, "C": _enc(C), "R": _enc(R)}
                         for lab, (C, R) in zip(system.alphabet.labels, system.alphabet.pairs)]}


def channel_to_dict(channel) -> dict:
    if isinstance(channel, FiniteMarkovChannel):
        d = {"type": "finite_markov", "kernels": [k.tolist() for k in channel.kernels],
             "emission": channel.emission.tolist()}
        if channel.mu0 is not None:
            d["mu0"] = channel.mu0.tolist()
        if channel.state_labels:
            d["state_labels"] = list(channel.state_labels)
        return d
    return {"type": "gaussian_hidden", "K": channel.K.tolist(), "Sigma": channel.Sigma.tolist(),
            "regions": [{"lower": r.lower.tolist(), "upper": r.upper.tolist(), "symbol": int(r.symbol)}
                        for r in channel.regions]}
