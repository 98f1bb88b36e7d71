"""Command-line front end: ``kfstab {analyze,simulate,phi-table,validate}``.

Exit codes: 0 Stable, 10 Unstable, 20 Inconclusive, 1 error.  ``simulate``,
``phi-table`` and a passing ``validate`` exit with 0.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .config import AnalysisConfig, ConfigError, build, load, with_param
from .fmo import partition
from .kalman_sim import estimate_growth, write_trajectories
from .model import validate
from .phi import INCONCLUSIVE, STABLE, STRATEGIES, UNSTABLE, analyze

EXIT_CODES = {STABLE: 0, UNSTABLE: 10, INCONCLUSIVE: 20}
EXIT_ERROR = 1
THREADS_ENV = "KFSTAB_THREADS"

log = logging.getLogger("kfstab")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _parse_list(text: str, kind=float) -> list:
    """``"a,b,c"`` or an inclusive range ``"start:stop:step"``."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("range step must be positive")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        vals = [start + k * step for k in range(max(n, 0))]
        return [kind(round(v, 12)) for v in vals]
    return [kind(x) for x in text.split(",")]


def _strategies(arg: str | None, cfg: AnalysisConfig) -> tuple:
    if arg is None:
        return cfg.engine.strategies
    names = tuple(s.strip() for s in arg.split(",") if s.strip())
    bad = [s for s in names if s not in STRATEGIES]
    if bad:
        raise ValueError(f"unknown strategy {bad[0]!r}; choose from {', '.join(STRATEGIES)}")
    return names


def _apply_flags(cfg: AnalysisConfig, args) -> AnalysisConfig:
    eng, sim = cfg.engine, cfg.simulation
    eng.strategies = _strategies(getattr(args, "strategy", None), cfg)
    if getattr(args, "eps_margin", None) is not None:
        eng.tol = replace(eng.tol, eps_margin=args.eps_margin)
    if getattr(args, "seed", None) is not None:
        eng.seed = sim.seed = args.seed
    if getattr(args, "trials", None) is not None:
        eng.mc_trials = sim.trials = args.trials
    if getattr(args, "horizons", None):
        sim.horizons = _parse_list(args.horizons, int)
    return cfg


def _run_analysis(cfg: AnalysisConfig):
    eng = cfg.engine
    return analyze(cfg.system, cfg.channel, eng.strategies, eng.tol, eng.mc_trials, eng.seed, eng.mc_grid,
                   eng.lattice_cap, eng.sigma_cap, _threads())


def _run_growth(cfg: AnalysisConfig, record: int = 0):
    sim = cfg.simulation
    return estimate_growth(cfg.system, cfg.channel, sim.P0, sim.t0, sim.horizons, sim.trials, sim.seed,
                           sim.proposal, record=record, tol=cfg.engine.tol)


def _growth_agreement(growth, verdict: str) -> str:
    lo, hi = growth.ci
    if growth.diverging:
        sign = "positive slope"
    elif lo <= 0:
        sign = "slope <= 0"
    else:
        sign = "slope > 0 (not significant at 3 sigma)"
    if verdict == INCONCLUSIVE:
        return f"{sign}; verdict inconclusive"
    agrees = (verdict == UNSTABLE) == growth.diverging
    return f"{sign}, {'agrees' if agrees else 'disagrees'} with verdict {verdict}"


def report_document(cfg: AnalysisConfig, analysis, growth=None, timings=None) -> dict:
    """Deterministic for fixed inputs and seeds, apart from ``timings``."""
    part = analysis.partition
    doc = {
        "tool": "kfstab",
        "version": __version__,
        "input_sha256": cfg.digest,
        "seed": cfg.engine.seed,
        "strategies": list(cfg.engine.strategies),
        "partition": [b.summary() for b in part],
        "lattices": {str(k): lat.summary() for k, lat in sorted(analysis.lattices.items())},
        **analysis.report.to_dict(timings=False),
        "notices": list(analysis.notices),
        "growth": growth.to_dict() if growth is not None else None,
        "timings": timings or {},
    }
    return doc


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --- verbs -----------------------------------------------------------------

def cmd_analyze(args) -> int:
    cfg = _apply_flags(load(args.config), args)
    t0 = time.perf_counter()
    analysis = _run_analysis(cfg)
    timings = {"analysis_s": time.perf_counter() - t0}
    growth = None
    if args.simulate:
        t1 = time.perf_counter()
        growth = _run_growth(cfg)
        timings["simulation_s"] = time.perf_counter() - t1
    for note in analysis.notices:
        log.info(note)
    verdict = analysis.report.verdict
    if args.format == "csv":
        rows = []
        blocks = {b.index: b for b in analysis.partition}
        for r in analysis.report.results:
            b = blocks[r.block]
            lo, hi = r.ci if r.ci is not None else ("", "")
            rows.append([r.block, repr(r.abs_alpha), b.order, b.jbar, repr(r.phi), repr(r.margin), r.method,
                         lo, hi, verdict])
        _emit(_csv_text(["block", "abs_alpha", "order", "jbar", "phi", "margin", "method", "ci_low", "ci_high",
                         "verdict"], rows), args.out)
    else:
        _emit(_dump_json(report_document(cfg, analysis, growth, timings)), args.out)
    print(f"verdict: {verdict}", file=sys.stderr)
    return EXIT_CODES[verdict]


def cmd_simulate(args) -> int:
    cfg = _apply_flags(load(args.config), args)
    growth = _run_growth(cfg, record=args.record if args.trajectories else 0)
    if args.trajectories:
        write_trajectories(args.trajectories, growth.trajectories)
    summary = f"slope={growth.slope:.6g} se={growth.se:.3g} ci=[{growth.ci[0]:.6g}, {growth.ci[1]:.6g}]"
    if args.compare:
        summary += "; " + _growth_agreement(growth, _run_analysis(cfg).report.verdict)
    if args.format == "json":
        _emit(_dump_json({**growth.to_dict(), "summary": summary}), args.out)
    else:
        rows = [[int(h), repr(float(m)), repr(float(lm))]
                for h, m, lm in zip(growth.horizons, growth.mean_norms, growth.log_mean_norms)]
        _emit(_csv_text(["horizon", "mean_norm", "log_mean_norm"], rows), args.out)
    print(summary, file=sys.stderr)
    return 0


def cmd_phi_table(args) -> int:
    cfg = _apply_flags(load(args.config), args)
    grid = _parse_list(args.grid)
    raw = cfg.raw
    with_param(raw, args.param, 0)          # unknown names fail before any work
    n_blocks = sum(1 for b in partition(cfg.system, cfg.engine.tol) if not b.is_zero)
    header = ["value"] + [f"{k}_{i}" for i in range(n_blocks) for k in ("phi", "margin")] + ["verdict"]
    rows = []
    for v in grid:
        sub = build(with_param(raw, args.param, v))
        sub.engine = cfg.engine
        res = _run_analysis(sub).report
        cells = [repr(v)]
        for r in res.results:
            if r.method != "zero_block":
                cells += [repr(r.phi), repr(r.margin)]
        rows.append(cells + [res.verdict])
    if args.format == "json":
        _emit(_dump_json([dict(zip(header, r)) for r in rows]), args.out)
    else:
        _emit(_csv_text(header, rows), args.out)
    return 0


def cmd_validate(args) -> int:
    cfg = load(args.config)
    rep = validate(cfg.system, cfg.channel)
    _emit(_dump_json(rep.to_dict()), args.out)
    return 0 if rep.valid else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kfstab", description="Stability of Kalman filtering with random measurements.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log engine notices to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, fmt=("json", "csv"), default="json"):
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--out", help="write the result here instead of stdout")
        sp.add_argument("--format", choices=fmt, default=default)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--strategy", help="comma-separated preference order: closed_form,exact,monte_carlo")
        sp.add_argument("--eps-margin", type=float, dest="eps_margin")

    a = sub.add_parser("analyze", help="per-block Phi, margins and verdict")
    common(a)
    a.add_argument("--simulate", action="store_true", help="also estimate covariance growth")
    a.add_argument("--horizons", help="e.g. 10,20,50 or 10:200:10")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="Monte Carlo growth of the expected covariance")
    common(s, default="csv")
    s.add_argument("--horizons", help="e.g. 10,20,50 or 10:200:10")
    s.add_argument("--compare", action="store_true", help="compare the slope with the analytic verdict")
    s.add_argument("--trajectories", help="CSV path for per-trial norm trajectories")
    s.add_argument("--record", type=int, default=10, help="number of trials written to --trajectories")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("phi-table", help="sweep a config parameter and tabulate Phi")
    common(t, default="csv")
    t.add_argument("--param", required=True, help="dotted config path, e.g. channel.lam")
    t.add_argument("--grid", required=True, help="e.g. 0.1,0.2,0.3 or 0.1:0.9:0.1 (empty for none)")
    t.set_defaults(func=cmd_phi_table)

    v = sub.add_parser("validate", help="check the model assumptions")
    v.add_argument("config")
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (OSError, ValueError, RuntimeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
