"""End-to-end acceptance checks at their stated tolerances.

Each test prints a single PASS/FAIL line, collected again in the terminal summary.
"""

import csv
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, ALPHA1, parity_system, scalar_system, two_state_channel
from kfstab.cli import main
from kfstab.fmo import partition
from kfstab.kalman_sim import estimate_growth, expected_cov_exact
from kfstab.model import IidChannel
from kfstab.observability import build_lattice
from kfstab.phi import STABLE, UNSTABLE, analyze, build_sigma, non_fcr_probability, phi_closed_form, phi_exact, phi_monte_carlo
from kfstab.matrix_core import spectral_radius

ROOT = Path(__file__).resolve().parents[1]
WORKED = ROOT / "configs" / "two_sensor_alternating.json"
CRITICAL = ALPHA1 ** -4


def _report(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _lam_for_margin(margin):
    # margin = alpha1^2 sqrt(lam)
    return (margin / ALPHA1 ** 2) ** 2


def test_criterion_1_closed_form_reproduction(two_sensor):
    worst_err, worst_time = 0.0, 0.0
    for lam in (0.1, 0.25, 0.5, 0.8):
        t0 = time.perf_counter()
        system, channel = two_sensor(lam)
        for block in partition(system):
            exact = phi_exact(block, build_lattice(block, system.alphabet), channel)
            closed = phi_closed_form(block, channel, alphabet=system.alphabet)
            for res in (exact, closed):
                worst_err = max(worst_err, abs(res.phi - np.sqrt(lam)))
        worst_time = max(worst_time, time.perf_counter() - t0)
    _report(1, worst_err <= 1e-9 and worst_time < 1.0,
            f"max |Phi - sqrt(lam)| = {worst_err:.2e}, slowest point {worst_time:.3f} s")


def test_criterion_2_verdict_flip(two_sensor, tmp_path):
    lo = analyze(*two_sensor(0.9 * CRITICAL), strategies=("closed_form", "exact")).report.verdict
    hi = analyze(*two_sensor(1.1 * CRITICAL), strategies=("closed_form", "exact")).report.verdict
    out = tmp_path / "sweep.csv"
    step = 0.01
    main(["phi-table", str(WORKED), "--param", "channel.lam", "--grid", f"0.2:0.5:{step}", "--out", str(out)])
    rows = [(float(r["value"]), r["verdict"]) for r in csv.DictReader(open(out))]
    last_stable = max(v for v, verdict in rows if verdict == STABLE)
    first_unstable = min(v for v, verdict in rows if verdict == UNSTABLE)
    bracket = (last_stable < CRITICAL < first_unstable and first_unstable - last_stable <= step + 1e-12
               and all(verdict == STABLE for v, verdict in rows if v <= last_stable)
               and all(verdict == UNSTABLE for v, verdict in rows if v >= first_unstable))
    _report(2, lo == STABLE and hi == UNSTABLE and bracket,
            f"0.9x -> {lo}, 1.1x -> {hi}, flip in ({last_stable:.2f}, {first_unstable:.2f}) around {CRITICAL:.4f}")


def test_criterion_3_simulation_cross_check(two_sensor):
    horizons = list(range(10, 201, 10))
    t0 = time.perf_counter()
    up = estimate_growth(*two_sensor(_lam_for_margin(1.2)), horizons=horizons, trials=2000, seed=11)
    down = estimate_growth(*two_sensor(_lam_for_margin(0.8)), horizons=horizons, trials=2000, seed=11)
    elapsed = time.perf_counter() - t0
    ok = up.slope - 3 * up.se > 0 and down.ci[0] <= 0 and elapsed < 60
    _report(3, ok, f"margin 1.2 slope {up.slope:.4f} (se {up.se:.4f}); margin 0.8 slope {down.slope:.4f} "
                   f"CI [{down.ci[0]:.4f}, {down.ci[1]:.4f}]; {elapsed:.1f} s")


def test_criterion_4_classical_iid():
    a = 1.5
    worst = 0.0
    verdicts = []
    for p in (0.1, 0.3, 0.6, 0.9):
        system, channel = scalar_system(a=a), IidChannel([[p, 1 - p]])
        block = partition(system)[0]
        exact = phi_exact(block, build_lattice(block, system.alphabet), channel).phi
        closed = phi_closed_form(block, channel, alphabet=system.alphabet).phi
        worst = max(worst, abs(exact - p), abs(closed - p), abs(exact - closed))
    p_crit = 1 / a ** 2
    for p in (0.98 * p_crit, 1.02 * p_crit):
        verdicts.append(analyze(scalar_system(a=a), IidChannel([[p, 1 - p]]), strategies=("exact",)).report.verdict)
    ok = worst <= 1e-12 and verdicts == [STABLE, UNSTABLE]
    _report(4, ok, f"max deviation from Phi = p {worst:.1e}; around critical arrival prob "
                   f"{1 - p_crit:.4f}: {verdicts}")


def test_criterion_5_monte_carlo_coverage(two_sensor):
    system, channel = two_sensor(0.25)
    block = partition(system)[0]
    lattice = build_lattice(block, system.alphabet)
    exact = phi_exact(block, lattice, channel).phi
    t0 = time.perf_counter()
    covered = 0
    for seed in range(20):
        res = phi_monte_carlo(block, lattice, channel, trials=100_000, seed=seed)
        covered += res.ci[0] <= exact <= res.ci[1]
    elapsed = time.perf_counter() - t0
    _report(5, covered >= 18 and elapsed < 120, f"{covered}/20 intervals cover {exact:.6f}; {elapsed:.1f} s")


def test_criterion_6_property_suites():
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(ROOT / "tests" / "test_properties.py")], capture_output=True, text=True, cwd=ROOT)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    _report(6, proc.returncode == 0, tail)


def test_criterion_7_enumeration_oracle():
    system, channel = parity_system(), two_state_channel()
    T = 12
    exact = np.log(np.linalg.norm(expected_cov_exact(system, channel, T), 2))
    mc = estimate_growth(system, channel, horizons=[T], trials=20_000, seed=3)
    z = abs(mc.log_mean_norms[0] - exact) / mc.log_mean_se[0]

    block = partition(system)[0]
    lattice = build_lattice(block, system.alphabet)
    sig = build_sigma(block, lattice, channel, 0)
    rate = max(spectral_radius(sig.matrices[(i, i)]) for i in range(lattice.I)) ** (1 / sig.M)
    p12 = non_fcr_probability(block, channel, 0, T, method="enumerate")
    p10 = non_fcr_probability(block, channel, 0, T - 2, method="enumerate")
    local = (p12 / p10) ** 0.5
    whole = p12 ** (1 / T)
    rel_local, rel_whole = abs(local / rate - 1), abs(whole / rate - 1)
    ok = z <= 3 and rel_local <= 0.1 and rel_whole <= 0.1
    _report(7, ok, f"log||E Psi|| exact {exact:.4f} vs MC {mc.log_mean_norms[0]:.4f} ({z:.2f} se); "
                   f"rate {rate:.4f} vs enumeration {local:.4f} / {whole:.4f} "
                   f"({100 * rel_local:.1f}% / {100 * rel_whole:.1f}%)")
