import numpy as np
import pytest

from kfstab.fmo import partition
from kfstab.model import FiniteMarkovChannel, IidChannel, MeasurementAlphabet, SystemModel
from kfstab.observability import build_lattice
from kfstab.phi import (INCONCLUSIVE, STABLE, UNSTABLE, PhiResult, SigmaCapError, analyze, build_sigma,
                        closed_form_blind_symbols, fit_decay_rate, non_fcr_probability, phi_closed_form, phi_exact,
                        phi_monte_carlo, verdict)

from conftest import parity_system, scalar_system, two_state_channel


def blocks_and_lattices(system):
    part = partition(system)
    return part, [build_lattice(b, system.alphabet) for b in part]


def test_sigma_zero_on_diagonal_when_always_observed():
    s = scalar_system()
    ch = IidChannel([[0.0, 1.0]])
    (b,), (lat,) = blocks_and_lattices(s)
    sig = build_sigma(b, lat, ch, 0)
    for i in range(lat.I):
        assert not np.any(sig.matrices[(i, i)])


def test_sigma_worked_example_blind_window(two_sensor):
    lam = 0.3
    s, ch = two_sensor(lam)
    part, lats = blocks_and_lattices(s)
    sig = build_sigma(part[0], lats[0], ch, 0)
    assert sig.M == 2
    m = sig.matrices[(0, 0)]
    # from a lost start the window stays blind surely; from a delivered start never
    mu = np.array([lam, 1 - lam])
    lost_col = list(ch.emission[sig.support]).index(0)
    expected = np.zeros((2, 2))
    expected[:, lost_col] = mu
    assert np.allclose(m, expected, atol=1e-15)
    assert max(abs(np.linalg.eigvals(m))) == pytest.approx(lam)


def test_sigma_transition_is_stochastic():
    s = parity_system()
    ch = two_state_channel()
    (b,), (lat,) = blocks_and_lattices(s)
    sig = build_sigma(b, lat, ch, 0)
    assert np.allclose(sig.transition().sum(axis=0), 1.0)


def test_sigma_cap():
    s = parity_system()
    (b,), (lat,) = blocks_and_lattices(s)
    with pytest.raises(SigmaCapError):
        build_sigma(b, lat, two_state_channel(), 0, M=8, cap=10)
    with pytest.raises(ValueError):
        build_sigma(b, lat, two_state_channel(), 0, M=3)


@pytest.mark.parametrize("lam", [0.1, 0.25, 0.5, 0.8])
def test_exact_and_closed_form_worked_example(two_sensor, lam):
    s, ch = two_sensor(lam)
    part, lats = blocks_and_lattices(s)
    for b, lat in zip(part, lats):
        assert phi_exact(b, lat, ch).phi == pytest.approx(np.sqrt(lam), abs=1e-12)
        cf = phi_closed_form(b, ch)
        assert cf.phi == pytest.approx(np.sqrt(lam), abs=1e-12)
    conds = phi_closed_form(part[0], ch).per_phase
    assert conds == pytest.approx([lam, 1.0])


def test_exact_always_observed_is_zero():
    s = scalar_system()
    (b,), (lat,) = blocks_and_lattices(s)
    assert phi_exact(b, lat, IidChannel([[0.0, 1.0]])).phi == 0.0


@pytest.mark.parametrize("p", [0.05, 0.3, 0.7])
def test_scalar_iid_phi_equals_loss_probability(p):
    s = scalar_system()
    ch = IidChannel([[p, 1 - p]])
    (b,), (lat,) = blocks_and_lattices(s)
    # P(N^{0,T}) = p^T exactly
    assert non_fcr_probability(b, ch, 0, 6, "enumerate") == pytest.approx(p ** 6, rel=1e-12)
    ex, cf = phi_exact(b, lat, ch).phi, phi_closed_form(b, ch).phi
    assert ex == pytest.approx(p, abs=1e-12)
    assert abs(ex - cf) <= 1e-12


def test_closed_form_not_applicable_with_two_blind_matrices():
    alph = MeasurementAlphabet([([[0, 0]], [[1]]), ([[1, 0]], [[1]]), ([[0, 1]], [[1]])])
    s = SystemModel(2 * np.eye(2), np.eye(2), alph)
    b = partition(s)[0]
    assert closed_form_blind_symbols(b) is None
    assert phi_closed_form(b, IidChannel([[0.2, 0.4, 0.4]])) is None


def test_closed_form_not_applicable_when_blind_matrix_observable():
    # C = [1 1] on a 2x2 Jordan block is rank deficient yet observable
    alph = MeasurementAlphabet([([[1, 1]], [[1]]), ([[1, 0], [0, 1]][0:1], [[1]])])
    s = SystemModel([[1.2, 1], [0, 1.2]], np.eye(2), alph)
    assert closed_form_blind_symbols(partition(s)[0]) is None


def test_closed_form_markov_conditionals():
    # bursty loss: conditionals converge to the blind-run continuation probability
    s = scalar_system()
    ch = two_state_channel(a=0.4, b=0.3)
    (b,), (lat,) = blocks_and_lattices(s)
    cf = phi_closed_form(b, ch)
    assert cf.phi == pytest.approx(0.6, abs=1e-12)
    assert phi_exact(b, lat, ch).phi == pytest.approx(0.6, abs=1e-12)


def test_non_fcr_probability_dp_matches_enumeration():
    s = parity_system()
    ch = two_state_channel()
    b = partition(s)[0]
    for T in (1, 3, 6, 9):
        assert non_fcr_probability(b, ch, 0, T) == pytest.approx(
            non_fcr_probability(b, ch, 0, T, "enumerate"), rel=1e-12)


def test_monte_carlo_always_observed():
    s = scalar_system()
    b = partition(s)[0]
    r = phi_monte_carlo(b, None, IidChannel([[0.0, 1.0]]), trials=2000, seed=0)
    assert r.phi == 0.0 and any("no_hits" in f for f in r.flags)
    with pytest.raises(ValueError):
        phi_monte_carlo(b, None, IidChannel([[0.0, 1.0]]), trials=10)


def test_monte_carlo_worked_example(two_sensor):
    s, ch = two_sensor(0.25)
    b = partition(s)[0]
    r = phi_monte_carlo(b, None, ch, trials=100_000, seed=12)
    assert r.phi == pytest.approx(0.5, rel=0.05)
    assert r.ci[0] <= r.phi <= r.ci[1]


def test_monte_carlo_scalar_iid():
    s = scalar_system()
    b = partition(s)[0]
    r = phi_monte_carlo(b, None, IidChannel([[0.3, 0.7]]), trials=50_000, seed=4)
    assert r.ci[0] <= 0.3 <= r.ci[1]


def test_fit_decay_rate_needs_two_bins():
    assert fit_decay_rate([1, 2], [100, 5], 1000)["phi"] is None
    fit = fit_decay_rate([1, 2, 3], [500_000, 250_000, 125_000], 1_000_000)
    assert fit["phi"] == pytest.approx(0.5, rel=1e-3)


def test_verdict_bands(two_sensor):
    s, _ = two_sensor()
    part = partition(s)
    mk = lambda phi0: [PhiResult(0, phi0, "x", 1.3), PhiResult(1, 0.1, "x", 1.1)]
    assert verdict(part, mk(0.9 / 1.69)).verdict == STABLE
    assert verdict(part, mk(1.1 / 1.69)).verdict == UNSTABLE
    assert verdict(part, mk(1.0 / 1.69)).verdict == INCONCLUSIVE
    with pytest.raises(ValueError):
        verdict(part, mk(0.1)[:1])


def test_verdict_ignores_stable_modes():
    alph = MeasurementAlphabet([([[0]], [[1]])])
    s = SystemModel([[0.9]], [[1]], alph)
    r = verdict(partition(s), [PhiResult(0, 1.0, "x", 0.9)])
    assert r.verdict == STABLE


@pytest.mark.parametrize("lam, expected", [(0.9 / 1.3 ** 4, STABLE), (1.1 / 1.3 ** 4, UNSTABLE),
                                           (0.0, STABLE), (1.0, UNSTABLE)])
def test_analyze_worked_example(two_sensor, lam, expected):
    s, ch = two_sensor(lam)
    a = analyze(s, ch)
    assert a.report.verdict == expected
    assert all(r.phi == pytest.approx(np.sqrt(lam), abs=1e-12) for r in a.report.results)


def test_analyze_falls_back_when_lattice_too_large():
    s = parity_system()
    ch = two_state_channel()
    a = analyze(s, ch, strategies=("closed_form", "exact", "monte_carlo"), lattice_cap=2, mc_trials=20_000)
    assert a.report.results[0].method == "monte_carlo"
    assert any("falling back" in n for n in a.notices)
    assert any("closed form not applicable" in n for n in a.notices)


def test_strategies_agree_on_verdict(two_sensor):
    s, ch = two_sensor(0.25)
    verdicts = {analyze(s, ch, strategies=(st,), mc_trials=20_000).report.verdict
                for st in ("closed_form", "exact", "monte_carlo")}
    assert verdicts == {STABLE}


def test_zero_block_is_auto_stable():
    alph = MeasurementAlphabet([([[0, 0]], [[1]]), ([[1, 0]], [[1]])])
    s = SystemModel(np.diag([1.2, 0.0]), np.eye(2), alph)
    a = analyze(s, IidChannel([[0.5, 0.5]]))
    assert a.report.verdict == STABLE
    assert [r.method for r in a.report.results] == ["closed_form", "zero_block"]


def test_non_proper_channel_is_flagged():
    s = scalar_system()
    k = np.array([[0.0, 1.0], [1.0, 0.0]])
    ch = FiniteMarkovChannel((k,), np.array([0, 1]), mu0=np.array([0.5, 0.5]))
    (b,), (lat,) = blocks_and_lattices(s)
    assert "channel_not_proper" in phi_exact(b, lat, ch).flags
