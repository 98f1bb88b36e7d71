import csv

import numpy as np
import pytest

from kfstab.kalman_sim import (CovTrajectory, compose, estimate_growth, expected_cov_exact, riccati_step,
                               simulate_filter, write_trajectories)
from kfstab.model import IidChannel, MeasurementAlphabet, SystemModel, sample_trace

from conftest import parity_system, scalar_system, two_state_channel


def test_riccati_examples():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    Q = np.eye(3)
    X = rng.standard_normal((3, 3))
    P = X @ X.T
    assert np.allclose(riccati_step(P, np.zeros((2, 3)), np.eye(2), A, Q), A @ P @ A.T + Q)
    assert np.allclose(riccati_step(P, rng.standard_normal((3, 3)), np.zeros((3, 3)), A, Q), Q, atol=1e-8)
    assert riccati_step([[1]], [[1]], [[1]], [[2]], [[1]])[0, 0] == pytest.approx(3)
    with pytest.raises(ValueError):
        riccati_step(np.eye(2), [[1, 0]], [[1]], np.eye(3), np.eye(3))


def test_riccati_singular_innovation_uses_pseudo_inverse():
    # C P C* + R singular: the second measurement row is identically zero
    C = np.array([[1.0, 0], [0, 0]])
    out = riccati_step(np.eye(2), C, np.zeros((2, 2)), np.eye(2), np.zeros((2, 2)))
    assert np.allclose(out, np.diag([0, 1]))


def test_compose_examples():
    s = scalar_system(a=1.2, q=0.5)
    tr = compose(np.eye(1), [], s)
    assert len(tr) == 1 and np.allclose(tr.final, np.eye(1))
    T = 7
    lost = compose(2 * np.eye(1), [0] * T, s).final[0, 0]
    a2 = 1.2 ** 2
    assert lost == pytest.approx(a2 ** T * 2 + 0.5 * sum(a2 ** j for j in range(T)))
    g1, g2 = [0, 1, 1], [0, 0, 1]
    whole = compose(np.eye(1), g1 + g2, s)
    part = compose(compose(np.eye(1), g1, s).final, g2, s)
    assert np.allclose(whole.final, part.final)
    assert np.allclose(whole.P_seq[3], compose(np.eye(1), g1, s).final)


def test_compose_lyapunov_for_matrices():
    A = np.array([[1.1, 1], [0, 1.1]])
    alph = MeasurementAlphabet([(np.zeros((1, 2)), np.eye(1))])
    s = SystemModel(A, np.diag([1.0, 2.0]), alph)
    T = 5
    P = compose(np.eye(2), [0] * T, s).final
    expect = np.linalg.matrix_power(A, T) @ np.linalg.matrix_power(A.T, T)
    expect = expect + sum(np.linalg.matrix_power(A, j) @ s.Q @ np.linalg.matrix_power(A.T, j) for j in range(T))
    assert np.allclose(P, expect)


def test_compose_accepts_trace():
    s = scalar_system()
    tr = sample_trace(IidChannel([[0.5, 0.5]]), 1, 10, seed=2)
    out = compose(np.eye(1), tr, s)
    assert out.t0 == 1 and out.gamma_used is tr and len(out) == 11


def test_growth_stable_system_is_bounded():
    s = scalar_system(a=0.8)
    g = estimate_growth(s, IidChannel([[0.5, 0.5]]), horizons=range(10, 101, 10), trials=500, seed=1)
    assert g.ci[0] <= 0 or g.slope <= 0
    assert not g.diverging
    assert np.all(g.mean_norms > 0) and np.all(np.diff(g.horizons) > 0)


def test_growth_rescaling_keeps_log_norm_finite():
    s = scalar_system(a=3.0)
    g = estimate_growth(s, IidChannel([[1.0, 0.0]]), horizons=[200, 400, 800], trials=100, seed=0)
    assert np.all(np.isfinite(g.log_mean_norms))
    assert g.slope == pytest.approx(2 * np.log(3), rel=1e-6)


def test_growth_validation():
    s = scalar_system()
    with pytest.raises(ValueError):
        estimate_growth(s, IidChannel([[0.5, 0.5]]), trials=10)
    with pytest.raises(ValueError):
        estimate_growth(s, IidChannel([[0.5, 0.5]]), horizons=[0, 5], trials=100)
    with pytest.raises(ValueError):
        estimate_growth(s, IidChannel([[0.5, 0.5]]), trials=100, proposal="bogus")


def test_growth_is_reproducible():
    s = parity_system()
    ch = two_state_channel()
    a = estimate_growth(s, ch, horizons=[5, 10], trials=200, seed=9)
    b = estimate_growth(s, ch, horizons=[5, 10], trials=200, seed=9)
    assert np.array_equal(a.log_mean_norms, b.log_mean_norms)


@pytest.mark.parametrize("proposal", ["plain", "mixture"])
def test_growth_mean_matches_exact_enumeration(proposal):
    s = parity_system()
    ch = two_state_channel()
    T = 8
    exact = np.log(np.linalg.norm(expected_cov_exact(s, ch, T), 2))
    g = estimate_growth(s, ch, horizons=[T], trials=20_000, seed=5, proposal=proposal)
    assert abs(g.log_mean_norms[0] - exact) <= 3 * g.log_mean_se[0]


def test_expected_cov_exact_limits():
    with pytest.raises(ValueError):
        expected_cov_exact(scalar_system(), IidChannel([[0.5, 0.5]]), 13)
    s = scalar_system(a=2.0)
    # always lost: deterministic Lyapunov value
    assert expected_cov_exact(s, IidChannel([[1.0, 0.0]]), 3)[0, 0] == pytest.approx(64 + 16 + 4 + 1)


def test_trajectory_csv(tmp_path):
    s = scalar_system(a=1.2)
    g = estimate_growth(s, IidChannel([[0.5, 0.5]]), horizons=[5], trials=100, seed=0, record=3)
    path = tmp_path / "traj.csv"
    write_trajectories(path, g.trajectories)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "norm_P", "log_norm_P", "trial_id"]
    assert len(rows) == 1 + 5 * 3
    t, nrm, lg, _ = map(float, rows[1])
    assert np.log(nrm) == pytest.approx(lg)
    write_trajectories(tmp_path / "b.csv", [compose(np.eye(1), [0, 1], s)])
    assert len(list(csv.reader(open(tmp_path / "b.csv")))) == 4


def test_filter_zero_noise_converges():
    alph = MeasurementAlphabet([(np.eye(2), np.zeros((2, 2)))])
    s = SystemModel([[1.1, 1], [0, 1.1]], np.zeros((2, 2)), alph)
    run = simulate_filter(s, IidChannel([[1.0]]), 10, seed=3)
    assert np.max(run.squared_errors()[2:]) < 1e-18


def test_filter_is_deterministic():
    s = scalar_system(a=0.9)
    a = simulate_filter(s, IidChannel([[0.3, 0.7]]), 20, seed=8)
    b = simulate_filter(s, IidChannel([[0.3, 0.7]]), 20, seed=8)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.estimates, b.estimates)
    assert isinstance(a.covariances, CovTrajectory)
    with pytest.raises(ValueError):
        simulate_filter(s, IidChannel([[1.0, 0.0]]), 0)


@pytest.mark.slow
def test_filter_error_matches_riccati():
    s = scalar_system(a=0.9, q=1.0, r=0.5)
    ch = IidChannel([[0.3, 0.7]])
    horizon, trials = 6, 10_000
    errs = np.empty(trials)
    traces = np.empty(trials)
    for i in range(trials):
        run = simulate_filter(s, ch, horizon, seed=i)
        errs[i] = run.squared_errors()[-1]
        traces[i] = np.real(np.trace(run.covariances.final))
    # E|e_T|^2 = E trace(P_T); compare the mean of the difference to its standard error
    diff = errs - traces
    assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / np.sqrt(trials)
