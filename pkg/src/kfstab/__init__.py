"""Stability analysis of Kalman filtering with randomly varying measurements."""

__version__ = "0.1.0"

from .fmo import FmoBlock, FmoPartition, PartitionError, partition
from .kalman_sim import compose, estimate_growth, expected_cov_exact, riccati_step, simulate_filter
from .matrix_core import DEFAULT_TOL, Subspace, Tolerances
from .model import (FiniteMarkovChannel, GaussianHiddenChannel, GilbertElliottChannel, IidChannel,
                    MeasurementAlphabet, SystemModel, validate)
from .observability import build_lattice, build_obs, has_fcr
from .phi import analyze, phi_closed_form, phi_exact, phi_monte_carlo, verdict
from .schedule import SensorSuite, aggregate, alternating_sensors, example_7_3, iid_loss, time_based

__all__ = [
    "DEFAULT_TOL", "FiniteMarkovChannel", "FmoBlock", "FmoPartition", "GaussianHiddenChannel",
    "GilbertElliottChannel", "IidChannel", "MeasurementAlphabet", "PartitionError", "SensorSuite", "Subspace",
    "SystemModel", "Tolerances", "aggregate", "analyze", "build_lattice", "build_obs", "compose",
    "alternating_sensors", "estimate_growth", "example_7_3", "expected_cov_exact", "has_fcr", "iid_loss", "partition",
    "phi_closed_form", "phi_exact", "phi_monte_carlo", "riccati_step", "simulate_filter", "time_based",
    "validate", "verdict",
]
