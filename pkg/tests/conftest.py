"""Shared fixtures.

The expensive artifacts (optimized pulses, noisy trajectories, spectral
fits) are session-scoped so the module suites and the acceptance suite
share one computation of each.
"""

import numpy as np
import pytest

from nnspin.device import DeviceOperators, TransmonSpec
from nnspin.hamiltonian import (Geometry, calibrated_coefficients, build_vsd,
                                target_propagator)
from nnspin.lindblad import basis_state_density, repeated_gate_trajectory
from nnspin.pulse import GrapeOptions, optimize_pulse
from nnspin.spectral import find_peaks, gls_refine, power_spectrum

DT_NUCLEAR = 0.30
DT_POWER3 = 0.03
TRACE_SHIFT = 1.0


@pytest.fixture(scope="session")
def geometry():
    return Geometry()


@pytest.fixture(scope="session")
def coeffs():
    return calibrated_coefficients()


@pytest.fixture(scope="session")
def vsd(coeffs, geometry):
    return build_vsd(coeffs, geometry)


@pytest.fixture(scope="session")
def transmon():
    return TransmonSpec()


@pytest.fixture(scope="session")
def grape_result(vsd, transmon):
    """Deeply refined pulse for exp(-i V dt); shared by many tests."""
    target = target_propagator(vsd, DT_NUCLEAR, power=1)
    opts = GrapeOptions(refine_target=1e-9, max_iterations=3000)
    return optimize_pulse(target, transmon, opts)


@pytest.fixture(scope="session")
def grape_result_p3(vsd, transmon):
    """Pulse for the shifted, cubed propagator used in reconstruction."""
    shifted = vsd + TRACE_SHIFT * np.eye(4)
    target = target_propagator(shifted, DT_POWER3, power=3)
    opts = GrapeOptions(refine_target=1e-9, max_iterations=3000)
    return optimize_pulse(target, transmon, opts)


def _trajectory(pulse, transmon, dt, n_steps, noise):
    ops = DeviceOperators.build(transmon, with_noise=noise)
    rho0 = basis_state_density(transmon.n_levels, 1)
    return repeated_gate_trajectory(rho0, pulse, ops, n_steps, dt)


@pytest.fixture(scope="session")
def noisy_record(grape_result, transmon):
    return _trajectory(grape_result.pulse, transmon, DT_NUCLEAR, 256, True)


@pytest.fixture(scope="session")
def noisy_record_p3(grape_result_p3, transmon):
    return _trajectory(grape_result_p3.pulse, transmon, DT_POWER3, 256, True)


@pytest.fixture(scope="session")
def noiseless_record(grape_result, transmon):
    return _trajectory(grape_result.pulse, transmon, DT_NUCLEAR, 256, False)


@pytest.fixture(scope="session")
def spectral_result(noisy_record):
    peaks = find_peaks(power_spectrum(noisy_record), 4)
    return gls_refine(noisy_record, peaks, rng_seed=0)


@pytest.fixture(scope="session")
def spectral_result_p3(noisy_record_p3):
    peaks = find_peaks(power_spectrum(noisy_record_p3), 4)
    return gls_refine(noisy_record_p3, peaks, rng_seed=0)


# Reduced-cost pipeline configuration for pipeline/service/CLI tests: a
# looser pulse target and a short trajectory keep a full run to a few
# seconds while exercising every stage.
FAST_OVERRIDES = [
    ("pulse.infidelity_target", "5e-3"),
    ("pulse.refine_target", "null"),
    ("pulse.max_iterations", "300"),
    ("simulation.n_steps", "64"),
    ("analysis.n_restarts", "1"),
    ("analysis.fit_max_iterations", "1500"),
]


@pytest.fixture(scope="session")
def fast_run(tmp_path_factory):
    """One complete fast pipeline run shared across suites."""
    from nnspin.pipeline import Pipeline, RunConfig

    out = tmp_path_factory.mktemp("fastrun")
    config = RunConfig().with_overrides(FAST_OVERRIDES
                                        + [("output_dir", str(out))])
    pipeline = Pipeline(config)
    status = pipeline.run_all()
    return config, pipeline, status
