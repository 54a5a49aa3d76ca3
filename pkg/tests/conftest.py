import numpy as np
import pytest

from h2axdose.calibrate import FitConfig, calibrate
from h2axdose.model import MixtureParams, sample_synthetic

K2_TRUTH = MixtureParams.from_arrays([0.6, 0.4], [4.5, 10.0], [0.8, 1.8], [-0.1], [-0.45, -0.35])
K1_TRUTH = MixtureParams.from_arrays([1.0], [1.0], [1.0], [0.0], [0.0])


def grid_design(doses, times, cells):
    return [(d, t, cells) for d in doses for t in times]


K2_DESIGN = grid_design((0.0, 1.0, 2.0, 3.0), (0.5, 2.0, 8.0, 24.0), 500)
K1_DESIGN = grid_design((0.0, 1.0, 2.0, 3.0), (0.5, 2.0, 24.0), 500)


@pytest.fixture(scope="session")
def k2_data():
    return sample_synthetic(K2_TRUTH, K2_DESIGN, seed=11)


@pytest.fixture(scope="session")
def k2_calib(k2_data):
    return calibrate(k2_data, 2, True, FitConfig(starts=12, seed=0))


@pytest.fixture(scope="session")
def k1_data():
    return sample_synthetic(K1_TRUTH, K1_DESIGN, seed=5)


@pytest.fixture(scope="session")
def k1_calib(k1_data):
    return calibrate(k1_data, 1, True, FitConfig(starts=8, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def fixed_calibration(params, cov=None, scale=1e-4):
    """CalibrationResult around known parameters with a chosen covariance."""
    from h2axdose.calibrate import CalibrationResult
    from h2axdose.model import Parametrization

    param = Parametrization(params.K, params.shared_u)
    if cov is None:
        cov = scale * np.eye(param.size)
    return CalibrationResult(
        params=params,
        covariance=np.asarray(cov, dtype=float),
        parameter_order=list(param.names),
        free_mode=param.to_free(params),
        log_posterior_at_mode=0.0,
        log_likelihood_at_mode=0.0,
        aic=2.0 * param.size,
        K=params.K,
        shared_u=params.shared_u,
        data_digest="sha256:test",
    )


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """Record and assert one acceptance line: ``verdict(criterion, passed, detail)``."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(criterion, passed, detail):
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
