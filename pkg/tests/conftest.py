import numpy as np
import pytest

from squeezelab.config import load_config
from squeezelab.kernel import SpatioSpectralGrid, build_kernel
from squeezelab.modes import takagi
from squeezelab.pipeline import run_pipeline

SMALL = ["grid.n_q=16", "grid.n_omega=64", "analysis.bootstrap_rounds=200"]


@pytest.fixture(scope="session")
def default_config():
    return load_config()


@pytest.fixture(scope="session")
def bbo(default_config):
    return default_config.crystal.with_phase_matching()


@pytest.fixture(scope="session")
def small_config():
    return load_config(None, SMALL)


@pytest.fixture(scope="session")
def small_kernel(small_config, bbo):
    grid = SpatioSpectralGrid.for_experiment(bbo, small_config.pump, 16, 64)
    return build_kernel(grid, small_config.pump, bbo)


@pytest.fixture(scope="session")
def small_decomposition(small_kernel):
    return takagi(small_kernel, gain=1.0)


@pytest.fixture(scope="session")
def small_run(small_config, tmp_path_factory):
    return run_pipeline(small_config, tmp_path_factory.mktemp("small_run"))


@pytest.fixture(scope="session")
def default_run(default_config, tmp_path_factory):
    """Full pipeline at the default configuration (about a minute)."""
    return run_pipeline(default_config, tmp_path_factory.mktemp("default_run"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria outcomes, filled by tests/test_acceptance.py
CRITERIA: dict[int, dict] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(CRITERIA):
        c = CRITERIA[n]
        status = "PASS" if c["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status} - {c['title']}")
