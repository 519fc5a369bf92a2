import pytest

from convoysim.engine import baseline_scenario, convoy_scenario, run, sweep
from convoysim.params import PhysicalSpec, SimConfig, effective_config, table_defaults

SWEEP_RATES = (0.0, 0.2, 0.5)


@pytest.fixture(scope="session")
def table_config():
    """SimConfig built from the default parameter set for the matching vehicle."""
    return effective_config(table_defaults(), PhysicalSpec())


@pytest.fixture
def cfg():
    return SimConfig()


@pytest.fixture(scope="session")
def baseline_runs(table_config):
    return {seed: run(baseline_scenario(seed=seed), table_config) for seed in range(10)}


@pytest.fixture(scope="session")
def convoy_sweep(table_config):
    return sweep(convoy_scenario(seed=0), SWEEP_RATES, table_config)


@pytest.fixture(scope="session")
def convoy_p0(convoy_sweep):
    return convoy_sweep[0][1]
