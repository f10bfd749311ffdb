import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmgesture.radar import RadarConfig
from mmgesture.scene import DEFAULT_POSITIONS, SimOptions, simulate_instance

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def config():
    return RadarConfig()


@pytest.fixture(scope="session")
def small_config():
    """Cheap waveform for IF-path tests; same carrier and array as the default."""
    return RadarConfig(samples_per_chirp=64, chirps_per_frame=64, chirp_slope=118.24e12 * 4,
                       adc_rate=2.5e6 * 4)


@pytest.fixture(scope="session")
def frontal_instance():
    return simulate_instance(0, DEFAULT_POSITIONS["P1"], 1, 2, sim=SimOptions.noiseless(drop=False))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
