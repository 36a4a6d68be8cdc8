import numpy as np
import pytest

from mrxcs.model import assemble_lead_field, build_geometry, desk_config, simulate_data
from mrxcs.phantom import make_phantom


@pytest.fixture(scope="session")
def desk_geometry():
    return build_geometry(desk_config())


@pytest.fixture(scope="session")
def desk_lead(desk_geometry):
    return assemble_lead_field(desk_geometry)


@pytest.fixture(scope="session")
def desk_tumor(desk_lead):
    return make_phantom("tumor", desk_lead.grid)


@pytest.fixture(scope="session")
def desk_data(desk_lead, desk_tumor):
    return simulate_data(desk_lead, desk_tumor, 80.0, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
