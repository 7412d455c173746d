import numpy as np
import pytest

from pvestim.model import PanelDatasheet, PlantModel, extract_stc_parameters

# Representative module datasheets: (v_oc, i_sc, v_mp, i_mp, alpha [A/K], beta [1/K], cells)
DATASHEETS = {
    "poly255": PanelDatasheet(37.8, 8.86, 30.4, 8.39, 0.0005 * 8.86, -0.0032, 60),
    "kc200gt": PanelDatasheet(32.9, 8.21, 26.3, 7.61, 3.18e-3, -0.123 / 32.9, 54),
    "mono320": PanelDatasheet(45.9, 9.05, 37.4, 8.56, 0.0006 * 9.05, -0.0031, 72),
    "sq85": PanelDatasheet(22.2, 5.45, 17.2, 4.95, 1.4e-3, -0.0036, 36),
}


@pytest.fixture(scope="session")
def datasheet():
    return DATASHEETS["poly255"]


@pytest.fixture(scope="session")
def stc(datasheet):
    return extract_stc_parameters(datasheet)


@pytest.fixture(scope="session")
def plant(datasheet):
    return PlantModel.from_datasheet(datasheet)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
