import numpy as np
import pytest

from dqstab.plant import PLL_RETUNED, VAC_RETUNED, reference_plant


@pytest.fixture(scope="session")
def plant():
    return reference_plant()


@pytest.fixture(scope="session")
def plant_delayed():
    return reference_plant(delay=True)


@pytest.fixture(scope="session")
def plant_vac_retuned():
    return reference_plant(h_vac=VAC_RETUNED)


@pytest.fixture(scope="session")
def plant_pll_retuned():
    return reference_plant(pll=PLL_RETUNED)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one ``PASS/FAIL A#: detail`` line, print it, then assert."""
    def record(tag, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
