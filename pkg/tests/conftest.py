import numpy as np
import pytest

from geomagnav.config import RunConfig
from geomagnav.field_model import IGRFField, LinearField, load_coefficients
from geomagnav.geodesy import desk_region


@pytest.fixture(scope="session")
def coeffs():
    return load_coefficients()


@pytest.fixture(scope="session")
def igrf(coeffs):
    return IGRFField(coeffs, 2020.0)


@pytest.fixture(scope="session")
def region():
    return desk_region()


@pytest.fixture(scope="session")
def linear(region):
    return LinearField(region.frame)


@pytest.fixture(scope="session")
def desk_cfg():
    return RunConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Callable ``report(name, ok, detail)`` printing one PASS/FAIL line per criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def report(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        lines.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
