import pytest

from preview_gain.lifting import BlockCache, certificate_from_constants, scan_blocks
from preview_gain.model import unicycle_model
from preview_gain.riccati import solve_periodic

GAMMA = 125.0
H = 0.05

_ACCEPTANCE = {}


def record_acceptance(num, ok, detail):
    _ACCEPTANCE[num] = (bool(ok), detail)


@pytest.fixture(scope="session")
def unicycle():
    return unicycle_model()


@pytest.fixture(scope="session")
def baseline(unicycle):
    return solve_periodic(unicycle, GAMMA, d=40)


@pytest.fixture(scope="session")
def cache40(unicycle):
    return BlockCache(unicycle, 40, GAMMA)


@pytest.fixture(scope="session")
def constants(unicycle, cache40):
    """Window constants for d in {10, 20, 30, 40} over one period."""
    out = {}
    for d in (10, 20, 30, 40):
        out[d] = scan_blocks(unicycle, d, GAMMA, cache=cache40 if d == 40 else None)
    return out


@pytest.fixture(scope="session")
def cert40(constants):
    return certificate_from_constants(constants[40], 0.25 * GAMMA)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
