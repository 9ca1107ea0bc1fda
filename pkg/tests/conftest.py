import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_coeffs(rng, N, decay=0.0):
    from susylab.spectral import laplacian_multiplier

    side = 2 * N + 1
    c = rng.standard_normal((side, side)) + 1j * rng.standard_normal((side, side))
    return c * laplacian_multiplier(N, -decay)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
