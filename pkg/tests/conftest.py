import numpy as np
import pytest

from nlfactor import FactorMatrix, KernelSpec, LinkFunction, ObservationSet


def random_instance(rng, n=None, T=None, r=None, M=None):
    """Small random ``(obs, z)`` pair with duplicate samples allowed."""
    n = n or int(rng.integers(2, 9))
    T = T or int(rng.integers(2, 9))
    r = r or int(rng.integers(1, min(n, T, 3) + 1))
    M = M or int(rng.integers(1, 21))
    obs = ObservationSet(n, T, rng.integers(0, n, M), rng.integers(0, T, M),
                         rng.normal(size=M))
    z = FactorMatrix(rng.normal(scale=0.7, size=(n + T, r)), n)
    return obs, z


def random_link(rng, size=5, h=1.0, spread=2.0, offset=0.0):
    kernel = KernelSpec("gaussian", h)
    centers = rng.uniform(-spread, spread, size)
    return LinkFunction.from_atoms(kernel, centers, rng.normal(size=size), offset)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record_criterion(number, title, ok, detail=""):
    """Store a criterion outcome for the end-of-run report."""
    ACCEPTANCE[number] = (title, "PASS" if ok else "FAIL", detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, status, detail = ACCEPTANCE[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
