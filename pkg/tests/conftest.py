import sys

import numpy as np
import pytest

from mixedvi.mesh import build_rect_mesh


@pytest.fixture(scope="session")
def mesh4():
    return build_rect_mesh(4, 4)


@pytest.fixture(scope="session")
def mesh8():
    return build_rect_mesh(8, 8)


@pytest.fixture(scope="session")
def mesh16():
    return build_rect_mesh(16, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(mesh, rng, scale=1.0):
    u = scale * rng.standard_normal(mesh.n_nodes)
    u[mesh.dirichlet_nodes] = 0.0
    return u


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
