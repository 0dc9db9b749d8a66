import numpy as np
import pytest

from reflected_ldp.boundary import build_domain, compute_separatrix
from reflected_ldp.fluid import equilibria
from reflected_ldp.model_core import S0is1Params, SivParams, build_s0is1, build_siv


@pytest.fixture(scope="session")
def s0is1():
    p = S0is1Params.fitted()
    return p, build_s0is1(p), equilibria("s0is1", p)


@pytest.fixture(scope="session")
def siv():
    p = SivParams.fitted()
    return p, build_siv(p), equilibria("siv", p)


@pytest.fixture(scope="session")
def s0is1_geometry(s0is1):
    p, net, eq = s0is1
    curve = compute_separatrix(net, eq.endemic_unstable)
    return curve, build_domain(curve, "s0is1", p)


@pytest.fixture(scope="session")
def siv_geometry(siv):
    p, net, eq = siv
    curve = compute_separatrix(net, eq.endemic_unstable)
    return curve, build_domain(curve, "siv", p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=lambda k: int(k[2:])):
        terminalreporter.write_line(mod.RESULTS[key])
