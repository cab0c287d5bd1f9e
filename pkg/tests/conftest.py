import sys

import numpy as np
import pytest

from stochwave.lattice import make_grid
from stochwave.noise import CovarianceSpec
from stochwave.propagator import make_coeffs, make_initial_data, validate_config

TRIG_INIT = dict(nu0_terms=[[1.0, 0.0, 1]], nu1_terms=[[0.5, 0.3, 2]])


def make_cfg(coeffs="trig", cparams=None, init="trig", iparams=None, dim=1, n=32, L=4.0, dt=None, nt=16,
             beta=0.5, theta=0.25, **spec):
    dt = dt if dt is not None else L / n / 2
    grid = make_grid(dim, n, L, dt, nt)
    if cparams is None:
        cparams = dict(sigma0=1.0, beta0=1.0) if coeffs == "trig" else dict(sigma0=1.0)
    if iparams is None:
        iparams = TRIG_INIT if init == "trig" else dict(c0=0.0)
    return validate_config(grid, CovarianceSpec(beta, dim, **spec), make_coeffs(coeffs, cparams),
                           make_initial_data(init, iparams), theta)


@pytest.fixture
def trig_cfg():
    return make_cfg()


@pytest.fixture
def linear_cfg():
    """sigma = 1, b = 0, zero initial data."""
    return make_cfg("constant_sigma_affine_b", dict(sigma0=1.0), "constant", dict(c0=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
