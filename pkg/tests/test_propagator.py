import warnings

import numpy as np
import pytest

from stochwave.errors import ConfigError
from stochwave.lattice import make_grid
from stochwave.noise import CovarianceSpec
from stochwave.propagator import (
    Coefficients,
    DeviationScale,
    homogeneous_path,
    homogeneous_solution,
    make_coeffs,
    make_initial_data,
    propagate,
    validate_config,
    wave_multiplier,
)

from conftest import make_cfg


def test_wave_multiplier_examples():
    assert wave_multiplier(0.3, 0.0) == (1.0, pytest.approx(0.3, rel=1e-15))
    c, s = wave_multiplier(0.5, np.pi)
    assert c == pytest.approx(0.0, abs=1e-15) and s == pytest.approx(1 / np.pi)
    c, s = wave_multiplier(0.0, np.array([0.0, 2.0, 7.0]))
    assert np.array_equal(c, np.ones(3)) and np.array_equal(s, np.zeros(3))
    with pytest.raises(ValueError):
        wave_multiplier(-0.1, 1.0)


def test_wave_multiplier_small_frequency_limit():
    for w in (1e-3, 1e-6, 1e-9):
        c, s = wave_multiplier(0.7, w)
        assert s == pytest.approx(np.sin(w * 0.7) / w, rel=1e-12)
        assert abs(s - 0.7) < 0.7 * w**2


def test_propagation_conserves_mode_energy(rng):
    omega = np.abs(rng.standard_normal(50)) * 10
    u, v = rng.standard_normal(50), rng.standard_normal(50)
    e0 = v**2 + omega**2 * u**2
    for dt in (0.01, 0.37, 2.5):
        u1, v1 = propagate(u, v, dt, omega)
        assert np.allclose(v1**2 + omega**2 * u1**2, e0, rtol=1e-12)


def test_propagation_is_reversible_and_composes(rng):
    omega = np.abs(rng.standard_normal(20)) * 5
    u, v = rng.standard_normal(20), rng.standard_normal(20)
    back = propagate(*propagate(u, v, 0.4, omega), -0.4, omega)
    assert np.allclose(back, (u, v), atol=1e-13)
    two = propagate(*propagate(u, v, 0.15, omega), 0.25, omega)
    assert np.allclose(two, propagate(u, v, 0.4, omega), atol=1e-13)


def test_homogeneous_constant_data():
    g = make_grid(1, 16, 4.0, 0.25, 8)
    still = make_initial_data("constant", dict(c0=2.0))
    assert np.allclose(homogeneous_solution(still, g, 8).values, 2.0)
    moving = make_initial_data("constant", dict(c0=1.0, c1=0.5))
    assert np.allclose(homogeneous_solution(moving, g, 8).values, 1.0 + 0.5 * 2.0)
    with pytest.raises(IndexError):
        homogeneous_solution(still, g, 9)


def test_homogeneous_standing_wave():
    g = make_grid(1, 32, 4.0, 0.125, 16)
    init = make_initial_data("trig", dict(nu0_terms=[[1.0, 0.0, 2]], nu1_terms=[[1.0, 0.0, 3]]))
    x = g.coords[0]
    w2, w3 = 2 * np.pi * 2 / g.L, 2 * np.pi * 3 / g.L
    path = homogeneous_path(init, g)
    for j in (0, 5, 16):
        t = j * g.dt
        exact = np.cos(w2 * t) * np.cos(w2 * x) + np.sin(w3 * t) / w3 * np.cos(w3 * x)
        assert np.allclose(path.values[j], exact, atol=1e-13)
        assert np.allclose(homogeneous_solution(init, g, j).values, exact, atol=1e-13)


def test_homogeneous_is_linear_in_data():
    g = make_grid(1, 32, 4.0, 0.125, 8)
    a = make_initial_data("trig", dict(nu0_terms=[[1.0, 0.2, 1]]))
    b = make_initial_data("trig", dict(nu1_terms=[[0.5, 0.0, 4]]))
    ab = make_initial_data("trig", dict(nu0_terms=[[2.0, 0.2, 1]], nu1_terms=[[1.0, 0.0, 4]]))
    lhs = homogeneous_path(ab, g).values
    rhs = 2 * (homogeneous_path(a, g).values + homogeneous_path(b, g).values)
    assert np.allclose(lhs, rhs, atol=1e-13)


def _kirchhoff(nu0, grad0, nu1, x, t, nmu=48, nphi=96):
    """Spherical means: u = M_t nu0 + t mean(grad nu0 . xi) + t M_t nu1."""
    mu, wmu = np.polynomial.legendre.leggauss(nmu)
    phi = np.linspace(0, 2 * np.pi, nphi, endpoint=False)
    st = np.sqrt(1 - mu**2)
    xi = np.stack([st[:, None] * np.cos(phi), st[:, None] * np.sin(phi),
                   np.broadcast_to(mu[:, None], (nmu, nphi))], axis=-1)
    w = (wmu[:, None] / 2) * np.full(nphi, 1 / nphi)
    p = x + t * xi
    return (np.sum(w * nu0(p)) + t * np.sum(w * np.sum(grad0(p) * xi, axis=-1))
            + t * np.sum(w * nu1(p)))


def test_matches_kirchhoff_formula_in_3d():
    L, n, width = 6.0, 32, 0.3
    g = make_grid(3, n, L, 0.0625, 4)
    init = make_initial_data("gaussian", dict(amp0=1.0, amp1=0.7, width=width))
    u = homogeneous_solution(init, g, 4).values
    c = np.full(3, L / 2)

    def nu0(p):
        return np.exp(-0.5 * np.sum((p - c) ** 2, axis=-1) / width**2)

    def grad0(p):
        return -(p - c) / width**2 * nu0(p)[..., None]

    for idx in [(16, 16, 16), (17, 16, 16), (18, 17, 16), (14, 16, 19), (16, 16, 20), (19, 13, 16)]:
        x = np.array(idx) * g.dx
        ref = _kirchhoff(nu0, grad0, lambda p: 0.7 * nu0(p), x, 4 * g.dt)
        assert abs(u[idx] - ref) < 1e-3


def test_make_coeffs_examples():
    aff = make_coeffs("constant_sigma_affine_b", dict(sigma0=2.0, beta0=0.5, beta1=-1.5))
    u = np.array([-1.0, 0.0, 3.0])
    assert np.array_equal(aff.sigma(u), [2.0, 2.0, 2.0])
    assert np.allclose(aff.b(u), [2.0, 0.5, -4.0])
    assert aff.K == 1.5 and aff.sigma_constant and aff.b_affine and aff.sigma_value == 2.0
    trig = make_coeffs("trig", dict(sigma0=1.0, beta0=2.0))
    assert np.allclose(trig.b_prime(np.array([0.0, np.pi])), [2.0, -2.0])
    assert not trig.sigma_constant and not trig.b_affine
    with pytest.raises(ValueError):
        trig.sigma_value
    sat = make_coeffs("saturating")
    assert sat.b(np.array([0.0]))[0] == 0.0 and abs(sat.b(np.array([1e8]))[0] - 1.0) < 1e-12
    with pytest.raises(ConfigError):
        make_coeffs("cubic")
    with pytest.raises(ConfigError):
        make_coeffs("trig", dict(gamma=1.0))


@pytest.mark.parametrize("name", ["constant_sigma_affine_b", "trig", "saturating"])
def test_library_constants_are_lipschitz_bounds(name):
    c = make_coeffs(name, dict(sigma0=1.3, beta0=0.8) if name != "constant_sigma_affine_b"
                    else dict(sigma0=1.3, beta1=0.8))
    assert c.check_lipschitz() == []
    # the stated constants are sharp up to the sampling grid
    x = np.linspace(-10, 10, 20001)
    slope = np.max(np.abs(np.diff(c.b(x))) / np.diff(x))
    assert slope <= c.K * (1 + 1e-9) and slope > 0.5 * c.K


def _bad_coeffs():
    return Coefficients("bad", sigma=lambda u: 3 * np.asarray(u), b=lambda u: np.zeros(np.shape(u)),
                        b_prime=None, K=1.0, K_prime=None, sigma_constant=False, b_affine=True)


def test_validate_config_errors():
    g = make_grid(3, 8, 4.0, 0.25, 4)
    coeffs = make_coeffs("trig")
    init = make_initial_data("trig")
    with pytest.raises(ConfigError, match=r"H\.2"):
        validate_config(g, CovarianceSpec(2.5, 3), coeffs, init)
    with pytest.raises(ConfigError) as exc:
        validate_config(g, CovarianceSpec(1.0, 3), coeffs, init, 0.6)
    assert exc.value.hypothesis == "scale"
    with pytest.raises(ConfigError, match=r"H\.1"):
        validate_config(g, CovarianceSpec(1.0, 3), _bad_coeffs(), init)
    short = make_grid(1, 16, 2.0, 0.125, 16)  # T = 2 > L / 2
    with pytest.raises(ConfigError) as exc:
        validate_config(short, CovarianceSpec(0.5, 1), coeffs, make_initial_data("trig"))
    assert exc.value.hypothesis == "domain"
    with pytest.raises(ConfigError, match="dim"):
        validate_config(g, CovarianceSpec(0.5, 1), coeffs, init)


def test_validate_warns_without_derivative():
    g = make_grid(1, 16, 4.0, 0.125, 8)
    coeffs = Coefficients("plain", sigma=lambda u: np.full(np.shape(u), 1.0), b=lambda u: 0.5 * np.sin(u),
                          b_prime=None, K=1.0, K_prime=None, sigma_constant=True, b_affine=False,
                          params=dict(sigma0=1.0))
    with pytest.warns(UserWarning, match="b'"):
        validate_config(g, CovarianceSpec(0.5, 1), coeffs, make_initial_data("trig"), experiments=("clt",))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        validate_config(g, CovarianceSpec(0.5, 1), coeffs, make_initial_data("trig"), experiments=("simulate",))


def test_deviation_scale():
    assert DeviationScale(0.25).h(0.0001) == pytest.approx(10.0)
    for theta in (0.0, 0.5, -1.0):
        with pytest.raises(ConfigError):
            DeviationScale(theta)


def test_fingerprint_tracks_content():
    a, b = make_cfg(), make_cfg()
    assert a.fingerprint == b.fingerprint and len(a.fingerprint) == 64
    assert make_cfg(theta=0.3).fingerprint != a.fingerprint
    assert make_cfg(cparams=dict(sigma0=1.0, beta0=0.5)).fingerprint != a.fingerprint
    assert a.describe()["grid"] == dict(dim=1, n=32, L=4.0, dt=0.0625, nt=16)
