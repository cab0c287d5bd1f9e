"""Wave propagator, coefficient and initial-data libraries, run configuration.

The Green function of the wave operator acts on mode ``k`` as
``(cos(w t), sin(w t)/w)`` on (position, velocity) data; everything here is
written per mode in terms of :func:`wave_multiplier`.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ConfigError
from .lattice import Field, FieldPath, Grid, forward_transform, inverse_transform
from .noise import BETA_RANGE, CovarianceSpec, SpectralMeasure, spectral_density

__all__ = [
    "wave_multiplier",
    "propagate",
    "homogeneous_solution",
    "homogeneous_path",
    "Coefficients",
    "make_coeffs",
    "InitialData",
    "make_initial_data",
    "DeviationScale",
    "Config",
    "validate_config",
    "COEFFICIENT_LIBRARY",
    "INITIAL_DATA_LIBRARY",
]

LIPSCHITZ_RANGE = 10.0
LIPSCHITZ_POINTS = 1000
NEEDS_D = ("clt", "mdp-rate", "mdp-tail", "weak-continuity")


def _multiplier(dt, omega):
    omega = np.asarray(omega, dtype=float)
    c = np.cos(omega * dt)
    s = dt * np.sinc(omega * dt / np.pi)  # sin(w dt)/w, continuous at w = 0
    return c, s


def wave_multiplier(dt, omega):
    """``(cos(w dt), sin(w dt)/w)``; the second entry tends to ``dt`` as ``w -> 0``."""
    if np.any(np.asarray(dt) < 0) or np.any(np.asarray(omega) < 0):
        raise ValueError("wave_multiplier expects dt >= 0 and omega >= 0")
    c, s = _multiplier(dt, omega)
    if np.ndim(c) == 0:
        return float(c), float(s)
    return c, s


def propagate(uh: np.ndarray, vh: np.ndarray, dt: float, omega: np.ndarray):
    """Exact free evolution of spectral (position, velocity) over ``dt`` (any sign)."""
    c, s = _multiplier(dt, omega)
    return c * uh + s * vh, -omega**2 * s * uh + c * vh


# -- coefficients ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Coefficients:
    name: str
    sigma: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    b_prime: Callable[[np.ndarray], np.ndarray] | None
    K: float
    K_prime: float | None
    sigma_constant: bool
    b_affine: bool
    params: dict = field(default_factory=dict)

    @property
    def has_derivative(self) -> bool:
        return self.b_prime is not None

    @property
    def sigma_value(self) -> float:
        if not self.sigma_constant:
            raise ValueError(f"sigma of {self.name!r} is not constant")
        return float(self.params.get("sigma0", 0.0))

    def check_lipschitz(self, R: float = LIPSCHITZ_RANGE, npts: int = LIPSCHITZ_POINTS) -> list[str]:
        """Sampled checks of the Lipschitz bounds; returns a list of violations."""
        x = np.linspace(-R, R, npts)
        rng = np.random.default_rng(12345)
        i, j = rng.integers(0, npts, size=(2, 4 * npts))
        xi = np.concatenate([x[:-1], x[i]])
        yi = np.concatenate([x[1:], x[j]])
        keep = xi != yi
        xi, yi = xi[keep], yi[keep]
        d = np.abs(xi - yi)
        slack = 1 + 1e-9
        bad = []
        if np.any(np.abs(self.sigma(xi) - self.sigma(yi)) > slack * self.K * d + 1e-14):
            bad.append("sigma is not K-Lipschitz")
        if np.any(np.abs(self.b(xi) - self.b(yi)) > slack * self.K * d + 1e-14):
            bad.append("b is not K-Lipschitz")
        if self.b_prime is not None:
            if np.any(np.abs(self.b_prime(xi) - self.b_prime(yi)) > slack * self.K_prime * d + 1e-14):
                bad.append("b' is not K'-Lipschitz")
            if np.any(np.abs(self.b_prime(x)) > slack * self.K + 1e-14):
                bad.append("|b'| exceeds K")
        return bad


def _constant_sigma_affine_b(sigma0=1.0, beta0=0.0, beta1=0.0):
    sigma0, beta0, beta1 = float(sigma0), float(beta0), float(beta1)
    return Coefficients(
        "constant_sigma_affine_b",
        sigma=lambda u: np.full(np.shape(u), sigma0),
        b=lambda u: beta0 + beta1 * np.asarray(u),
        b_prime=lambda u: np.full(np.shape(u), beta1),
        K=abs(beta1),
        K_prime=0.0,
        sigma_constant=True,
        b_affine=True,
        params=dict(sigma0=sigma0, beta0=beta0, beta1=beta1),
    )


def _trig(sigma0=1.0, beta0=1.0):
    sigma0, beta0 = float(sigma0), float(beta0)
    return Coefficients(
        "trig",
        sigma=lambda u: sigma0 * np.cos(u),
        b=lambda u: beta0 * np.sin(u),
        b_prime=lambda u: beta0 * np.cos(u),
        K=max(abs(sigma0), abs(beta0)),
        K_prime=abs(beta0),
        sigma_constant=sigma0 == 0,
        b_affine=beta0 == 0,
        params=dict(sigma0=sigma0, beta0=beta0),
    )


def _saturating(sigma0=1.0, beta0=1.0):
    sigma0, beta0 = float(sigma0), float(beta0)
    # max of |d^2/du^2 u/sqrt(1+u^2)| = 3u(1+u^2)^(-5/2), attained at u = 1/2
    curv = 1.5 * 1.25**-2.5
    return Coefficients(
        "saturating",
        sigma=lambda u: sigma0 * u / np.sqrt(1 + np.square(u)),
        b=lambda u: beta0 * u / np.sqrt(1 + np.square(u)),
        b_prime=lambda u: beta0 * (1 + np.square(u)) ** -1.5,
        K=max(abs(sigma0), abs(beta0)),
        K_prime=abs(beta0) * curv,
        sigma_constant=sigma0 == 0,
        b_affine=beta0 == 0,
        params=dict(sigma0=sigma0, beta0=beta0),
    )


COEFFICIENT_LIBRARY = {
    "constant_sigma_affine_b": _constant_sigma_affine_b,
    "trig": _trig,
    "saturating": _saturating,
}


def make_coeffs(name: str, params: dict | None = None) -> Coefficients:
    try:
        factory = COEFFICIENT_LIBRARY[name]
    except KeyError:
        raise ConfigError(f"unknown coefficient family {name!r}; expected one of {sorted(COEFFICIENT_LIBRARY)}") from None
    try:
        return factory(**(params or {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from None


# -- initial data ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InitialData:
    """Initial position ``nu0`` and velocity ``nu1`` as functions of ``(coords, L)``."""

    name: str
    nu0: Callable
    nu1: Callable
    gamma1: float = 1.0
    gamma2: float = 1.0
    r0: float = 0.0
    params: dict = field(default_factory=dict)

    def fields(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        return (np.asarray(self.nu0(grid.coords, grid.L), dtype=float) * np.ones(grid.shape),
                np.asarray(self.nu1(grid.coords, grid.L), dtype=float) * np.ones(grid.shape))


def _trig_terms(terms, offset):
    terms = [tuple(float(v) for v in t) for t in (terms or [])]

    def f(coords, L):
        out = np.full(coords[0].shape, float(offset))
        for amp, phase, *k in terms:
            arg = sum(ki * xi for ki, xi in zip(k, coords))
            out = out + amp * np.cos(2 * np.pi * arg / L + phase)
        return out
    return f


def _trig_data(nu0_terms=(), nu0_offset=0.0, nu1_terms=(), nu1_offset=0.0):
    """Trigonometric polynomials; each term is ``[amp, phase, k1, (k2, k3)]``."""
    return InitialData("trig", _trig_terms(nu0_terms, nu0_offset), _trig_terms(nu1_terms, nu1_offset),
                       params=dict(nu0_terms=[list(t) for t in nu0_terms], nu0_offset=nu0_offset,
                                   nu1_terms=[list(t) for t in nu1_terms], nu1_offset=nu1_offset))


def _constant_data(c0=0.0, c1=0.0):
    d = _trig_data(nu0_offset=c0, nu1_offset=c1)
    return InitialData("constant", d.nu0, d.nu1, params=dict(c0=c0, c1=c1))


def _radius(coords, L, center):
    c = [L / 2] * len(coords) if center is None else list(center)
    return np.sqrt(sum((x - ci) ** 2 for x, ci in zip(coords, c)))


def _bump_data(amp0=1.0, amp1=0.0, radius=1.0, center=None):
    """C^2 compactly supported bump ``(1 - r^2/R^2)^3``."""
    def prof(a):
        def f(coords, L):
            s = np.clip(1 - (_radius(coords, L, center) / radius) ** 2, 0.0, None)
            return a * s**3
        return f
    return InitialData("bump", prof(float(amp0)), prof(float(amp1)), r0=float(radius),
                       params=dict(amp0=amp0, amp1=amp1, radius=radius, center=center))


def _gaussian_data(amp0=1.0, amp1=0.0, width=0.5, center=None):
    """Gaussian bump; treated as supported in the ball of radius ``6 * width``."""
    def prof(a):
        def f(coords, L):
            return a * np.exp(-0.5 * (_radius(coords, L, center) / width) ** 2)
        return f
    return InitialData("gaussian", prof(float(amp0)), prof(float(amp1)), r0=6.0 * float(width),
                       params=dict(amp0=amp0, amp1=amp1, width=width, center=center))


INITIAL_DATA_LIBRARY = {
    "trig": _trig_data,
    "constant": _constant_data,
    "bump": _bump_data,
    "gaussian": _gaussian_data,
}


def make_initial_data(name: str, params: dict | None = None) -> InitialData:
    try:
        factory = INITIAL_DATA_LIBRARY[name]
    except KeyError:
        raise ConfigError(f"unknown initial data {name!r}; expected one of {sorted(INITIAL_DATA_LIBRARY)}") from None
    try:
        return factory(**(params or {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from None


def homogeneous_solution(init: InitialData, grid: Grid, t_index: int) -> Field:
    """Free wave started from ``(nu0, nu1)``, evaluated at ``t_index * dt``."""
    if not 0 <= t_index <= grid.nt:
        raise IndexError(f"t_index {t_index} outside 0..{grid.nt}")
    nu0, nu1 = init.fields(grid)
    c, s = _multiplier(t_index * grid.dt, grid.omega)
    wh = c * forward_transform(nu0, grid) + s * forward_transform(nu1, grid)
    return Field(grid, inverse_transform(wh, grid))


def homogeneous_path(init: InitialData, grid: Grid) -> FieldPath:
    nu0, nu1 = init.fields(grid)
    t = grid.times.reshape((-1,) + (1,) * grid.dim)
    c, s = _multiplier(t, grid.omega)
    wh = c * forward_transform(nu0, grid) + s * forward_transform(nu1, grid)
    return FieldPath(grid, inverse_transform(wh, grid))


# -- deviation scale and configuration -------------------------------------------

@dataclass(frozen=True)
class DeviationScale:
    """Moderate-deviation scale ``h(eps) = eps**-theta`` with ``0 < theta < 1/2``."""

    theta: float = 0.25

    def __post_init__(self):
        if not 0 < self.theta < 0.5:
            raise ConfigError(
                f"theta={self.theta}: h(eps)=eps^-theta needs 0 < theta < 1/2 so that "
                "h(eps) -> inf and sqrt(eps) h(eps) -> 0",
                hypothesis="scale",
            )

    def h(self, eps: float) -> float:
        return float(eps) ** -self.theta


@dataclass(frozen=True, eq=False)
class Config:
    """Validated bundle of grid, covariance, coefficients, initial data and scale."""

    grid: Grid
    spec: CovarianceSpec
    coeffs: Coefficients
    init: InitialData
    scale: DeviationScale = DeviationScale()

    @cached_property
    def measure(self) -> SpectralMeasure:
        return spectral_density(self.spec, self.grid)

    @cached_property
    def u0(self) -> FieldPath:
        from .solver import solve_deterministic
        return solve_deterministic(self)

    @cached_property
    def initial_fields(self) -> tuple[np.ndarray, np.ndarray]:
        return self.init.fields(self.grid)

    def describe(self) -> dict:
        """Plain-data description; enough to rebuild the configuration."""
        g, s = self.grid, self.spec
        return dict(
            grid=dict(dim=g.dim, n=g.n, L=g.L, dt=g.dt, nt=g.nt),
            covariance=dict(beta=s.beta, dim=s.dim, amplitude=s.amplitude, taper=s.taper,
                            taper_weight=s.taper_weight, taper_width=s.taper_width),
            coefficients=dict(name=self.coeffs.name, params=dict(self.coeffs.params)),
            initial_data=dict(name=self.init.name, params=dict(self.init.params)),
            scale=dict(theta=self.scale.theta),
        )

    @cached_property
    def fingerprint(self) -> str:
        """sha256 of the canonical JSON description."""
        text = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"), default=repr)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_(self, **changes) -> "Config":
        d = dict(grid=self.grid, spec=self.spec, coeffs=self.coeffs, init=self.init, scale=self.scale)
        d.update(changes)
        return Config(**d)


def validate_config(grid: Grid, spec: CovarianceSpec, coeffs: Coefficients, init: InitialData,
                    scale: DeviationScale | float = DeviationScale(), experiments=()) -> Config:
    """Check every standing hypothesis jointly and return a :class:`Config`.

    Raises :class:`ConfigError` naming the violated hypothesis; warns (without
    failing) when CLT/MDP experiments are requested for coefficients lacking a
    Lipschitz derivative of ``b``.
    """
    if not isinstance(scale, DeviationScale):
        scale = DeviationScale(float(scale))
    if spec.dim != grid.dim:
        raise ConfigError(f"covariance dim {spec.dim} != grid dim {grid.dim}")
    lo, hi = BETA_RANGE[grid.dim]
    if not lo < spec.beta < hi:
        raise ConfigError(f"beta={spec.beta} outside ({lo}, {hi})", hypothesis="H.2")
    bad = coeffs.check_lipschitz()
    h1 = [b for b in bad if "'" not in b]
    if h1:
        raise ConfigError("; ".join(h1), hypothesis="H.1")
    if len(bad) > len(h1):
        raise ConfigError("; ".join(b for b in bad if "'" in b), hypothesis="D")
    for g, name in ((init.gamma1, "gamma1"), (init.gamma2, "gamma2")):
        if not 0 < g <= 1:
            raise ConfigError(f"{name}={g} must lie in (0, 1]", hypothesis="H.3")
    nu0, nu1 = init.fields(grid)
    if not (np.all(np.isfinite(nu0)) and np.all(np.isfinite(nu1))):
        raise ConfigError("initial data are not bounded", hypothesis="H.3")
    if grid.L < 2 * (grid.T + init.r0) * (1 - 1e-12):
        raise ConfigError(
            f"L={grid.L} < 2(T + r0) = {2 * (grid.T + init.r0)}: the torus would not reproduce "
            "the free-space solution on the observation window", hypothesis="domain")
    if not coeffs.has_derivative and any(e in NEEDS_D for e in experiments):
        warnings.warn(f"coefficients {coeffs.name!r} do not provide b'; CLT/MDP experiments need condition D",
                      stacklevel=2)
    cfg = Config(grid, spec, coeffs, init, scale)
    cfg.measure  # noqa: B018 - fail early on bad spectral weights
    return cfg
