"""Spatially correlated, temporally white Gaussian noise on the lattice.

Conventions
-----------
The lattice covariance is *defined* by its spectral weights ``mu[k]``: the
noise increment ``W_j`` over one step has coefficients (forward transform,
``1/N`` normalization) with ``E|W_j^[k]|**2 = dt * mu[k]``, independent across
mode pairs ``(k, -k)`` and across steps.  Equivalently
``E[W_j(x) W_j(y)] = dt * f(x - y)`` with ``f(x) = sum_k mu[k] exp(i w_k.x)``.

The inner product of H is ``<a, b>_H = sum_k mu[k] a^[k] conj(b^[k])``.  In
physical terms this is ``(1/L**d)**2 * int int a(x) f(x-y) b(y) dx dy``, i.e.
the pairing uses the normalized volume on the torus.  A noise functional is
``F(phi) = sum_j mean_x(phi_j * W_j)`` so that
``E[F(phi) F(psi)] = dt * sum_j <phi_j, psi_j>_H``.

Random numbers come from Philox keyed by ``(seed, sample_id)`` with the step
index folded into the counter, so any increment can be regenerated on its own
and results never depend on execution order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.random import Philox, SeedSequence

from .errors import ConfigError
from .lattice import Field, Grid, forward_transform, inverse_transform

__all__ = [
    "CovarianceSpec",
    "SpectralMeasure",
    "NoiseIncrement",
    "NoisePath",
    "Control",
    "spectral_density",
    "sample_noise_increment",
    "sample_noise_path",
    "sample_noise_batch",
    "h_inner",
    "ht_norm",
    "covariance_check",
    "mode_statistics",
    "BETA_RANGE",
]

BETA_RANGE = {1: (0.0, 1.0), 3: (0.0, 2.0)}
TAPERS = ("none", "bump")
RNG_FAMILIES = ("philox",)


@dataclass(frozen=True)
class CovarianceSpec:
    """Riesz-type covariance ``f(x) = phi(x) |x|**-beta``.

    ``taper="bump"`` uses ``phi(x) = 1 + taper_weight * exp(-|x|**2 / (2 taper_width**2))``,
    which is bounded, positive and smooth with a nonnegative Fourier transform.
    """

    beta: float
    dim: int
    amplitude: float = 1.0
    taper: str = "none"
    taper_weight: float = 0.5
    taper_width: float = 0.25

    def __post_init__(self):
        if self.dim not in BETA_RANGE:
            raise ConfigError(f"unsupported dimension {self.dim}")
        lo, hi = BETA_RANGE[self.dim]
        if not lo < self.beta < hi:
            raise ConfigError(
                f"beta={self.beta} outside the admissible range ({lo}, {hi}) for dim={self.dim}",
                hypothesis="H.2",
            )
        if not self.amplitude > 0:
            raise ConfigError("covariance amplitude must be positive", hypothesis="H.2")
        if self.taper not in TAPERS:
            raise ConfigError(f"unknown taper {self.taper!r}; expected one of {TAPERS}")
        if self.taper == "bump" and not (self.taper_weight >= 0 and self.taper_width > 0):
            raise ConfigError("bump taper needs weight >= 0 and width > 0", hypothesis="H.2")


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        self.grid.check_field_shape(w, "spectral weights")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("spectral weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        mask = w > 0
        mask.setflags(write=False)
        object.__setattr__(self, "support", mask)

    @property
    def amplitude(self) -> np.ndarray:
        """``sqrt(mu)``, the per-mode noise amplitude for unit time."""
        return np.sqrt(self.weights)

    def pairing(self, coeffs: np.ndarray) -> np.ndarray:
        """Physical field ``sum_k mu[k] c[k] exp(i w_k.x)``; the Riesz map of H."""
        return inverse_transform(self.weights * coeffs, self.grid)


def spectral_density(spec: CovarianceSpec, grid: Grid) -> SpectralMeasure:
    """Lattice spectral weights ``mu[k] = c0 * |w_k|**(beta - dim)`` with ``mu[0] = 0``."""
    if spec.dim != grid.dim:
        raise ConfigError(f"covariance dim {spec.dim} does not match grid dim {grid.dim}")
    w = grid.omega
    mu = np.zeros(grid.shape)
    nz = w > 0
    mu[nz] = spec.amplitude * w[nz] ** (spec.beta - grid.dim)
    if spec.taper == "bump":
        mu = _apply_bump_taper(mu, spec, grid)
    mu.flat[0] = 0.0
    return SpectralMeasure(grid, mu)


def _apply_bump_taper(mu: np.ndarray, spec: CovarianceSpec, grid: Grid) -> np.ndarray:
    # f * phi  ->  mu (*) phi^ : circular convolution over lattice modes
    ell = spec.taper_width
    g_hat = (2 * np.pi * ell**2) ** (grid.dim / 2) / grid.L**grid.dim * np.exp(-0.5 * (ell * grid.omega) ** 2)
    conv = np.fft.ifftn(np.fft.fftn(mu) * np.fft.fftn(g_hat)).real
    out = mu + spec.taper_weight * np.clip(conv, 0.0, None)
    return 0.5 * (out + _reflect(out))


def _reflect(a: np.ndarray) -> np.ndarray:
    """``a[-k]`` for an array in FFT order."""
    return np.roll(np.flip(a), 1, axis=tuple(range(a.ndim)))


# -- random numbers -----------------------------------------------------------

def _key(seed: int, sample_id: int) -> np.ndarray:
    return SeedSequence([int(seed) & (2**64 - 1), int(sample_id)]).generate_state(2, np.uint64)


def _standard_normals(seed: int, sample_id: int, step0: int, nsteps: int, per_step: int) -> np.ndarray:
    """Box-Muller normals; step ``j`` uses Philox counters ``[j*B, (j+1)*B)``, ``B = per_step/4``."""
    if per_step % 4:
        raise ValueError("per-step draw count must be a multiple of 4")
    blocks = per_step // 4
    ctr = np.array([step0 * blocks, 0, 0, 0], dtype=np.uint64)
    raw = Philox(key=_key(seed, sample_id), counter=ctr).random_raw(nsteps * per_step)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    u = u.reshape(nsteps, per_step // 2, 2)
    r = np.sqrt(-2.0 * np.log(u[..., 0]))
    ang = 2.0 * np.pi * u[..., 1]
    return np.concatenate([r * np.cos(ang), r * np.sin(ang)], axis=-1)


def _color(z: np.ndarray, measure: SpectralMeasure, dt: float) -> np.ndarray:
    """Turn white lattice normals into increments with mode variance ``dt * mu``."""
    grid = measure.grid
    scale = np.sqrt(dt * grid.size * measure.weights)
    return inverse_transform(scale * forward_transform(z, grid), grid)


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    field: Field
    seed: int
    sample_id: int
    step: int


def sample_noise_increment(measure: SpectralMeasure, dt: float, seed_coords: tuple[int, int, int],
                           rng_family: str = "philox") -> NoiseIncrement:
    """Increment of the noise over one step, keyed by ``(seed, sample_id, step)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if rng_family not in RNG_FAMILIES:
        raise ValueError(f"unknown rng family {rng_family!r}")
    seed, sample_id, step = (int(c) for c in seed_coords)
    grid = measure.grid
    z = _standard_normals(seed, sample_id, step, 1, grid.size)[0].reshape(grid.shape)
    return NoiseIncrement(Field(grid, _color(z, measure, dt)), seed, sample_id, step)


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Increments for steps ``0..nt-1``; ``increments`` has shape ``(..., nt, *grid.shape)``.

    A leading batch axis is allowed; ``sample_ids`` then lists one id per row.
    """

    grid: Grid
    increments: np.ndarray
    seed: int | None = None
    sample_ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape[-self.grid.dim - 1:] != (self.grid.nt,) + self.grid.shape:
            raise ValueError(f"noise increments of shape {inc.shape} do not fit the grid")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.increments.shape[: -self.grid.dim - 1]

    @classmethod
    def zeros(cls, grid: Grid, batch: int | None = None) -> "NoisePath":
        shape = (grid.nt,) + grid.shape
        if batch is not None:
            shape = (batch,) + shape
        return cls(grid, np.zeros(shape))

    def __getitem__(self, i: int) -> "NoisePath":
        if not self.batch_shape:
            raise IndexError("noise path has no batch axis")
        sid = (self.sample_ids[i],) if self.sample_ids else ()
        return NoisePath(self.grid, self.increments[i], self.seed, sid)


def sample_noise_path(measure: SpectralMeasure, dt: float, seed: int, sample_id: int) -> NoisePath:
    grid = measure.grid
    z = _standard_normals(seed, sample_id, 0, grid.nt, grid.size).reshape((grid.nt,) + grid.shape)
    return NoisePath(grid, _color(z, measure, dt), int(seed), (int(sample_id),))


def sample_noise_batch(measure: SpectralMeasure, dt: float, seed: int, sample_ids: Iterable[int]) -> NoisePath:
    """Stack of independent noise paths, one per sample id, shape ``(B, nt, *grid.shape)``."""
    grid = measure.grid
    ids = tuple(int(s) for s in sample_ids)
    z = np.stack([_standard_normals(seed, s, 0, grid.nt, grid.size) for s in ids])
    z = z.reshape((len(ids), grid.nt) + grid.shape)
    return NoisePath(grid, _color(z, measure, dt), int(seed), ids)


# -- H and H_T ----------------------------------------------------------------

def _coeffs(a, grid: Grid) -> np.ndarray:
    values = a.values if isinstance(a, Field) else np.asarray(a, dtype=float)
    grid.check_field_shape(values)
    return forward_transform(values, grid)


def h_inner(a: Field | np.ndarray, b: Field | np.ndarray, measure: SpectralMeasure) -> float:
    """``<a, b>_H = sum_k mu[k] a^[k] conj(b^[k])`` (real by Hermitian symmetry)."""
    for f in (a, b):
        if isinstance(f, Field) and f.grid != measure.grid:
            raise ValueError("field grid does not match the spectral measure grid")
    ah = _coeffs(a, measure.grid)
    bh = _coeffs(b, measure.grid)
    axes = measure.grid.axes
    return np.sum(measure.weights * ah * np.conj(bh), axis=axes).real


class Control:
    """Element of H_T: one set of spectral coefficients per time slot.

    Coefficients on modes with ``mu[k] == 0`` are dropped, since they carry no
    H-norm and do not act on any equation.
    """

    def __init__(self, measure: SpectralMeasure, coeffs: np.ndarray):
        grid = measure.grid
        c = np.array(coeffs, dtype=complex)
        if c.shape != (grid.nt,) + grid.shape:
            raise ValueError(f"control coefficients must have shape {(grid.nt,) + grid.shape}")
        c = np.where(measure.support, c, 0.0)
        c.setflags(write=False)
        self.measure = measure
        self.coeffs = c

    @property
    def grid(self) -> Grid:
        return self.measure.grid

    @classmethod
    def from_physical(cls, measure: SpectralMeasure, values: np.ndarray) -> "Control":
        values = np.asarray(values, dtype=float)
        if values.shape == measure.grid.shape:
            values = np.broadcast_to(values, (measure.grid.nt,) + values.shape)
        return cls(measure, forward_transform(values, measure.grid))

    @classmethod
    def zeros(cls, measure: SpectralMeasure) -> "Control":
        return cls(measure, np.zeros((measure.grid.nt,) + measure.grid.shape, dtype=complex))

    def physical(self) -> np.ndarray:
        return inverse_transform(self.coeffs, self.grid)

    def pairing_fields(self) -> np.ndarray:
        """Per-slot Riesz representers ``sum_k mu[k] h^[k] e_k`` (physical, shape ``(nt, *shape)``)."""
        return self.measure.pairing(self.coeffs)

    def _check(self, other: "Control") -> None:
        if other.measure is not self.measure and other.grid != self.grid:
            raise ValueError("controls live on different grids")

    def __add__(self, other: "Control") -> "Control":
        self._check(other)
        return Control(self.measure, self.coeffs + other.coeffs)

    def __sub__(self, other: "Control") -> "Control":
        self._check(other)
        return Control(self.measure, self.coeffs - other.coeffs)

    def __mul__(self, c: float) -> "Control":
        return Control(self.measure, c * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "Control":
        return Control(self.measure, -self.coeffs)


def ht_inner(h: Control, g: Control, measure: SpectralMeasure | None = None) -> float:
    measure = measure or h.measure
    if h.grid != measure.grid or g.grid != measure.grid:
        raise ValueError("control grid does not match the spectral measure grid")
    per_slot = np.sum(measure.weights * h.coeffs * np.conj(g.coeffs), axis=measure.grid.axes).real
    return measure.grid.dt * math.fsum(per_slot)


def ht_norm(h: Control, measure: SpectralMeasure | None = None) -> float:
    """Squared norm ``||h||_{H_T}**2 = dt * sum_slots ||h_slot||_H**2``."""
    return ht_inner(h, h, measure)


# -- validation ---------------------------------------------------------------

def noise_functional(test: np.ndarray, increments: np.ndarray, grid: Grid) -> np.ndarray:
    """``F(phi) = sum_j mean_x(phi_j * W_j)`` for a batch of noise paths."""
    space = tuple(range(-grid.dim, 0))
    return np.sum(np.mean(test * increments, axis=space), axis=-1)


def covariance_check(spec: CovarianceSpec, grid: Grid, n_samples: int,
                     test_functions: Sequence[tuple[str, np.ndarray, np.ndarray]],
                     seed: int = 0, chunk: int = 2048) -> list[dict]:
    """Monte Carlo check of ``E[F(phi) F(psi)] = dt * sum_j <phi_j, psi_j>_H``.

    ``test_functions`` holds ``(pair_id, phi, psi)`` where ``phi``/``psi`` are
    either one field (time-constant) or ``nt`` frames.  A pair passes when the
    estimate is within 4 standard errors of the analytic value.
    """
    if n_samples < 1000:
        raise ValueError(f"insufficient samples: {n_samples} < 1000")
    measure = spectral_density(spec, grid)
    frames = (grid.nt,) + grid.shape
    pairs = []
    for pid, phi, psi in test_functions:
        phi = np.broadcast_to(np.asarray(phi, dtype=float), frames)
        psi = np.broadcast_to(np.asarray(psi, dtype=float), frames)
        analytic = grid.dt * math.fsum(h_inner(phi[j], psi[j], measure) for j in range(grid.nt))
        # Cauchy-Schwarz scale; anything far below it is cancellation roundoff
        bound = grid.dt * math.sqrt(math.fsum(h_inner(phi[j], phi[j], measure) for j in range(grid.nt))
                                    * math.fsum(h_inner(psi[j], psi[j], measure) for j in range(grid.nt)))
        if abs(analytic) <= 1e-12 * bound:
            analytic = 0.0
        pairs.append((pid, phi, psi, analytic))
    prods = [np.empty(n_samples) for _ in pairs]
    for start in range(0, n_samples, chunk):
        ids = range(start, min(n_samples, start + chunk))
        inc = sample_noise_batch(measure, grid.dt, seed, ids).increments
        for out, (_, phi, psi, _) in zip(prods, pairs):
            out[ids.start:ids.stop] = noise_functional(phi, inc, grid) * noise_functional(psi, inc, grid)
    report = []
    for out, (pid, _, _, analytic) in zip(prods, pairs):
        mc = math.fsum(out) / n_samples
        se = float(np.std(out, ddof=1)) / math.sqrt(n_samples)
        rel = abs(mc - analytic) / abs(analytic) if analytic != 0 else None
        report.append(dict(pair_id=pid, mc=mc, analytic=analytic, se=se, rel_err=rel,
                           passed=bool(abs(mc - analytic) <= 4 * se)))
    return report


def write_covariance_csv(path: str | Path, report: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "mc", "analytic", "rel_err", "pass"])
        for r in report:
            w.writerow([r["pair_id"], repr(r["mc"]), repr(r["analytic"]), "" if r["rel_err"] is None else repr(r["rel_err"]), int(r["passed"])])


def mode_statistics(measure: SpectralMeasure, dt: float, n_samples: int, seed: int = 0,
                    pairs: Sequence[tuple[tuple[int, ...], tuple[int, ...]]] = (),
                    chunk: int = 1024) -> dict:
    """Empirical per-mode variances and cross-mode moments of single-step increments.

    Increment ``i`` is the step-0 increment of sample id ``i``.  For each mode
    pair ``(k, q)`` the covariance ``E[W^k conj(W^q)]`` and pseudo-covariance
    ``E[W^k W^q]`` are estimated with standard errors.
    """
    grid = measure.grid
    s1 = np.zeros(grid.shape)
    s2 = np.zeros(grid.shape)
    ka = [tuple(p[0]) for p in pairs]
    qa = [tuple(p[1]) for p in pairs]
    cross = np.empty((n_samples, len(pairs)), dtype=complex)
    pseudo = np.empty((n_samples, len(pairs)), dtype=complex)
    for start in range(0, n_samples, chunk):
        stop = min(n_samples, start + chunk)
        z = np.stack([_standard_normals(seed, s, 0, 1, grid.size)[0] for s in range(start, stop)])
        w = _color(z.reshape((stop - start,) + grid.shape), measure, dt)
        c = forward_transform(w, grid)
        p = np.abs(c) ** 2
        s1 += p.sum(axis=0)
        s2 += (p * p).sum(axis=0)
        for i, (k, q) in enumerate(zip(ka, qa)):
            ck = c[(slice(None),) + k]
            cq = c[(slice(None),) + q]
            cross[start:stop, i] = ck * np.conj(cq)
            pseudo[start:stop, i] = ck * cq
    var = s1 / n_samples
    var_se = np.sqrt(np.maximum(s2 / n_samples - var**2, 0.0) / n_samples)
    rows = []
    for i, (k, q) in enumerate(zip(ka, qa)):
        for name, data in (("cov", cross[:, i]), ("pseudo", pseudo[:, i])):
            for part in ("real", "imag"):
                x = getattr(data, part)
                m = float(np.mean(x))
                se = float(np.std(x, ddof=1) / math.sqrt(n_samples))
                rows.append(dict(k=k, q=q, kind=f"{name}.{part}", mean=m, se=se))
    return dict(variance=var, variance_se=var_se, expected=dt * measure.weights, cross=rows)
