"""Spectral time marching for the deterministic, stochastic, linearized, skeleton
and controlled wave equations, plus the linear control-to-path map and its adjoint.

One step of every equation, per mode ``k`` with ``(c, s) = wave_multiplier(dt, w_k)``::

    u[j+1] = c u[j] + s v[j] + s N[j] + (dt/2) s D[j]
    v[j+1] = -w^2 s u[j] + c v[j] + c N[j] + (dt/2) (c D[j] + D[j+1])

``N[j]`` is the impulse delivered over step ``j`` (noise increment times the
diffusion factor at the left endpoint, plus ``dt`` times the control pairing),
``D[j]`` the spectral drift evaluated at ``u[j]``.  The linear part is exact;
the drift treatment is the explicit second-order trigonometric (Deuflhard)
rule, so ``D[j+1]`` only needs the freshly computed ``u[j+1]``.

All arrays may carry leading batch axes; frames are stored as ``(..., nt+1, *grid.shape)``.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import BlowUpError, ConfigError
from .lattice import FieldPath, Grid, forward_transform, inverse_transform
from .noise import Control, NoisePath
from .propagator import Config, _multiplier

__all__ = [
    "solve_deterministic",
    "solve_spde",
    "solve_first_order",
    "q_eps",
    "solve_skeleton",
    "solve_linear_skeleton",
    "apply_A",
    "apply_A_adjoint",
    "path_inner",
    "solve_controlled",
    "mild_residual",
    "write_trace",
    "march",
]

ImpulseFn = Callable[[int, np.ndarray], np.ndarray | None]
DriftFn = Callable[[int, np.ndarray], np.ndarray | None]


def march(grid: Grid, u_init: np.ndarray, v_init: np.ndarray, impulse: ImpulseFn, drift: DriftFn,
          what: str = "solution", batch: tuple[int, ...] = ()) -> np.ndarray:
    """Run the shared one-step recursion and return all frames ``0..nt``.

    ``impulse(j, u_j)`` and ``drift(j, u_j)`` return physical fields (or
    ``None`` for zero); ``u_j`` is the physical state at frame ``j``.
    ``batch`` is the shape of any leading sample axes.
    """
    c, s = _multiplier(grid.dt, grid.omega)
    w2s = grid.omega**2 * s
    half = 0.5 * grid.dt
    full = tuple(batch) + grid.shape
    u = np.broadcast_to(np.asarray(u_init, dtype=float), full)
    uh = forward_transform(u, grid)
    vh = forward_transform(np.broadcast_to(np.asarray(v_init, dtype=float), full), grid)
    frames = np.empty(tuple(batch) + (grid.nt + 1,) + grid.shape)
    at = (Ellipsis, 0) + (slice(None),) * grid.dim
    frames[at] = u
    d = drift(0, u)
    dh = None if d is None else forward_transform(d, grid)
    # overflow is reported as BlowUpError by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(grid.nt):
            imp = impulse(j, u)
            kick = 0.0 if imp is None else forward_transform(imp, grid)
            uh_new = c * uh + s * vh + s * kick
            if dh is not None:
                uh_new = uh_new + half * s * dh
            u = inverse_transform(uh_new, grid)
            if not np.all(np.isfinite(u)):
                raise BlowUpError(j + 1, what)
            d_next = drift(j + 1, u)
            dh_next = None if d_next is None else forward_transform(d_next, grid)
            vh = -w2s * uh + c * vh + c * kick
            if dh is not None:
                vh = vh + half * c * dh
            if dh_next is not None:
                vh = vh + half * dh_next
            uh, dh = uh_new, dh_next
            frames[(Ellipsis, j + 1) + (slice(None),) * grid.dim] = u
    return frames


def _frame(a: np.ndarray, j: int, grid: Grid) -> np.ndarray:
    return a[(Ellipsis, j) + (slice(None),) * grid.dim]


def _batch(inc: np.ndarray, grid: Grid) -> tuple[int, ...]:
    return inc.shape[: -grid.dim - 1]


def _zeros_init(grid: Grid):
    z = np.zeros(grid.shape)
    return z, z


def _wrap(cfg: Config, frames: np.ndarray):
    if frames.ndim == cfg.grid.dim + 1:
        return FieldPath(cfg.grid, frames)
    return frames


def _require_derivative(cfg: Config) -> None:
    if not cfg.coeffs.has_derivative:
        raise ConfigError(f"coefficients {cfg.coeffs.name!r} provide no b'", hypothesis="D")


def _noise_array(cfg: Config, noise: NoisePath | np.ndarray) -> np.ndarray:
    inc = noise.increments if isinstance(noise, NoisePath) else np.asarray(noise, dtype=float)
    if isinstance(noise, NoisePath) and noise.grid != cfg.grid:
        raise ValueError("noise path lives on a different grid")
    if inc.shape[-cfg.grid.dim - 1:] != (cfg.grid.nt,) + cfg.grid.shape:
        raise ValueError("noise increments do not fit the grid")
    return inc


# -- the six equations --------------------------------------------------------------

def solve_deterministic(cfg: Config) -> FieldPath:
    """Noise-free solution ``u0`` started from the configured initial data."""
    nu0, nu1 = cfg.initial_fields
    b = cfg.coeffs.b
    return _wrap(cfg, march(cfg.grid, nu0, nu1, lambda j, u: None, lambda j, u: b(u), "u0"))


def solve_spde(cfg: Config, eps: float, noise: NoisePath | np.ndarray, raw: bool = False):
    """``u_eps`` driven by ``sqrt(eps) sigma(u) dW + b(u) dt``.

    With ``eps == 0`` or ``sigma == 0`` the impulses vanish identically and the
    recursion reproduces :func:`solve_deterministic`.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    inc = _noise_array(cfg, noise)
    grid = cfg.grid
    nu0, nu1 = cfg.initial_fields
    sig, b = cfg.coeffs.sigma, cfg.coeffs.b
    amp = math.sqrt(eps)

    def impulse(j, u):
        return amp * sig(u) * _frame(inc, j, grid)

    frames = march(grid, nu0, nu1, impulse, lambda j, u: b(u), "u_eps", _batch(inc, grid))
    return frames if raw else _wrap(cfg, frames)


def solve_first_order(cfg: Config, noise: NoisePath | np.ndarray, raw: bool = False):
    """First-order fluctuation ``Y``: forcing ``sigma(u0) dW + b'(u0) Y dt``, zero initial data."""
    _require_derivative(cfg)
    inc = _noise_array(cfg, noise)
    grid = cfg.grid
    u0 = cfg.u0.values
    sig_u0 = cfg.coeffs.sigma(u0)
    bp_u0 = cfg.coeffs.b_prime(u0)
    frames = march(grid, *_zeros_init(grid),
                   lambda j, y: sig_u0[j] * _frame(inc, j, grid),
                   lambda j, y: bp_u0[j] * y, "Y", _batch(inc, grid))
    return frames if raw else _wrap(cfg, frames)


def q_eps(cfg: Config, Y: FieldPath | np.ndarray, eps: float):
    """``Y / h(eps)``."""
    scale = 1.0 / cfg.scale.h(eps)
    return Y * scale if isinstance(Y, FieldPath) else scale * np.asarray(Y)


def _control_fields(cfg: Config, h: Control) -> np.ndarray:
    if h.grid != cfg.grid:
        raise ValueError("control lives on a different grid")
    return h.pairing_fields()


def solve_skeleton(cfg: Config, h: Control) -> FieldPath:
    """Skeleton ``V^h``: the noise is replaced by the control pairing ``<G sigma(V), h>_H``."""
    grid = cfg.grid
    ph = _control_fields(cfg, h)
    nu0, nu1 = cfg.initial_fields
    sig, b = cfg.coeffs.sigma, cfg.coeffs.b
    return _wrap(cfg, march(grid, nu0, nu1,
                            lambda j, v: grid.dt * sig(v) * ph[j],
                            lambda j, v: b(v), "V^h"))


def solve_linear_skeleton(cfg: Config, h: Control) -> FieldPath:
    """Linearized skeleton ``Z^h``; linear in ``h``."""
    _require_derivative(cfg)
    grid = cfg.grid
    ph = _control_fields(cfg, h)
    u0 = cfg.u0.values
    sig_u0 = cfg.coeffs.sigma(u0)
    bp_u0 = cfg.coeffs.b_prime(u0)
    return _wrap(cfg, march(grid, *_zeros_init(grid),
                            lambda j, z: grid.dt * sig_u0[j] * ph[j],
                            lambda j, z: bp_u0[j] * z, "Z^h"))


apply_A = solve_linear_skeleton


def path_inner(a: FieldPath | np.ndarray, b: FieldPath | np.ndarray) -> float:
    """Plain Euclidean pairing of two paths over all frames and lattice points."""
    av = a.values if isinstance(a, FieldPath) else np.asarray(a)
    bv = b.values if isinstance(b, FieldPath) else np.asarray(b)
    return math.fsum((av * bv).ravel())


def apply_A_adjoint(cfg: Config, w: FieldPath | np.ndarray) -> Control:
    """Control ``g`` with ``<apply_A(h), w>_path == <h, g>_{H_T}`` for every control ``h``.

    The forward recursion is a composition of real even Fourier multipliers
    and pointwise products, all symmetric on physical fields, so the adjoint
    is the transposed recursion run backward in time.
    """
    _require_derivative(cfg)
    grid = cfg.grid
    if isinstance(w, FieldPath):
        if w.grid != grid:
            raise ValueError("functional lives on a different grid")
        w = w.values
    w = np.asarray(w, dtype=float)
    if w.shape != (grid.nt + 1,) + grid.shape:
        raise ValueError("path functional has the wrong shape")
    c, s = _multiplier(grid.dt, grid.omega)
    w2s = grid.omega**2 * s
    half = 0.5 * grid.dt
    u0 = cfg.u0.values
    bp = cfg.coeffs.b_prime(u0)
    sig = cfg.coeffs.sigma(u0)

    def mult(sym, x):
        return inverse_transform(sym * forward_transform(x, grid), grid)

    lam = w[grid.nt].copy()
    kap = np.zeros(grid.shape)
    nu = np.empty((grid.nt,) + grid.shape)
    for j in range(grid.nt - 1, -1, -1):
        lam_t = lam + half * bp[j + 1] * kap
        s_lam = mult(s, lam_t)
        c_kap = mult(c, kap)
        kap_new = s_lam + c_kap
        lam = (w[j] + mult(c, lam_t) + half * bp[j] * s_lam
               - mult(w2s, kap) + half * bp[j] * c_kap)
        kap = kap_new
        nu[j] = kap
    g = grid.size * sig[:-1] * nu
    return Control.from_physical(cfg.measure, g)


def solve_controlled(cfg: Config, eps: float, v: Control, noise: NoisePath | np.ndarray, raw: bool = False):
    """Controlled MDP-scaled deviation ``Z^{eps,v}``.

    Noise enters at amplitude ``1/h(eps)``, the control through
    ``<G sigma(u0 + a Z), v>_H`` and the drift as the difference quotient
    ``(b(u0 + a Z) - b(u0)) / a`` with ``a = sqrt(eps) h(eps)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    inc = _noise_array(cfg, noise)
    grid = cfg.grid
    hh = cfg.scale.h(eps)
    a = math.sqrt(eps) * hh
    u0 = cfg.u0.values
    b_u0 = cfg.coeffs.b(u0)
    sig, b = cfg.coeffs.sigma, cfg.coeffs.b
    pv = _control_fields(cfg, v)

    def impulse(j, z):
        sg = sig(u0[j] + a * z)
        return sg * (_frame(inc, j, grid) / hh + grid.dt * pv[j])

    def drift(j, z):
        return (b(u0[j] + a * z) - b_u0[j]) / a

    frames = march(grid, *_zeros_init(grid), impulse, drift, "Z^{eps,v}", _batch(inc, grid))
    return frames if raw else _wrap(cfg, frames)


# -- diagnostics ------------------------------------------------------------------

def mild_residual(cfg: Config, eps: float, noise: NoisePath | np.ndarray, path: FieldPath | np.ndarray) -> float:
    """Sup-norm residual of ``path`` in the discretized Duhamel formula for ``u_eps``.

    Stochastic integral: left-point sum; drift integral: left-point rule.
    The residual is ``O(dt)`` for a converged path.
    """
    grid = cfg.grid
    inc = _noise_array(cfg, noise)
    u = path.values if isinstance(path, FieldPath) else np.asarray(path)
    nu0, nu1 = cfg.initial_fields
    nh0, nh1 = forward_transform(nu0, grid), forward_transform(nu1, grid)
    imp = forward_transform(math.sqrt(eps) * cfg.coeffs.sigma(u[:-1]) * inc, grid)
    drf = forward_transform(cfg.coeffs.b(u[:-1]), grid)
    worst = 0.0
    for m in range(1, grid.nt + 1):
        c, s = _multiplier(m * grid.dt, grid.omega)
        acc = c * nh0 + s * nh1
        for j in range(m):
            _, sj = _multiplier((m - j) * grid.dt, grid.omega)
            acc = acc + sj * (imp[j] + grid.dt * drf[j])
        worst = max(worst, float(np.max(np.abs(inverse_transform(acc, grid) - u[m]))))
    return worst


def write_trace(path: str | Path, fpath: FieldPath) -> None:
    """Per-step sup norms of a path as CSV (``step, time, sup_abs``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "sup_abs"])
        for j, frame in enumerate(fpath.values):
            w.writerow([j, repr(j * fpath.grid.dt), repr(float(np.max(np.abs(frame))))])
