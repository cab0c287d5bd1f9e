"""Moderate-deviation rate function by least-norm control, with a closed-form
Gaussian oracle and forward upper bounds for the large-deviation rate.

``I(g) = inf { 1/2 ||h||^2_{H_T} : O Z^h = g }`` where ``O`` observes a point,
the terminal frame or the full path.  Because ``h -> Z^h`` is linear, the
minimizer is ``h* = (O A)^* w`` with ``(O A)(O A)^* w = g``; that system is
solved by conjugate gradients in observation space.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .lattice import Field, FieldPath, write_path_binary
from .noise import Control, ht_norm
from .propagator import Config, _multiplier
from .solver import apply_A, apply_A_adjoint, solve_skeleton

__all__ = [
    "TargetSpec",
    "RateResult",
    "rate_function",
    "gaussian_point_rate",
    "gaussian_variance",
    "ldp_forward_bound",
    "observe",
    "conjugate_gradient",
]

KINDS = ("point_constraint", "terminal_field", "full_path")


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """What the linear skeleton must hit.

    ``point_constraint`` payload is ``(t_index, x_index, r)`` with ``x_index`` a
    tuple of lattice indices; ``terminal_field`` takes a :class:`Field` (or
    array) for the last frame; ``full_path`` a :class:`FieldPath`.
    """

    kind: str
    payload: object

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "point_constraint":
            t, x, r = self.payload
            if not math.isfinite(r):
                raise ValueError("point constraint needs a finite value")
            object.__setattr__(self, "payload", (int(t), tuple(int(i) for i in np.atleast_1d(x)), float(r)))

    @classmethod
    def point(cls, t_index: int, x_index, r: float) -> "TargetSpec":
        return cls("point_constraint", (t_index, x_index, r))

    def values(self, cfg: Config) -> np.ndarray:
        grid = cfg.grid
        if self.kind == "point_constraint":
            t, x, r = self.payload
            if not 0 <= t <= grid.nt or len(x) != grid.dim or not all(0 <= i < grid.n for i in x):
                raise ValueError("point constraint is off the grid")
            return np.array([r])
        if self.kind == "terminal_field":
            v = self.payload.values if isinstance(self.payload, Field) else np.asarray(self.payload, float)
            if v.shape != grid.shape:
                raise ValueError("terminal target has the wrong shape")
            return v.ravel().copy()
        v = self.payload.values if isinstance(self.payload, FieldPath) else np.asarray(self.payload, float)
        if v.shape != (grid.nt + 1,) + grid.shape:
            raise ValueError("full-path target has the wrong shape")
        return v.ravel().copy()


def observe(cfg: Config, target: TargetSpec, path: np.ndarray) -> np.ndarray:
    """Apply the observation operator of ``target`` to a path array."""
    if target.kind == "point_constraint":
        t, x, _ = target.payload
        return np.array([path[(t,) + x]])
    if target.kind == "terminal_field":
        return path[-1].ravel().copy()
    return path.ravel().copy()


def _observe_T(cfg: Config, target: TargetSpec, y: np.ndarray) -> np.ndarray:
    grid = cfg.grid
    out = np.zeros((grid.nt + 1,) + grid.shape)
    if target.kind == "point_constraint":
        t, x, _ = target.payload
        out[(t,) + x] = y[0]
    elif target.kind == "terminal_field":
        out[-1] = y.reshape(grid.shape)
    else:
        out[:] = y.reshape(out.shape)
    return out


@dataclass
class RateResult:
    value: float
    minimizer: Control
    residual: float
    iterations: int
    feasible: bool = True

    def to_json(self, config_hash: str = "") -> dict:
        return dict(value=self.value if math.isfinite(self.value) else "inf",
                    residual=self.residual, iterations=self.iterations,
                    feasible=self.feasible, config_hash=config_hash)

    def dump(self, path: str | Path, config_hash: str = "") -> None:
        Path(path).write_text(json.dumps(self.to_json(config_hash), indent=2, sort_keys=True) + "\n")

    def dump_minimizer(self, path: str | Path) -> None:
        write_path_binary(path, self.minimizer.physical(), self.minimizer.grid)


def conjugate_gradient(apply, b: np.ndarray, tol: float, maxiter: int):
    """CG for a symmetric positive semidefinite operator; returns ``(x, iterations, converged)``.

    Stops when the recursive residual drops below ``tol * ||b||``.
    """
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    target = tol * math.sqrt(float(b @ b))
    if math.sqrt(rs) <= target:
        return x, 0, True
    for it in range(1, maxiter + 1):
        ap = apply(p)
        pap = float(p @ ap)
        if pap <= 0:
            return x, it, False
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= target:
            return x, it, True
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, maxiter, False


def rate_function(cfg: Config, target: TargetSpec, tol: float = 1e-8, maxiter: int | None = None) -> RateResult:
    """Least-norm control hitting ``target``; ``I = 1/2 ||h*||^2_{H_T}``.

    Targets the iteration cannot reach within ``maxiter`` (default ten times
    the number of constraints) are reported infeasible with ``value = inf``.
    """
    if not cfg.coeffs.has_derivative:
        raise ConfigError("rate function needs b'", hypothesis="D")
    g = target.values(cfg)
    gnorm = math.sqrt(float(g @ g))
    if gnorm == 0:
        return RateResult(0.0, Control.zeros(cfg.measure), 0.0, 0)
    maxiter = maxiter or 10 * g.size

    def adjoint(y):
        return apply_A_adjoint(cfg, _observe_T(cfg, target, y))

    def normal_op(y):
        return observe(cfg, target, apply_A(cfg, adjoint(y)).values)

    w, iters, converged = conjugate_gradient(normal_op, g, tol, maxiter)
    h_star = adjoint(w)
    resid = float(np.linalg.norm(observe(cfg, target, apply_A(cfg, h_star).values) - g)) / gnorm
    feasible = converged and resid <= 10 * tol
    value = 0.5 * ht_norm(h_star) if feasible else math.inf
    return RateResult(value, h_star, resid, iters, feasible)


def _step_matrix(dt: float, omega: np.ndarray, b1: float):
    """Per-mode 2x2 step of the linear recursion with drift ``b1 * Z``, plus the impulse vector."""
    c, s = _multiplier(dt, omega)
    half = 0.5 * dt
    a11 = c + half * s * b1
    a12 = s
    a21 = -omega**2 * s + half * c * b1 + half * b1 * a11
    a22 = c + half * b1 * s
    return (a11, a12, a21, a22), (s, a22)


def gaussian_variance(cfg: Config, t_index: int) -> float:
    """Variance of the linear Gaussian fluctuation at one lattice point and frame ``t_index``.

    Sums, mode by mode, the squared discrete impulse responses of the linear
    recursion (constant ``sigma``, constant ``b'``) weighted by ``dt * mu``.
    The result is the same at every lattice point.
    """
    co = cfg.coeffs
    if not (co.sigma_constant and co.b_affine):
        raise ConfigError(f"Gaussian oracle undefined for {co.name!r}: needs constant sigma and affine b")
    grid = cfg.grid
    sigma0 = co.sigma_value
    b1 = float(co.params.get("beta1", 0.0))
    mu = cfg.measure.weights.ravel()
    (a11, a12, a21, a22), (z, v) = _step_matrix(grid.dt, grid.omega.ravel(), b1)
    acc = np.zeros_like(mu)
    # response at frame t_index to an impulse at step j is the first component after t_index-j steps
    for _ in range(t_index):
        acc += z * z
        z, v = a11 * z + a12 * v, a21 * z + a22 * v
    return sigma0**2 * grid.dt * math.fsum(mu * acc)


def gaussian_point_rate(cfg: Config, t_index: int, x_index, r: float) -> float:
    """``r**2 / (2 s**2)`` with ``s**2`` from :func:`gaussian_variance`."""
    if r == 0:
        return 0.0
    s2 = gaussian_variance(cfg, t_index)
    return r * r / (2 * s2)


def ldp_forward_bound(cfg: Config, h: Control) -> tuple[FieldPath, float]:
    """Skeleton path ``V^h`` and the upper bound ``1/2 ||h||^2_{H_T}`` on its rate."""
    return solve_skeleton(cfg, h), 0.5 * ht_norm(h)
