"""Monte Carlo estimators: sup-norm moments and their scaling in ``eps``, Hölder
exponents, tail probabilities at the moderate-deviation speed, and weak
continuity of the linear skeleton.

Every sample is identified by ``(seed, sample_id)`` and draws its own noise
path, so results do not depend on how samples are split across workers.
Samples are processed in fixed-size chunks and reassembled in id order before
any reduction.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import FieldPath, Window
from .noise import Control, sample_noise_batch
from .propagator import Config, DeviationScale
from .ratefn import gaussian_variance
from .solver import apply_A, solve_first_order, solve_spde

__all__ = [
    "QUANTITIES",
    "SCHEMA_VERSION",
    "MCResult",
    "RateFit",
    "HolderEstimate",
    "TailEstimate",
    "WeakContinuityReport",
    "mc_moment",
    "fit_rate",
    "holder_estimate",
    "tail_probability",
    "tail_scan",
    "weak_continuity_check",
    "jackknife",
    "run_samples",
    "write_csv",
    "write_json",
]

QUANTITIES = ("sup_diff", "clt_diff", "point_diff")
SCHEMA_VERSION = "1"
CHUNK = 64
MIN_SPAN_DECADES = 1.8  # the default grid 2^-4..2^-10 spans log10(64) ~ 1.806 decades


# -- sampling plumbing ----------------------------------------------------------

def run_samples(cfg: Config, seed: int, n_samples: int, evaluate, workers: int = 1, chunk: int = CHUNK) -> np.ndarray:
    """Apply ``evaluate(noise_batch) -> array (batch, ...)`` over sample ids ``0..n-1``.

    Chunk boundaries are fixed by ``chunk`` alone; ``workers`` only changes
    scheduling, so the concatenated output is identical for any worker count.
    """
    measure, dt = cfg.measure, cfg.grid.dt
    starts = range(0, n_samples, chunk)

    def job(s):
        ids = range(s, min(s + chunk, n_samples))
        return evaluate(sample_noise_batch(measure, dt, seed, ids))

    if workers <= 1:
        parts = [job(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, starts))
    return np.concatenate(parts, axis=0)


def jackknife(values: np.ndarray) -> tuple[float, float]:
    """Mean and leave-one-out jackknife standard error (compensated sums)."""
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("jackknife needs at least two values")
    total = math.fsum(x)
    loo = (total - x) / (n - 1)
    loo_mean = math.fsum(loo) / n
    var = (n - 1) / n * math.fsum((loo - loo_mean) ** 2)
    return total / n, math.sqrt(var)


def _sup(a: np.ndarray) -> np.ndarray:
    return np.abs(a).reshape(a.shape[0], -1).max(axis=1)


def _default_probe(cfg: Config) -> tuple[int, tuple[int, ...]]:
    g = cfg.grid
    return g.nt, (g.n // 2,) * g.dim


# -- moments and rates -----------------------------------------------------------

@dataclass(frozen=True)
class MCResult:
    estimate: float
    se: float
    n_samples: int
    p: float
    eps: float
    quantity: str
    config_hash: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.se < 0 or self.n_samples < 2:
            raise ValueError("invalid MCResult")

    def row(self) -> dict:
        return dict(quantity=self.quantity, eps=self.eps, p=self.p, n_samples=self.n_samples,
                    estimate=self.estimate, se=self.se)


def mc_moment(cfg: Config, eps: float, p: float, n_samples: int, quantity: str = "sup_diff",
              seed: int = 0, workers: int = 1, probe=None, chunk: int = CHUNK) -> MCResult:
    """Estimate ``E[q**p]`` for ``q`` one of

    ``sup_diff``  ``|u^eps - u^0|`` sup over the space-time lattice,
    ``clt_diff``  ``|(u^eps - u^0)/sqrt(eps) - Y|`` sup, on the same noise,
    ``point_diff`` ``|u^eps - u^0|`` at ``probe = (t_index, x_index)``.
    """
    if quantity not in QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")
    if p < 2:
        raise ValueError("moment order p must be >= 2")
    if n_samples < 16:
        raise ValueError("mc_moment needs at least 16 samples")
    if eps <= 0:
        raise ValueError("eps must be positive")
    u0 = cfg.u0.values
    t_idx, x_idx = probe if probe is not None else _default_probe(cfg)
    sel = (slice(None), int(t_idx)) + tuple(int(i) for i in x_idx)

    def evaluate(noise):
        diff = solve_spde(cfg, eps, noise, raw=True) - u0
        if quantity == "sup_diff":
            q = _sup(diff)
        elif quantity == "point_diff":
            q = np.abs(diff[sel])
        else:
            q = _sup(diff / math.sqrt(eps) - solve_first_order(cfg, noise, raw=True))
        return q**p

    values = run_samples(cfg, seed, n_samples, evaluate, workers, chunk)
    est, se = jackknife(values)
    return MCResult(est, se, n_samples, p, eps, quantity, cfg.fingerprint, seed)


@dataclass(frozen=True)
class RateFit:
    eps: tuple[float, ...]
    log_moments: tuple[float, ...]
    slope: float
    slope_se: float
    intercept: float
    r2: float
    dropped: tuple[float, ...] = ()

    def to_json(self) -> dict:
        return asdict(self)


def fit_rate(results, estimates=None) -> RateFit:
    """OLS fit of ``log estimate`` against ``log eps``.

    Accepts a list of :class:`MCResult`, or two sequences ``(eps, estimates)``.
    Nonpositive estimates are dropped and listed in ``dropped``.
    """
    if estimates is None:
        eps = [r.eps for r in results]
        est = [r.estimate for r in results]
    else:
        eps, est = list(results), list(estimates)
    order = sorted(range(len(eps)), key=lambda i: -eps[i])
    eps = [float(eps[i]) for i in order]
    est = [float(est[i]) for i in order]
    if any(e <= 0 for e in eps) or len(set(eps)) != len(eps):
        raise ValueError("eps values must be positive and distinct")
    dropped = tuple(e for e, v in zip(eps, est) if not v > 0)
    kept = [(e, v) for e, v in zip(eps, est) if v > 0]
    if len(kept) < 3:
        raise ValueError(f"need >= 3 positive estimates, got {len(kept)} (dropped eps {dropped})")
    x = np.log([e for e, _ in kept])
    y = np.log([v for _, v in kept])
    if (x.max() - x.min()) / math.log(10) < MIN_SPAN_DECADES - 1e-12:
        raise ValueError("eps grid spans too narrow a range")
    slope, intercept, slope_se, r2 = _ols(x, y)
    return RateFit(tuple(e for e, _ in kept), tuple(y.tolist()), slope, slope_se, intercept, r2, dropped)


def _ols(x: np.ndarray, y: np.ndarray):
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym))) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ssr = float(np.sum(resid**2))
    sst = float(np.sum((y - ym) ** 2))
    se = math.sqrt(ssr / (x.size - 2) / sxx) if x.size > 2 else math.inf
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    return slope, intercept, se, r2


# -- Hölder exponents --------------------------------------------------------------

@dataclass(frozen=True)
class HolderEstimate:
    separations: tuple[float, ...]
    moments: tuple[float, ...]
    exponent: float  # fitted slope, i.e. alpha * p
    alpha: float
    alpha_se: float
    p: float
    axis: str
    window: Window
    degenerate: bool = False

    def to_json(self) -> dict:
        d = asdict(self)
        d["window"] = asdict(self.window)
        return d


def _increment_moments(paths: np.ndarray, lags, axis: str, win: Window, p: float) -> list[float]:
    """Mean of ``|increment|**p`` over samples and window positions for each lag."""
    t = slice(win.t0, win.t1 + 1)
    box = tuple(slice(a, b) for a, b in zip(win.lo, win.hi))
    sub = paths[(slice(None), t) + box]
    ax = 1 if axis == "time" else 2
    out = []
    for lag in lags:
        n = sub.shape[ax]
        a = np.take(sub, np.arange(lag, n), axis=ax)
        b = np.take(sub, np.arange(0, n - lag), axis=ax)
        out.append(math.fsum((np.abs(a - b) ** p).ravel()) / a.size)
    return out


def holder_estimate(cfg: Config, eps: float | None = None, p: float = 2.0, n_samples: int = 1,
                    axis: str = "time", seed: int = 0, window: Window | None = None,
                    path: FieldPath | np.ndarray | None = None, workers: int = 1) -> HolderEstimate:
    """Regress log increment moments on log separation along ``time`` or ``space``.

    The source is ``path`` if given, the deterministic ``u^0`` if ``eps`` is
    None, and otherwise ``n_samples`` simulated ``u^eps`` paths.  Separations
    are dyadic multiples of the lattice step no longer than half the window.
    """
    if axis not in ("time", "space"):
        raise ValueError("axis must be 'time' or 'space'")
    grid = cfg.grid
    win = window or Window(0, grid.nt, (0,) * grid.dim, (grid.n,) * grid.dim)
    win.validate(grid)
    extent = (win.t1 - win.t0 + 1) if axis == "time" else (win.hi[0] - win.lo[0])
    lags = []
    d = 1
    while d <= extent // 2:
        lags.append(d)
        d *= 2
    if len(lags) < 4:
        raise ValueError(f"window resolves only {len(lags)} dyadic separations; need 4")
    step = grid.dt if axis == "time" else grid.dx

    if path is not None:
        vals = path.values if isinstance(path, FieldPath) else np.asarray(path, dtype=float)
        moments = _increment_moments(vals[None], lags, axis, win, p)
    elif eps is None:
        moments = _increment_moments(cfg.u0.values[None], lags, axis, win, p)
    else:
        def evaluate(noise):
            paths = solve_spde(cfg, eps, noise, raw=True)
            # per-sample sums so the reduction order is fixed by sample id
            return np.array([[m for m in _increment_moments(paths[i:i + 1], lags, axis, win, p)]
                             for i in range(paths.shape[0])])

        per = run_samples(cfg, seed, n_samples, evaluate, workers)
        moments = [math.fsum(per[:, i]) / n_samples for i in range(len(lags))]

    seps = tuple(lag * step for lag in lags)
    if not all(m > 0 for m in moments):
        return HolderEstimate(seps, tuple(moments), math.nan, math.nan, math.nan, p, axis, win, True)
    slope, _, se, _ = _ols(np.log(seps), np.log(moments))
    return HolderEstimate(seps, tuple(moments), slope, slope / p, se / p, p, axis, win)


# -- tails --------------------------------------------------------------------------

@dataclass(frozen=True)
class TailEstimate:
    r: float
    eps: float
    theta: float
    n_samples: int
    count: int
    probability: float | None
    se: float
    normalized: float | None
    upper_bound: float | None = None
    predicted_probability: float | None = None
    predicted_rate: float | None = None
    expected_count: float = 0.0
    count_ok: bool = True

    def to_json(self) -> dict:
        return asdict(self)


def tail_probability(cfg: Config, eps: float, r: float, n_samples: int, probe=None, theta: float | None = None,
                     seed: int = 0, workers: int = 1, min_count: int = 20, confidence: float = 0.95) -> TailEstimate:
    """Plain MC estimate of ``P(|Z^eps(probe)| > r)`` and ``-log P / h(eps)**2``.

    With constant ``sigma`` and affine ``b`` the Gaussian closed form
    ``2 (1 - Phi(r h / s))`` and its limit ``r**2 / (2 s**2)`` are reported too.
    Zero exceedances give an exact binomial upper bound instead of an estimate.
    """
    return tail_scan(cfg, eps, [r], n_samples, probe, theta, seed, workers, min_count, confidence)[0]


def tail_scan(cfg: Config, eps: float, thresholds, n_samples: int, probe=None, theta: float | None = None,
              seed: int = 0, workers: int = 1, min_count: int = 20, confidence: float = 0.95) -> list[TailEstimate]:
    """:func:`tail_probability` for several thresholds on one set of samples."""
    if theta is not None:
        cfg = cfg.with_(scale=DeviationScale(theta))
    theta = cfg.scale.theta
    h = cfg.scale.h(eps)
    t_idx, x_idx = probe if probe is not None else _default_probe(cfg)
    x_idx = tuple(int(i) for i in x_idx)
    s = None
    if cfg.coeffs.sigma_constant and cfg.coeffs.b_affine:
        s = math.sqrt(gaussian_variance(cfg, t_idx))
    thresholds = [float(r) for r in thresholds]

    absz = None
    if any(r > 0 for r in thresholds):
        u0 = cfg.u0.values[(t_idx,) + x_idx]
        scale = math.sqrt(eps) * h
        sel = (slice(None), t_idx) + x_idx

        def evaluate(noise):
            return np.abs((solve_spde(cfg, eps, noise, raw=True)[sel] - u0) / scale)

        absz = run_samples(cfg, seed, n_samples, evaluate, workers)

    out = []
    for r in thresholds:
        pred_p = pred_rate = None
        if s is not None:
            pred_p = math.erfc(r * h / (s * math.sqrt(2))) if r > 0 else 1.0  # 2 (1 - Phi)
            pred_rate = r * r / (2 * s * s)
        if r <= 0:
            out.append(TailEstimate(r, eps, theta, n_samples, n_samples, 1.0, 0.0, 0.0, None, pred_p, pred_rate,
                                    float(n_samples), True))
            continue
        count = int(np.count_nonzero(absz > r))
        ref = pred_p if pred_p is not None else count / n_samples
        expected = ref * n_samples
        if count == 0:
            upper = 1.0 - (1.0 - confidence) ** (1.0 / n_samples)
            out.append(TailEstimate(r, eps, theta, n_samples, 0, None, 0.0, None, upper, pred_p, pred_rate,
                                    expected, expected >= min_count))
            continue
        prob = count / n_samples
        se = math.sqrt(prob * (1 - prob) / n_samples)
        out.append(TailEstimate(r, eps, theta, n_samples, count, prob, se, -math.log(prob) / h**2, None,
                                pred_p, pred_rate, expected, expected >= min_count))
    return out


# -- weak continuity -------------------------------------------------------------

@dataclass(frozen=True)
class WeakContinuityReport:
    modes: tuple[int, ...]
    distances: tuple[float, ...]
    reference_sup: float
    tolerance: float
    monotone_tail: bool
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def weak_continuity_check(cfg: Config, h: Control, profile: np.ndarray, modes=range(1, 7),
                          tolerance: float = 0.05) -> WeakContinuityReport:
    """Sup distance between ``Z^{h_j}`` and ``Z^h`` for ``h_j = h + sin(2^j pi t/T) g``.

    The oscillation is sampled at slot midpoints.  The check passes when the
    distances are nonincreasing from ``j = 2`` on and the last one is below
    ``tolerance * |Z^h|_sup``.
    """
    grid = cfg.grid
    modes = tuple(int(j) for j in modes)
    zh = apply_A(cfg, h).values
    ref = float(np.max(np.abs(zh)))
    g = np.broadcast_to(np.asarray(profile, dtype=float), grid.shape)
    tmid = (np.arange(grid.nt) + 0.5) * grid.dt
    dists = []
    for j in modes:
        wave = np.sin(2.0**j * math.pi * tmid / grid.T)
        pert = Control.from_physical(cfg.measure, wave.reshape((-1,) + (1,) * grid.dim) * g)
        zj = apply_A(cfg, h + pert).values
        dists.append(float(np.max(np.abs(zj - zh))))
    tail = [d for j, d in zip(modes, dists) if j >= 2]
    monotone = all(b <= a for a, b in zip(tail, tail[1:]))
    final_ok = dists[-1] <= tolerance * ref if ref > 0 else dists[-1] == 0
    return WeakContinuityReport(modes, tuple(dists), ref, tolerance, monotone, monotone and final_ok)


# -- output ------------------------------------------------------------------------

def write_csv(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    """CSV with a fixed column order; floats written with ``repr`` for exact replay."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in columns)])


def write_json(path: str | Path, payload: dict, config_hash: str = "", seed: int | None = None) -> None:
    body = dict(payload)
    body.update(schema_version=SCHEMA_VERSION, version=__version__, config_hash=config_hash)
    if seed is not None:
        body["seed"] = seed
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
