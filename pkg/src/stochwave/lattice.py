"""Periodic lattices, real fields on them, spectral transforms and path norms.

Spectral normalization
----------------------
The forward transform carries the factor ``1/n**dim``::

    fhat[k] = (1/N) * sum_x f[x] exp(-i w_k . x),     N = n**dim
    f[x]    =         sum_k fhat[k] exp(+i w_k . x)

so Parseval reads ``sum_x |f[x]|**2 == N * sum_k |fhat[k]|**2``.  Every module
in the package uses this convention; ``spectral_norm_weight`` returns the
factor ``N`` that links the two sides.
"""
from __future__ import annotations

import csv
import itertools
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "FieldPath",
    "Window",
    "make_grid",
    "forward_transform",
    "inverse_transform",
    "spectral_norm_weight",
    "sup_norm_path",
    "holder_seminorm",
    "default_window",
    "write_field_binary",
    "read_field_binary",
    "write_path_binary",
    "read_path_binary",
    "write_field_csv",
]

SUPPORTED_DIMS = (1, 3)
HERMITIAN_TOL = 1e-12
FIELD_MAGIC = b"SWFIELD1"
_HEADER = struct.Struct("<8sQQQ")  # magic, dim, n, frame index -> 32 bytes
EXHAUSTIVE_LIMIT = 4096


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Periodic cube ``[0, L)**dim`` with ``n`` points per axis and a uniform time mesh."""

    dim: int
    n: int
    L: float
    dt: float
    nt: int

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMS:
            raise ValueError(f"unsupported dimension {self.dim}; expected one of {SUPPORTED_DIMS}")
        if int(self.n) != self.n or self.n < 4 or not _is_power_of_two(int(self.n)):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.nt) != self.nt or self.nt < 1:
            raise ValueError(f"nt must be a positive integer, got {self.nt}")
        if self.dt > self.dx * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds the accuracy bound L/n={self.dx}")

    @property
    def T(self) -> float:
        return self.nt * self.dt

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        """Trailing array axes holding the spatial coordinates."""
        return tuple(range(-self.dim, 0))

    @cached_property
    def wavevectors(self) -> tuple[np.ndarray, ...]:
        """Angular wavevector components ``2 pi k_i / L`` broadcast to ``shape``."""
        k1 = 2 * np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n) / self.L
        return tuple(np.meshgrid(*([k1] * self.dim), indexing="ij"))

    @cached_property
    def omega(self) -> np.ndarray:
        """Mode frequency ``|w_k|`` for every lattice mode, in FFT order."""
        w = np.sqrt(sum(k * k for k in self.wavevectors))
        w.setflags(write=False)
        return w

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        x1 = np.arange(self.n) * self.dx
        return tuple(np.meshgrid(*([x1] * self.dim), indexing="ij"))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def check_field_shape(self, values: np.ndarray, what: str = "field") -> None:
        if tuple(values.shape[-self.dim:]) != self.shape:
            raise ValueError(f"{what} shape {values.shape} does not match grid shape {self.shape}")


def make_grid(dim: int, n: int, L: float, dt: float, nt: int) -> Grid:
    grid = Grid(int(dim), int(n), float(L), float(dt), int(nt))
    grid.omega  # noqa: B018 - populate the cache
    return grid


def spectral_norm_weight(grid: Grid) -> int:
    """Parseval weight: ``sum_x f**2 == weight * sum_k |fhat|**2``."""
    return grid.size


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        self.grid.check_field_shape(v)
        if v.shape != self.grid.shape:
            raise ValueError(f"field must have shape {self.grid.shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class FieldPath:
    """Frames ``0..nt`` of a real field; frame ``j`` lives at time ``j*dt``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        expected = (self.grid.nt + 1,) + self.grid.shape
        if v.shape != expected:
            raise ValueError(f"path must have shape {expected}, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def frame(self, j: int) -> Field:
        return Field(self.grid, self.values[j])

    def __sub__(self, other: "FieldPath") -> "FieldPath":
        if other.grid != self.grid:
            raise ValueError("paths live on different grids")
        return FieldPath(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "FieldPath":
        return FieldPath(self.grid, c * self.values)

    __rmul__ = __mul__


def forward_transform(field: Field | np.ndarray, grid: Grid | None = None) -> np.ndarray:
    """Spectral coefficients (normalized by ``1/n**dim``) over the trailing ``dim`` axes.

    Accepts a :class:`Field` or a raw array with arbitrary leading batch axes.
    """
    if isinstance(field, Field):
        grid, values = field.grid, field.values
    else:
        if grid is None:
            raise TypeError("a grid is required when transforming a raw array")
        values = np.asarray(field)
        grid.check_field_shape(values)
    if np.iscomplexobj(values):
        raise ValueError("forward_transform expects a real field")
    return np.fft.fftn(values, axes=grid.axes, norm="forward")


def inverse_transform(coeffs: np.ndarray, grid: Grid, *, check: bool = True) -> np.ndarray:
    """Real field from Hermitian-symmetric coefficients.

    The imaginary residue is verified to be below ``1e-12`` (relative) before
    it is dropped.
    """
    coeffs = np.asarray(coeffs)
    grid.check_field_shape(coeffs, "coefficient array")
    out = np.fft.ifftn(coeffs, axes=grid.axes, norm="forward")
    if check:
        scale = max(float(np.max(np.abs(out.real), initial=0.0)), 1.0)
        resid = float(np.max(np.abs(out.imag), initial=0.0))
        if resid > HERMITIAN_TOL * scale:
            raise ValueError(f"spectrum is not Hermitian: imaginary residue {resid:.3e}")
    return out.real


def inverse_field(coeffs: np.ndarray, grid: Grid) -> Field:
    return Field(grid, inverse_transform(coeffs, grid))


# -- norms --------------------------------------------------------------------

def sup_norm_path(path: FieldPath, t_index: int) -> float:
    """``max |path|`` over frames ``0..t_index`` and the whole lattice."""
    if not 0 <= t_index <= path.grid.nt:
        raise IndexError(f"t_index {t_index} outside 0..{path.grid.nt}")
    return float(np.max(np.abs(path.values[: t_index + 1])))


@dataclass(frozen=True)
class Window:
    """Space-time sub-box: frames ``t0..t1`` inclusive, index range ``[lo, hi)`` on every axis."""

    t0: int
    t1: int
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def validate(self, grid: Grid) -> None:
        if len(self.lo) != grid.dim or len(self.hi) != grid.dim:
            raise ValueError("window rank does not match grid dimension")
        if not (0 <= self.t0 <= self.t1 <= grid.nt):
            raise ValueError("empty or out-of-range time window")
        for a, b in zip(self.lo, self.hi):
            if not (0 <= a < b <= grid.n):
                raise ValueError("empty or out-of-range spatial window")

    def contains(self, other: "Window") -> bool:
        return (
            self.t0 <= other.t0
            and other.t1 <= self.t1
            and all(a <= c for a, c in zip(self.lo, other.lo))
            and all(d <= b for b, d in zip(self.hi, other.hi))
        )


def default_window(grid: Grid) -> Window:
    """Centered sub-box of half the side length, full time range."""
    lo = grid.n // 4
    hi = lo + grid.n // 2
    return Window(0, grid.nt, (lo,) * grid.dim, (hi,) * grid.dim)


def _dyadic(limit: int) -> list[int]:
    out, d = [], 1
    while d < limit:
        out.append(d)
        d *= 2
    return out


def _dyadic_offsets(win: Window, dim: int) -> list[tuple[int, ...]]:
    """Offsets (dt_steps, dx_steps...) along each axis and along (time, one space axis) pairs."""
    t_off = _dyadic(win.t1 - win.t0 + 1)
    s_off = [_dyadic(h - l) for l, h in zip(win.lo, win.hi)]
    offs: set[tuple[int, ...]] = set()
    for a in t_off:
        offs.add((a,) + (0,) * dim)
    for ax in range(dim):
        for b in s_off[ax]:
            base = [0] * dim
            base[ax] = b
            offs.add((0, *base))
            for a in t_off:
                for sgn in (1, -1):
                    base[ax] = sgn * b
                    offs.add((a, *base))
    return sorted(offs)


def holder_seminorm(path: FieldPath, alpha: float, window: Window | None = None,
                    exhaustive: bool | None = None) -> float:
    """Discrete Hölder quotient ``max |g(t,x)-g(s,y)| / (|t-s| + |x-y|)**alpha`` on a window.

    ``exhaustive=True`` visits every pair of window points; ``False`` only
    dyadic separations (1, 2, 4, ... steps along time, each spatial axis, and
    time combined with one spatial axis).  The default picks the exhaustive
    scan for windows of at most ``EXHAUSTIVE_LIMIT`` points.  Spatial
    distances are Euclidean within the window (no wrap).
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    grid = path.grid
    win = window or default_window(grid)
    win.validate(grid)
    sl = (slice(win.t0, win.t1 + 1),) + tuple(slice(a, b) for a, b in zip(win.lo, win.hi))
    g = path.values[sl]
    if exhaustive is None:
        exhaustive = g.size <= EXHAUSTIVE_LIMIT
    if exhaustive:
        return _holder_exhaustive(g, grid, alpha)
    best = 0.0
    for off in _dyadic_offsets(win, grid.dim):
        a = g
        b = g
        for axis, o in enumerate(off):
            n_ax = g.shape[axis]
            if abs(o) >= n_ax:
                break
            if o >= 0:
                a = a.take(range(0, n_ax - o), axis=axis)
                b = b.take(range(o, n_ax), axis=axis)
            else:
                a = a.take(range(-o, n_ax), axis=axis)
                b = b.take(range(0, n_ax + o), axis=axis)
        else:
            if a.size == 0:
                continue
            dist = off[0] * grid.dt + grid.dx * float(np.sqrt(sum(o * o for o in off[1:])))
            best = max(best, float(np.max(np.abs(a - b))) / dist**alpha)
    return best


def _holder_exhaustive(g: np.ndarray, grid: Grid, alpha: float) -> float:
    idx = np.indices(g.shape).reshape(g.ndim, -1).T
    vals = g.reshape(-1)
    t = idx[:, 0] * grid.dt
    x = idx[:, 1:] * grid.dx
    best = 0.0
    for i in range(len(vals) - 1):
        dist = np.abs(t[i + 1:] - t[i]) + np.sqrt(np.sum((x[i + 1:] - x[i]) ** 2, axis=1))
        q = np.abs(vals[i + 1:] - vals[i]) / dist**alpha
        if q.size:
            best = max(best, float(q.max()))
    return best


# -- serialization ------------------------------------------------------------

def _header(grid: Grid, frame: int) -> bytes:
    return _HEADER.pack(FIELD_MAGIC, grid.dim, grid.n, frame)


def write_field_binary(path: str | Path, field: Field, frame: int = 0) -> None:
    """32-byte header (magic, dim, n, frame index; little-endian) then float64 values, row-major."""
    with open(path, "wb") as fh:
        fh.write(_header(field.grid, frame))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def write_path_binary(path: str | Path, fpath: FieldPath | np.ndarray, grid: Grid | None = None) -> None:
    """Concatenated field records, one per frame."""
    values = fpath.values if isinstance(fpath, FieldPath) else np.asarray(fpath)
    grid = fpath.grid if isinstance(fpath, FieldPath) else grid
    with open(path, "wb") as fh:
        for j, frame in enumerate(values):
            fh.write(_header(grid, j))
            fh.write(np.ascontiguousarray(frame, dtype="<f8").tobytes())


def _read_records(path: str | Path):
    data = Path(path).read_bytes()
    pos, out = 0, []
    while pos < len(data):
        magic, dim, n, frame = _HEADER.unpack_from(data, pos)
        if magic != FIELD_MAGIC:
            raise ValueError(f"bad magic {magic!r} at byte {pos}")
        pos += _HEADER.size
        count = n**dim
        vals = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape((n,) * dim)
        pos += 8 * count
        out.append((dim, n, frame, vals.astype(float)))
    return out


def read_field_binary(path: str | Path) -> tuple[int, int, int, np.ndarray]:
    """Return ``(dim, n, frame, values)`` of the first record."""
    return _read_records(path)[0]


def read_path_binary(path: str | Path) -> np.ndarray:
    recs = _read_records(path)
    return np.stack([r[3] for r in recs])


def write_field_csv(path: str | Path, field: Field) -> None:
    grid = field.grid
    if grid.size > 4096:
        raise ValueError("CSV export is limited to small grids (<= 4096 points)")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"i{a}" for a in range(grid.dim)] + [f"x{a}" for a in range(grid.dim)] + ["value"])
        for idx in itertools.product(range(grid.n), repeat=grid.dim):
            w.writerow(list(idx) + [repr(i * grid.dx) for i in idx] + [repr(float(field.values[idx]))])
