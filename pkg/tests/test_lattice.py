import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochwave.lattice import (
    Field,
    FieldPath,
    Window,
    default_window,
    forward_transform,
    holder_seminorm,
    inverse_transform,
    make_grid,
    read_field_binary,
    read_path_binary,
    spectral_norm_weight,
    sup_norm_path,
    write_field_binary,
    write_field_csv,
    write_path_binary,
)


def test_make_grid_horizon():
    assert make_grid(1, 64, 2.0, 0.01, 100).T == pytest.approx(1.0)
    assert make_grid(3, 16, 4.0, 0.02, 50).T == pytest.approx(1.0)


@pytest.mark.parametrize("args", [
    (2, 16, 1.0, 0.01, 10),   # unsupported dimension
    (1, 48, 1.0, 0.01, 10),   # not a power of two
    (1, 2, 1.0, 0.01, 10),    # too small
    (1, 16, 0.0, 0.01, 10),
    (1, 16, 1.0, -0.01, 10),
    (1, 16, 1.0, 0.01, 0),
    (1, 16, 1.0, 0.1, 10),    # dt > L/n
])
def test_make_grid_rejects(args):
    with pytest.raises(ValueError):
        make_grid(*args)


def test_mode_frequencies():
    g = make_grid(1, 8, 2.0, 0.1, 1)
    k = np.array([0, 1, 2, 3, 4, 3, 2, 1])
    assert np.allclose(g.omega, 2 * np.pi * k / 2.0)
    assert not g.omega.flags.writeable


def test_constant_field_spectrum():
    g = make_grid(3, 8, 1.0, 0.1, 1)
    c = forward_transform(Field(g, np.full(g.shape, 2.5)))
    assert c[0, 0, 0] == pytest.approx(2.5)
    c[0, 0, 0] = 0
    assert np.max(np.abs(c)) < 1e-15


def test_single_harmonic_two_modes():
    g = make_grid(1, 32, 3.0, 0.05, 1)
    c = forward_transform(Field(g, np.cos(2 * np.pi * g.coords[0] / g.L)))
    nz = np.flatnonzero(np.abs(c) > 1e-12)
    assert list(nz) == [1, 31]
    assert c[1] == pytest.approx(0.5) and c[31] == pytest.approx(np.conj(c[1]))


@pytest.mark.parametrize("dim,n", [(1, 4), (1, 64), (1, 256), (3, 4), (3, 16)])
def test_roundtrip_and_parseval(dim, n, rng):
    g = make_grid(dim, n, 1.0, 1.0 / n, 1)
    for _ in range(100):
        f = rng.standard_normal(g.shape)
        c = forward_transform(f, g)
        back = inverse_transform(c, g)
        assert np.max(np.abs(back - f)) < 1e-12 * np.max(np.abs(f))
        lhs = np.sum(f**2)
        rhs = spectral_norm_weight(g) * np.sum(np.abs(c) ** 2)
        assert abs(lhs - rhs) < 1e-12 * lhs


def test_inverse_rejects_non_hermitian():
    g = make_grid(1, 8, 1.0, 0.1, 1)
    c = np.zeros(8, dtype=complex)
    c[1] = 1.0
    with pytest.raises(ValueError, match="Hermitian"):
        inverse_transform(c, g)
    c[7] = 1.0
    assert np.allclose(inverse_transform(c, g), 2 * np.cos(2 * np.pi * np.arange(8) / 8))


def test_batched_transform_matches_single(rng):
    g = make_grid(1, 16, 1.0, 0.05, 1)
    f = rng.standard_normal((3, 5, 16))
    c = forward_transform(f, g)
    assert np.allclose(c[2, 4], forward_transform(f[2, 4], g), atol=0, rtol=0)


def test_size_mismatch():
    g = make_grid(1, 16, 1.0, 0.05, 1)
    with pytest.raises(ValueError):
        forward_transform(np.zeros(8), g)
    with pytest.raises(ValueError):
        Field(g, np.zeros(8))
    with pytest.raises(ValueError):
        Field(g, np.full(16, np.nan))


def _path(g, values):
    return FieldPath(g, values)


def test_sup_norm_examples():
    g = make_grid(1, 8, 1.0, 0.1, 6)
    const = _path(g, np.full((7, 8), -1.5))
    assert sup_norm_path(const, 6) == 1.5
    vals = np.full((7, 8), 0.5)
    vals[3, 2] = 5.0
    spike = _path(g, vals)
    assert [sup_norm_path(spike, t) for t in range(7)] == [0.5, 0.5, 0.5, 5.0, 5.0, 5.0, 5.0]
    assert sup_norm_path(spike - spike, 6) == 0.0
    with pytest.raises(IndexError):
        sup_norm_path(spike, 7)


def test_paths_are_immutable():
    g = make_grid(1, 8, 1.0, 0.1, 2)
    p = _path(g, np.zeros((3, 8)))
    with pytest.raises(ValueError):
        p.values[0, 0] = 1.0


def test_holder_constant_and_linear_in_time():
    g = make_grid(1, 16, 1.0, 0.05, 20)
    assert holder_seminorm(_path(g, np.full((21, 16), 3.0)), 0.5) == 0.0
    t = g.times[:, None] * np.ones(16)
    assert holder_seminorm(_path(g, t), 1.0) == pytest.approx(1.0, rel=1e-12)


def _brute_force_holder(vals, dt, dx, alpha):
    pts = [(i, j) for i in range(vals.shape[0]) for j in range(vals.shape[1])]
    best = 0.0
    for a in range(len(pts)):
        (t1, x1) = pts[a]
        for t2, x2 in pts[a + 1:]:
            d = abs(t1 - t2) * dt + abs(x1 - x2) * dx
            best = max(best, abs(vals[t1, x1] - vals[t2, x2]) / d**alpha)
    return best


def test_holder_standing_wave_matches_brute_force():
    g = make_grid(1, 32, 1.0, 1 / 32, 32)
    x = g.coords[0]
    vals = np.array([np.cos(2 * np.pi * t) * np.sin(2 * np.pi * x) for t in g.times])
    p = _path(g, vals)
    win = Window(0, g.nt, (0,), (32,))
    oracle = _brute_force_holder(vals, g.dt, g.dx, 0.5)
    assert holder_seminorm(p, 0.5, win) == pytest.approx(oracle, rel=1e-12)
    # the dyadic scan is a lower bound; for alpha < 1 the maximizing pair of a
    # smooth wave sits at a non-dyadic separation
    dyadic = holder_seminorm(p, 0.5, win, exhaustive=False)
    assert 0.9 * oracle < dyadic <= oracle


def test_holder_dyadic_exact_for_lipschitz_quotient():
    g = make_grid(1, 32, 1.0, 1 / 32, 32)
    vals = np.array([np.cos(2 * np.pi * t) * np.sin(2 * np.pi * g.coords[0]) for t in g.times])
    p = _path(g, vals)
    win = Window(0, g.nt, (0,), (32,))
    # with alpha = 1 the quotient is a difference quotient, maximal at one step
    assert holder_seminorm(p, 1.0, win, exhaustive=False) == pytest.approx(
        holder_seminorm(p, 1.0, win, exhaustive=True), rel=1e-12)


def test_holder_monotone_in_window_and_homogeneous(rng):
    g = make_grid(1, 16, 1.0, 1 / 16, 16)
    p = _path(g, rng.standard_normal((17, 16)))
    big = Window(0, 16, (0,), (16,))
    small = Window(2, 10, (3,), (11,))
    assert big.contains(small)
    assert holder_seminorm(p, 0.7, small) <= holder_seminorm(p, 0.7, big)
    assert holder_seminorm(-3.0 * p, 0.7, big) == pytest.approx(3.0 * holder_seminorm(p, 0.7, big), rel=1e-14)


def test_holder_rejects_bad_inputs():
    g = make_grid(1, 16, 1.0, 1 / 16, 16)
    p = _path(g, np.zeros((17, 16)))
    with pytest.raises(ValueError):
        holder_seminorm(p, 0.0)
    with pytest.raises(ValueError):
        holder_seminorm(p, 0.5, Window(5, 4, (0,), (16,)))
    with pytest.raises(ValueError):
        holder_seminorm(p, 0.5, Window(0, 4, (8,), (8,)))


def test_default_window_is_centered_half_box():
    g = make_grid(3, 16, 1.0, 1 / 16, 8)
    w = default_window(g)
    assert (w.t0, w.t1, w.lo, w.hi) == (0, 8, (4, 4, 4), (12, 12, 12))


def test_binary_roundtrip(tmp_path, rng):
    g = make_grid(3, 4, 1.0, 0.25, 3)
    f = Field(g, rng.standard_normal(g.shape))
    write_field_binary(tmp_path / "f.bin", f, frame=7)
    raw = (tmp_path / "f.bin").read_bytes()
    assert len(raw) == 32 + 8 * 64 and raw[:8] == b"SWFIELD1"
    dim, n, frame, vals = read_field_binary(tmp_path / "f.bin")
    assert (dim, n, frame) == (3, 4, 7)
    assert np.array_equal(vals, f.values)
    p = FieldPath(g, rng.standard_normal((4,) + g.shape))
    write_path_binary(tmp_path / "p.bin", p)
    assert np.array_equal(read_path_binary(tmp_path / "p.bin"), p.values)


def test_csv_small_grids_only(tmp_path):
    g = make_grid(1, 8, 1.0, 0.1, 1)
    write_field_csv(tmp_path / "f.csv", Field(g, np.arange(8.0)))
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "i0,x0,value" and len(lines) == 9
    big = make_grid(3, 32, 1.0, 1 / 32, 1)
    with pytest.raises(ValueError):
        write_field_csv(tmp_path / "g.csv", Field(big, np.zeros(big.shape)))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.floats(0.1, 10.0), st.integers(0, 2**32 - 1))
def test_parseval_property(log2n, L, seed):
    n = 2**log2n
    g = make_grid(1, n, L, L / n, 1)
    f = np.random.default_rng(seed).standard_normal(n)
    c = forward_transform(f, g)
    assert np.sum(f**2) == pytest.approx(n * np.sum(np.abs(c) ** 2), rel=1e-12)
