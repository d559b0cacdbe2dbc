import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnlslab.grid import (
    FieldError, Grid1D, SpatialField, SpectralField, dealias, linear_propagate,
    read_snapshot, snapshot_bytes, snapshot_from_bytes, spatial_derivative, to_spatial,
    to_spectral, write_snapshot,
)

G20 = Grid1D(20.0, 1024)


def random_field(rng, g, t=0.0):
    return SpatialField(g, t, rng.normal(size=g.n_points) + 1j * rng.normal(size=g.n_points))


def test_grid_invariants():
    g = Grid1D(64 * math.pi, 4096)
    assert g.dx * g.n_points == 2 * g.box_half_length
    assert g.xi.min() == -g.xi.max() - g.dxi  # only the Nyquist mode is unpaired
    with pytest.raises(ValueError):
        Grid1D(10.0, 1000)
    with pytest.raises(ValueError):
        Grid1D(10.0, 8)


def test_zero_transforms_to_zero():
    F = to_spectral(SpatialField(G20, 0.0, np.zeros(G20.n_points)))
    assert not np.any(F.coeffs)
    assert not np.any(to_spatial(F).values)


def test_gaussian_transform():
    g = G20
    F = to_spectral(SpatialField(g, 0.0, np.exp(-g.x ** 2 / 2)))
    assert np.abs(F.coeffs - np.exp(-g.xi ** 2 / 2)).max() < 1e-10


def test_gaussian_transform_against_quadrature():
    from scipy.integrate import quad
    g = G20
    F = to_spectral(SpatialField(g, 0.0, np.exp(-g.x ** 2 / 2) * (1 + 0.3 * g.x)))
    for k in (0, 3, 17):
        xi = g.xi[k]
        re = quad(lambda x: math.exp(-x * x / 2) * (1 + 0.3 * x) * math.cos(x * xi), -30, 30)[0]
        im = quad(lambda x: -math.exp(-x * x / 2) * (1 + 0.3 * x) * math.sin(x * xi), -30, 30)[0]
        assert abs(F.coeffs[k] - (re + 1j * im) / math.sqrt(2 * math.pi)) < 1e-10


def test_single_mode():
    g = G20
    F = to_spectral(SpatialField(g, 0.0, np.exp(1j * g.xi[7] * g.x)))
    mag = np.abs(F.coeffs)
    assert abs(mag[7] - 2 * g.box_half_length / math.sqrt(2 * math.pi)) < 1e-12 * mag[7]
    assert np.delete(mag, 7).max() < 1e-12 * mag[7]
    C = np.zeros(g.n_points, complex)
    C[7] = 2 * g.box_half_length / math.sqrt(2 * math.pi)
    assert np.abs(to_spatial(SpectralField(g, 0.0, C)).values - np.exp(1j * g.xi[7] * g.x)).max() < 1e-12


def test_round_trip():
    rng = np.random.default_rng(1)
    u = random_field(rng, G20)
    back = to_spatial(to_spectral(u))
    assert G20.l2(back.values - u.values) <= 1e-12 * u.l2()
    assert back.time == u.time


def test_nonfinite_rejected_with_index():
    vals = np.zeros(G20.n_points, complex)
    vals[37] = np.nan
    with pytest.raises(FieldError, match="index 37"):
        SpatialField(G20, 0.0, vals)
    with pytest.raises(FieldError):
        SpatialField(G20, 0.0, np.zeros(5))


def test_derivatives():
    g = G20
    e3 = SpatialField(g, 0.0, np.exp(1j * g.xi[3] * g.x))
    d = spatial_derivative(e3, 1)
    assert np.abs(d.values - 1j * g.xi[3] * e3.values).max() < 1e-12
    assert np.abs(spatial_derivative(SpatialField(g, 0.0, np.full(g.n_points, 2.5)), 1).values).max() < 1e-14
    gauss = SpatialField(g, 0.0, np.exp(-g.x ** 2 / 2))
    want = (g.x ** 2 - 1) * np.exp(-g.x ** 2 / 2)
    assert np.abs(spatial_derivative(gauss, 2).values - want).max() < 1e-9
    with pytest.raises(ValueError):
        spatial_derivative(gauss, 4)


def test_odd_derivative_zeroes_nyquist():
    g = Grid1D(10.0, 64)
    nyq = SpatialField(g, 0.0, np.cos(math.pi * np.arange(64)))
    assert np.abs(spatial_derivative(nyq, 1).values).max() < 1e-12
    assert np.abs(spatial_derivative(nyq, 3).values).max() < 1e-12


def test_linear_propagate_basics():
    rng = np.random.default_rng(2)
    u = random_field(rng, G20, 1.0)
    assert linear_propagate(u, 0.0) is u
    w = linear_propagate(u, 2.7)
    assert abs(w.l2() - u.l2()) < 1e-12 * u.l2()
    assert w.time == pytest.approx(3.7)


def test_linear_propagate_gaussian_closed_form():
    # u_t = i u_xx from exp(-x^2/2): variance parameter s = 1 + 2 i t
    g = Grid1D(40.0, 2048)
    u = SpatialField(g, 0.0, np.exp(-g.x ** 2 / 2))
    for t in (0.5, 2.0):
        s = 1 + 2j * t
        exact = s ** -0.5 * np.exp(-g.x ** 2 / (2 * s))
        assert np.abs(linear_propagate(u, t).values - exact).max() < 1e-9
    back = linear_propagate(linear_propagate(u, 2.0), -2.0)
    assert np.abs(back.values - u.values).max() < 1e-12


def test_dealias():
    g = Grid1D(10.0, 256)
    k = g.k
    low = np.where(np.abs(k) <= g.n_points // 3, 1.0 + 0.5j, 0)
    high = np.where(np.abs(k) > g.n_points // 3, 2.0, 0)
    assert np.array_equal(dealias(SpectralField(g, 0, low)).coeffs, low)
    assert not np.any(dealias(SpectralField(g, 0, high)).coeffs)
    F = SpectralField(g, 0, low + high)
    assert dealias(F).l2() <= F.l2()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_parseval(seed):
    rng = np.random.default_rng(seed)
    u = random_field(rng, Grid1D(15.0, 256))
    assert abs(u.l2() - to_spectral(u).l2()) <= 1e-12 * u.l2()


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2 ** 32 - 1))
def test_group_law_and_commutation(a, b, seed):
    rng = np.random.default_rng(seed)
    g = Grid1D(15.0, 256)
    u = random_field(rng, g)
    lhs = linear_propagate(linear_propagate(u, a), b).values
    assert g.l2(lhs - linear_propagate(u, a + b).values) <= 1e-12 * u.l2() * 10
    d1 = spatial_derivative(linear_propagate(u, a), 1).values
    d2 = linear_propagate(spatial_derivative(u, 1), a).values
    assert g.l2(d1 - d2) <= 1e-12 * g.l2(d2) * 10


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    u = random_field(rng, Grid1D(12.5, 64), 3.25)
    blob = snapshot_bytes(u)
    assert len(blob) == 32 + 16 * 64
    assert blob[:4] == b"DNLS"
    back = snapshot_from_bytes(blob)
    assert back.grid == u.grid and back.time == u.time
    assert back.values.tobytes() == u.values.tobytes()
    write_snapshot(tmp_path / "u.dnls", u)
    assert (tmp_path / "u.dnls").read_bytes() == blob
    assert read_snapshot(tmp_path / "u.dnls").values.tobytes() == u.values.tobytes()
    with pytest.raises(FieldError):
        snapshot_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FieldError):
        snapshot_from_bytes(blob[:-1])
