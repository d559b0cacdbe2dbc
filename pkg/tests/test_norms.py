import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad, solve_ivp

from dnlslab.grid import Grid1D, SpatialField, VelocityProfile, linear_propagate
from dnlslab.norms import (
    bump, bump_derivative, fit_rate, gronwall_envelope, lp_project_band, lp_project_high,
    lp_project_low, norm_report, weighted_sobolev_norm,
)

G = Grid1D(32.0, 1024)


def mode(g, k):
    return SpatialField(g, 0.0, np.exp(1j * g.xi[k] * g.x))


def test_bump_shape():
    r = np.linspace(-3, 3, 6001)
    b = bump(r)
    assert np.all(b[np.abs(r) <= 1] == 1.0)
    assert np.all(b[np.abs(r) >= 2] == 0.0)
    assert np.all(np.diff(b[r >= 0]) <= 0)
    assert np.array_equal(b, bump(-r))
    mid = np.linspace(1.01, 1.99, 50)
    fd = (bump(mid + 1e-6) - bump(mid - 1e-6)) / 2e-6
    assert np.allclose(bump_derivative(mid), fd, atol=1e-6)


def test_low_projection_examples():
    lam = 3.0
    k_in = int(np.argmin(np.abs(G.xi - 0.9 * lam)))
    k_out = int(np.argmin(np.abs(G.xi - 2.2 * lam)))
    u = mode(G, k_in)
    assert np.abs(lp_project_low(u, lam).values - u.values).max() < 1e-12
    assert np.abs(lp_project_low(mode(G, k_out), lam).values).max() < 1e-12
    with pytest.raises(ValueError):
        lp_project_low(u, 0.0)
    with pytest.raises(ValueError):
        lp_project_band(u, -1.0)


def test_band_projection_examples():
    rng = np.random.default_rng(0)
    f = SpatialField(G, 0.0, rng.normal(size=G.n_points) + 0j)
    lams = [2.0 ** j for j in range(-2, 5)]
    total = sum(lp_project_band(f, lam).values for lam in lams)
    want = lp_project_low(f, lams[-1]).values - lp_project_low(f, lams[0] / 2).values
    assert np.abs(total - want).max() < 1e-12
    # the band symbol phi(xi/lam) - phi(2 xi/lam) equals one only at |xi| = lam
    k = int(np.argmin(np.abs(G.xi - 4.0)))
    lam = float(G.xi[k])
    u = mode(G, k)
    assert np.abs(lp_project_band(u, lam).values - u.values).max() < 1e-12
    zero = SpatialField(G, 0.0, np.zeros(G.n_points))
    assert not np.any(lp_project_band(zero, lam).values)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 20.0))
def test_low_plus_high_is_identity_and_idempotent(seed, lam):
    rng = np.random.default_rng(seed)
    f = SpatialField(G, 0.0, rng.normal(size=G.n_points) + 1j * rng.normal(size=G.n_points))
    s = lp_project_low(f, lam).values + lp_project_high(f, lam).values
    assert np.abs(s - f.values).max() < 1e-12 * np.abs(f.values).max()
    once = lp_project_low(f, lam)
    twice = lp_project_low(once, lam)
    r = np.abs(G.xi) / lam
    plateau = (r <= 1) | (r >= 2)
    d = np.abs(np.fft.fft(twice.values - once.values))[plateau]
    assert d.max() < 1e-12 * np.abs(np.fft.fft(f.values)).max()


def test_projection_on_velocity_profiles():
    v = np.linspace(-10, 10, 512, endpoint=False)
    W = VelocityProfile(v, np.exp(-v ** 2))
    low = lp_project_low(W, 50.0)
    assert isinstance(low, VelocityProfile)
    assert np.abs(low.values - W.values).max() < 1e-12


def test_weighted_sobolev_examples():
    g = Grid1D(20.0, 512)
    rng = np.random.default_rng(1)
    f = SpatialField(g, 0.0, rng.normal(size=512) + 1j * rng.normal(size=512))
    assert weighted_sobolev_norm(f, 0, 0) == pytest.approx(f.l2(), rel=1e-14)
    e = mode(g, 5)
    assert weighted_sobolev_norm(e, 1, 0) == pytest.approx(math.sqrt(1 + g.xi[5] ** 2) * math.sqrt(40.0), rel=1e-12)
    with pytest.raises(ValueError):
        weighted_sobolev_norm(f, -1, 0)
    with pytest.raises(ValueError):
        weighted_sobolev_norm(f, 0, -0.5)


def test_weighted_sobolev_gaussian_quadrature():
    g = Grid1D(20.0, 1024)
    u = SpatialField(g, 0.0, np.exp(-g.x ** 2 / 2))
    num = weighted_sobolev_norm(u, 1, 1)

    def pf(x):
        # inverse transform of (1 + xi^2)^{1/2} exp(-xi^2/2), an even symbol
        val = quad(lambda k: math.sqrt(1 + k * k) * math.exp(-k * k / 2) * math.cos(k * x), 0, 40,
                   epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        return 2 * val / math.sqrt(2 * math.pi)

    sq = quad(lambda x: (1 + x * x) * pf(x) ** 2, -14, 14, epsabs=1e-12, epsrel=1e-11, limit=200)[0]
    assert num == pytest.approx(math.sqrt(sq), rel=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_sobolev_monotone_in_s(seed):
    rng = np.random.default_rng(seed)
    g = Grid1D(10.0, 256)
    f = SpatialField(g, 0.0, rng.normal(size=256) + 1j * rng.normal(size=256))
    vals = [weighted_sobolev_norm(f, s, 0) for s in (0, 0.5, 1, 1.5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    rep = norm_report(f, [(1.5, 1.0)])
    assert rep.l2 <= rep.h1
    assert set(rep.row()) == {"t", "l2", "linf", "h1", "H_1.5_1"}


def test_fit_rate_examples():
    ts = np.geomspace(1, 100, 10)
    f = fit_rate(ts, 3 * ts ** -0.5)
    assert abs(f.exponent + 0.5) < 1e-12 and f.residual < 1e-12
    assert f.log_constant == pytest.approx(math.log(3))
    assert abs(fit_rate(ts, np.full(10, 2.0)).exponent) < 1e-12
    with pytest.raises(ValueError):
        fit_rate(ts, -ts)
    with pytest.raises(ValueError):
        fit_rate(ts[:5], ts[:5])


def test_fit_rate_linear_schrodinger_decay():
    g = Grid1D(8192.0, 65536)
    u0 = SpatialField(g, 0.0, np.exp(-g.x ** 2))
    ts = np.geomspace(10, 1000, 12)
    amps = [linear_propagate(u0, t).linf() for t in ts]
    assert abs(fit_rate(ts, amps).exponent + 0.5) < 0.03


def test_gronwall_examples():
    ts = np.linspace(2.0, 30.0, 12)
    assert np.allclose(gronwall_envelope(1.3, 2.0, 0.4, 0.0, 0.3, ts), 1.3 * (ts / 2.0) ** 0.2, rtol=1e-14)
    assert np.allclose(gronwall_envelope(0.7, 2.0, 0.0, 0.0, 0.3, ts), 0.7)
    with pytest.raises(ValueError):
        gronwall_envelope(1.0, 1.0, 0.5, 1.0, 0.25, [0.5])   # C1 - 2 beta = 0 backward
    with pytest.raises(ValueError):
        gronwall_envelope(1.0, 0.0, 0.5, 1.0, 0.3, [1.0])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.5, 5.0), st.floats(0.0, 1.5), st.floats(0.0, 3.0),
       st.floats(0.05, 0.6))
def test_gronwall_matches_ode(f0, t0, C1, C2, beta):
    if abs(C1 - 2 * beta) < 1e-3:
        return
    rhs = lambda t, y: C1 / (2 * t) * y + C2 / 2 * t ** (-1 - beta)
    ts = np.linspace(t0, 20 * t0, 15)
    sol = solve_ivp(rhs, (t0, ts[-1]), [f0], t_eval=ts, rtol=1e-12, atol=1e-14, method="DOP853")
    env = gronwall_envelope(f0, t0, C1, C2, beta, ts)
    assert np.all(np.abs(env - sol.y[0]) <= 1e-8 * np.maximum(np.abs(sol.y[0]), 1e-6))
    back = np.linspace(t0, t0 / 10, 15)
    sol = solve_ivp(lambda t, y: -rhs(t, y), (t0, back[-1]), [f0], t_eval=back, rtol=1e-12, atol=1e-14,
                    method="DOP853")
    env = gronwall_envelope(f0, t0, C1, C2, beta, back)
    assert np.all(np.abs(env - sol.y[0]) <= 1e-8 * np.maximum(np.abs(sol.y[0]), 1e-6))
