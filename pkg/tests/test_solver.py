import math

import numpy as np
import pytest

from dnlslab.grid import Grid1D, SpatialField, spatial_derivative
from dnlslab.norms import sobolev_norm
from dnlslab.solver import (
    BoundaryMassExceeded, NumericalFailure, RunLog, SolverConfig, conserved, dnls_rhs, evolve,
    evolve_perturbation, evolve_snapshots, perturbation_flux, soliton, soliton_profile,
)

DESK = Grid1D(64 * math.pi, 4096)


def gaussian(g, eps=0.05, t=0.0):
    return SpatialField(g, t, eps * np.exp(-g.x ** 2))


def test_rhs_zero_and_linear_part():
    g = Grid1D(20.0, 512)
    assert not np.any(dnls_rhs(SpatialField(g, 0.0, np.zeros(512))).values)
    u = gaussian(g, 1e-3)
    lin = dnls_rhs(u, nonlinear=False).values
    assert np.abs(lin - 1j * spatial_derivative(u, 2).values).max() < 1e-12


def test_rhs_plane_wave():
    g = Grid1D(20.0, 512)
    k, a = 9, 0.3 - 0.2j
    xi0 = g.xi[k]
    e = np.exp(1j * xi0 * g.x)
    got = dnls_rhs(SpatialField(g, 0.0, a * e)).values
    want = (-1j * xi0 ** 2 * a - 1j * xi0 * a * abs(a) ** 2) * e
    assert np.abs(got - want).max() < 1e-12


def test_step_control():
    cfg = SolverConfig(dt_max=0.05, dt_rel=0.01)
    assert cfg.step_cap(1.0) == 0.05
    assert cfg.step_cap(-100.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SolverConfig(cfl_safety=0.0)
    with pytest.raises(ValueError):
        SolverConfig(integrator="RK45")
    g = Grid1D(20.0, 512)
    log = RunLog()
    evolve(gaussian(g, 1.0), 0.2, SolverConfig(dt_max=0.05), log=log)
    # the first step sees max|u|^2 = 1; later steps see a dispersed field
    assert log.rows[0]["dt"] == pytest.approx(0.5 / g.max_xi, rel=1e-12)
    assert all(0 < r["dt"] <= 0.05 for r in log.rows)
    assert {"t", "dt", "mass", "momentum", "energy", "boundary_mass"} <= set(log.rows[0])


def test_conserved_examples():
    g = Grid1D(20.0, 512)
    z = conserved(SpatialField(g, 0.0, np.zeros(512)))
    assert (z.mass, z.momentum, z.energy) == (0.0, 0.0, 0.0)
    u = gaussian(g, 0.7)
    c = conserved(u)
    assert c.momentum == pytest.approx(-0.5 * g.dx * float((np.abs(u.values) ** 4).sum()), rel=1e-12)
    assert c.mass == pytest.approx(0.49 * math.sqrt(math.pi / 2), rel=1e-12)


def test_identity_when_target_is_start():
    u = gaussian(Grid1D(20.0, 256), 0.1, 2.0)
    assert evolve(u, 2.0) is u


def test_conservation_small_gaussian():
    g = Grid1D(2048.0, 16384)
    cfg = SolverConfig(dt_max=0.01, dt_rel=0.01)
    u1 = evolve(gaussian(g), 1.0, cfg)
    snaps = evolve_snapshots(u1, [10.0, 50.0, 100.0], cfg)
    c0 = conserved(u1)
    for s in snaps:
        c = conserved(s)
        assert abs(c.mass - c0.mass) <= 1e-8 * c0.mass
        assert abs(c.momentum - c0.momentum) <= 1e-7 * abs(c0.momentum)
        assert abs(c.energy - c0.energy) <= 1e-7 * abs(c0.energy)


def test_soliton_closed_form_samples():
    q0 = soliton(math.pi / 8, 0.0, DESK)
    q1 = soliton(math.pi / 8, 1.0, DESK)
    th = math.pi / 8
    shift = 2 * math.cos(2 * th) / math.sin(2 * th)
    want = soliton_profile(th, DESK.x + shift) * np.exp(1j / math.sin(2 * th) ** 2)
    assert np.abs(q1.values - want).max() < 1e-12
    assert q0.l2() > 0
    for bad in (0.0, math.pi / 2, -1.0):
        with pytest.raises(ValueError):
            soliton(bad, 0.0, DESK)


@pytest.mark.parametrize("theta", [math.pi / 16, math.pi / 8, math.pi / 4])
def test_soliton_mass_and_uncertainty(theta):
    q = soliton(theta, 0.0, DESK)
    assert q.l2() ** 2 == pytest.approx(8 * theta, rel=1e-6)
    xq = q.replace(DESK.x * q.values)
    assert sobolev_norm(xq, 1) * q.l2() >= 1


def test_soliton_evolution_tracks_closed_form():
    th = math.pi / 8
    times = [1.0, 2.5, 5.0]
    snaps = evolve_snapshots(soliton(th, 0.0, DESK), times, SolverConfig(dt_max=0.01))
    for s in snaps:
        assert DESK.l2(s.values - soliton(th, s.time, DESK).values) <= 1e-4


def _run(u, t, dt):
    return evolve(u, t, SolverConfig(dt_max=dt, cfl_safety=1.0))


def test_fourth_order_self_convergence():
    g = Grid1D(20.0, 256)
    u = SpatialField(g, 0.0, 0.5 * np.exp(-g.x ** 2 + 0.5j * g.x))
    ref = _run(u, 1.0, 0.1 / 16).values
    e1 = g.l2(_run(u, 1.0, 0.1).values - ref)
    e2 = g.l2(_run(u, 1.0, 0.05).values - ref)
    assert e1 / e2 >= 8


def test_backward_forward_round_trip():
    g = Grid1D(1024.0, 8192)
    cfg = SolverConfig(dt_max=0.01)
    u = evolve(gaussian(g), 1.0, cfg)
    back = evolve(evolve(u, 11.0, cfg), 1.0, cfg)
    assert back.time == 1.0
    assert g.l2(back.values - u.values) <= 1e-7


def test_perturbation_zero_stays_zero():
    g = Grid1D(20.0, 256)
    ua = 0.3 * np.exp(-g.x ** 2)
    U = evolve_perturbation(SpatialField(g, 0.0, np.zeros(256)), lambda t: ua,
                            lambda t: np.zeros(256), 1.0)
    assert not np.any(U.values)


def test_perturbation_without_ansatz_is_dnls():
    g = Grid1D(20.0, 512)
    u = SpatialField(g, 0.0, 0.4 * np.exp(-g.x ** 2 + 1j * g.x))
    zero = np.zeros(512)
    cfg = SolverConfig(dt_max=0.01)
    a = evolve_perturbation(u, lambda t: zero, lambda t: zero, 1.0, cfg)
    b = evolve(u, 1.0, cfg)
    assert np.abs(a.values - b.values).max() <= 1e-10


def test_perturbation_manufactured_solution():
    g = Grid1D(20.0, 512)
    x = g.x
    a, b, om, c = 0.3, 0.5, 0.7, 0.2
    prof = np.exp(-x ** 2 + 1j * b * x)
    dprof = (-2 * x + 1j * b) * prof
    ddprof = ((-2 * x + 1j * b) ** 2 - 2) * prof
    ua = 0.2 * np.exp(-(x - 1) ** 2) * np.exp(0.3j * x)
    uax = (-2 * (x - 1) + 0.3j) * ua

    def V(t):
        return a * (1 + c * t) * np.exp(1j * om * t) * prof

    def f(t):
        amp = a * (1 + c * t) * np.exp(1j * om * t)
        v, vx, vxx = amp * prof, amp * dprof, amp * ddprof
        vt = a * (c + 1j * om * (1 + c * t)) * np.exp(1j * om * t) * prof
        vb, vbx, uab, uabx = np.conj(v), np.conj(vx), np.conj(ua), np.conj(uax)
        # chain rule through G(V, conj V, u_app, conj u_app)
        Gx = ((2 * v * vb + 2 * v * uab + 2 * vb * ua + 2 * ua * uab) * vx
              + (v * v + 2 * v * ua + ua * ua) * vbx
              + (2 * v * vb + 2 * v * uab + 2 * vb * ua) * uax
              + (v * v + 2 * v * ua) * uabx)
        # (i d_t + d_x^2) V = N(V, u_app) - f with N = -i d_x G
        return -1j * Gx - 1j * vt - vxx

    # the flux helper agrees with the expansion used above
    v0 = V(0.3)
    G = perturbation_flux(v0, ua)
    want = (np.abs(v0 + ua) ** 2 * (v0 + ua) - np.abs(ua) ** 2 * ua)
    assert np.abs(G - want).max() < 1e-14
    U = evolve_perturbation(SpatialField(g, 0.0, V(0.0)), lambda t: ua, f, 1.0,
                            SolverConfig(dt_max=0.005))
    assert g.l2(U.values - V(1.0)) <= 1e-6


def test_nonfinite_source_aborts_with_last_good():
    g = Grid1D(20.0, 256)
    zero = np.zeros(256)

    def bad_f(t):
        return np.full(256, np.nan) if t > 0.05 else zero

    with pytest.raises(NumericalFailure) as info:
        evolve_perturbation(SpatialField(g, 0.0, zero), lambda t: zero, bad_f, 1.0,
                            SolverConfig(dt_max=0.01))
    assert 0.0 < info.value.last_good_time < 1.0
    assert np.all(np.isfinite(info.value.field.values))


def test_boundary_monitor_raises():
    g = Grid1D(20.0, 512)
    u = SpatialField(g, 0.0, 0.05 * np.exp(-(g.x / 6) ** 2))
    with pytest.raises(BoundaryMassExceeded) as info:
        evolve(u, 50.0, SolverConfig(dt_max=0.05))
    assert info.value.fraction > 1e-8
    assert info.value.field.time < 50.0
