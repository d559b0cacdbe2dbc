"""Wave packets along rays ``x = v t``, the profile gamma, and the vector field L."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .grid import Grid1D, SpatialField, VelocityProfile, atomic_write_text

__all__ = [
    "Window", "GAUSSIAN", "BUMP", "VelocityProfile", "wave_packet", "gamma", "gamma_tilde",
    "gamma_on_grid", "apply_L", "klainerman_sobolev_ratio", "difference_bounds",
    "DifferenceReport", "FOURIER_FACTOR", "velocity_grid", "profile_csv", "write_profile",
    "read_profile",
]

# hat u(t, xi) ~ FOURIER_FACTOR * exp(-i t xi^2) * gamma(t, 2 xi) for the
# unitary transform and packets normalized by int chi = 1
FOURIER_FACTOR = math.sqrt(2.0) * np.exp(0.25j * math.pi)


@dataclass(frozen=True)
class Window:
    """Real window ``chi`` with unit integral.

    ``half_width`` bounds the support used in quadrature; outside it the
    window is below double precision (Gaussian) or exactly zero (bump).
    """

    name: str
    chi: Callable[[np.ndarray], np.ndarray]
    dchi: Callable[[np.ndarray], np.ndarray]
    half_width: float

    def integral(self) -> float:
        return _integral(self.name)

    def check(self, tol: float = 1e-10) -> None:
        err = abs(self.integral() - 1.0)
        if err > tol:
            raise ValueError(f"window {self.name!r} integrates to 1 only within {err:.2e}")

    def square_integral(self) -> float:
        w = self.half_width
        return integrate.quad(lambda y: float(self.chi(np.array(y))) ** 2, -w, w,
                              epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def _gauss(y):
    return np.exp(-0.5 * np.asarray(y, dtype=np.float64) ** 2) / math.sqrt(2 * math.pi)


def _dgauss(y):
    y = np.asarray(y, dtype=np.float64)
    return -y * _gauss(y)


def _raw_bump(y):
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1
    out[inside] = np.exp(-1.0 / (1.0 - y[inside] ** 2))
    return out


_BUMP_MASS = integrate.quad(lambda y: float(_raw_bump(np.array(y))), -1, 1,
                            epsabs=1e-14, epsrel=1e-12)[0]


def _bump_chi(y):
    return _raw_bump(y) / _BUMP_MASS


def _bump_dchi(y):
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1
    yi = y[inside]
    out[inside] = -2 * yi / (1 - yi ** 2) ** 2 * np.exp(-1.0 / (1.0 - yi ** 2)) / _BUMP_MASS
    return out


GAUSSIAN = Window("gaussian", _gauss, _dgauss, 12.0)
BUMP = Window("bump", _bump_chi, _bump_dchi, 1.0)
_WINDOWS = {w.name: w for w in (GAUSSIAN, BUMP)}


@lru_cache(maxsize=None)
def _integral(name: str) -> float:
    w = _WINDOWS[name]
    return integrate.quad(lambda y: float(w.chi(np.array(y))), -w.half_width, w.half_width,
                          epsabs=1e-13, epsrel=1e-12, limit=200)[0]


def window_by_name(name: str) -> Window:
    try:
        return _WINDOWS[name]
    except KeyError:
        raise ValueError(f"unknown window {name!r}; choose from {sorted(_WINDOWS)}") from None


def velocity_grid(v_max: float, n: int) -> np.ndarray:
    """``n`` uniform samples of ``[-v_max, v_max)``."""
    return -v_max + (2.0 * v_max / n) * np.arange(n)


def wave_packet(grid: Grid1D, t: float, v: float, window: Window = GAUSSIAN,
                derivative: bool = False) -> SpatialField:
    """``exp(i x^2/4t) chi((x - v t)/sqrt t)`` (or ``chi'`` when ``derivative``)."""
    if t <= 0:
        raise ValueError("wave packets need t > 0")
    x = grid.x
    prof = (window.dchi if derivative else window.chi)((x - v * t) / math.sqrt(t))
    return SpatialField(grid, t, np.exp(1j * x * x / (4 * t)) * prof)


def _check_resolved(u: SpatialField) -> None:
    if u.time <= 0 or math.sqrt(u.time) < 4 * u.grid.dx:
        raise ValueError(
            f"packet width sqrt(t)={math.sqrt(max(u.time, 0)):.3g} is under-resolved "
            f"by dx={u.grid.dx:.3g}; need sqrt(t) >= 4 dx")


def _packet_quadrature(u: SpatialField, v: np.ndarray, profile, half_width: float,
                       chunk_elems: int = 4_000_000) -> np.ndarray:
    g = u.grid
    t = u.time
    st = math.sqrt(t)
    n, dx, L = g.n_points, g.dx, g.box_half_length
    radius = int(math.ceil(half_width * st / dx)) + 1
    offsets = np.arange(-radius, radius + 2)
    out = np.empty(v.size, dtype=np.complex128)
    step = max(1, chunk_elems // offsets.size)
    vals = u.values
    for lo in range(0, v.size, step):
        vv = v[lo:lo + step]
        base = np.floor((vv * t + L) / dx).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        # positions are left unwrapped so phase and window see the true distance
        xs = -L + idx * dx
        w = profile((xs - (vv * t)[:, None]) / st) * np.exp(-1j * xs * xs / (4 * t))
        out[lo:lo + step] = dx * np.einsum("ij,ij->i", vals[idx % n], w)
    return out


def gamma(u: SpatialField, v, window: Window = GAUSSIAN) -> VelocityProfile:
    """``gamma(t, v) = int u(t,x) conj(Phi_v(t,x)) dx`` by direct quadrature."""
    _check_resolved(u)
    v = np.asarray(v, dtype=np.float64)
    return VelocityProfile(v, _packet_quadrature(u, v, window.chi, window.half_width), u.time)


def gamma_tilde(u: SpatialField, v, window: Window = GAUSSIAN) -> VelocityProfile:
    """As :func:`gamma` with ``chi`` replaced by ``chi'``."""
    _check_resolved(u)
    v = np.asarray(v, dtype=np.float64)
    return VelocityProfile(v, _packet_quadrature(u, v, window.dchi, window.half_width), u.time)


def gamma_on_grid(u: SpatialField, window: Window = GAUSSIAN, derivative: bool = False) -> VelocityProfile:
    """FFT fast path: gamma at every ray ``v = x_m / t`` through a grid point."""
    _check_resolved(u)
    g = u.grid
    t = u.time
    d = g.k * g.dx
    kern = (window.dchi if derivative else window.chi)(-d / math.sqrt(t))
    weighted = u.values * np.exp(-1j * g.x * g.x / (4 * t))
    vals = g.dx * np.fft.ifft(np.fft.fft(weighted) * np.fft.fft(kern))
    return VelocityProfile(g.x / t, vals, t)


def apply_L(u: SpatialField) -> SpatialField:
    """``L u = x u + 2 i t u_x``."""
    if u.time <= 0:
        raise ValueError("L = x + 2it d_x needs t > 0")
    g = u.grid
    ux = np.fft.ifft(1j * g.xi_odd * np.fft.fft(u.values))
    return u.replace(g.x * u.values + 2j * u.time * ux)


def klainerman_sobolev_ratio(u: SpatialField) -> float:
    """``||u||_inf^2 t / (||u||_2 ||Lu||_2)``; at most 1/2 in the continuum."""
    if not np.any(u.values):
        raise ValueError("ratio undefined for the zero field")
    return u.linf() ** 2 * u.time / (u.l2() * apply_L(u).l2())


@dataclass(frozen=True)
class DifferenceReport:
    time: float
    spatial_linf: float
    spatial_l2: float
    fourier_linf: float
    fourier_l2: float
    Lu_l2: float

    @property
    def comparisons(self) -> dict:
        t, a = self.time, self.Lu_l2
        return {"spatial_linf": t ** -0.75 * a, "spatial_l2": t ** -1.0 * a,
                "fourier_linf": t ** -0.25 * a, "fourier_l2": t ** -0.5 * a}

    @property
    def ratios(self) -> dict:
        comp = self.comparisons
        return {k: (getattr(self, k) / c if c > 0 else 0.0) for k, c in comp.items()}


def difference_bounds(u: SpatialField, window: Window = GAUSSIAN) -> DifferenceReport:
    """Residuals of ``u`` against its wave-packet profile in x and in xi.

    The spatial residual is sampled on the rays through grid points; the
    Fourier residual compares ``hat u`` with ``FOURIER_FACTOR e^{-it xi^2} gamma(2 xi)``
    for frequencies whose rays ``v = 2 xi`` stay inside the box.
    """
    g = u.grid
    t = u.time
    prof = gamma_on_grid(u, window)
    res_x = u.values - t ** -0.5 * np.exp(1j * g.x * g.x / (4 * t)) * prof.values
    dv = g.dx / t
    spatial_linf = float(np.abs(res_x).max())
    spatial_l2 = math.sqrt(dv * float(np.vdot(res_x, res_x).real))

    uh = g.fft(u.values)
    xi = g.xi
    keep = np.abs(2 * xi) < 0.9 * g.box_half_length / t
    spline_re = CubicSpline(prof.v, prof.values.real)
    spline_im = CubicSpline(prof.v, prof.values.imag)
    gx = spline_re(2 * xi[keep]) + 1j * spline_im(2 * xi[keep])
    res_xi = uh.copy()
    res_xi[keep] -= FOURIER_FACTOR * np.exp(-1j * t * xi[keep] ** 2) * gx
    fourier_linf = float(np.abs(res_xi).max())
    fourier_l2 = math.sqrt(g.dxi * float(np.vdot(res_xi, res_xi).real))
    return DifferenceReport(t, spatial_linf, spatial_l2, fourier_linf, fourier_l2,
                            apply_L(u).l2())


def profile_csv(p: VelocityProfile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["v", "re", "im", "abs", "arg"])
    for v, z in zip(p.v, p.values):
        w.writerow([repr(float(v)), repr(float(z.real)), repr(float(z.imag)),
                    repr(float(abs(z))), repr(float(np.angle(z)))])
    return buf.getvalue()


def profile_filename(t: float) -> str:
    return f"profile_t{t:g}.csv"


def write_profile(directory, p: VelocityProfile, name: str | None = None):
    from pathlib import Path
    path = Path(directory) / (name or profile_filename(p.time))
    atomic_write_text(path, profile_csv(p))
    return path


def read_profile(path, time: float = 0.0) -> VelocityProfile:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    v = np.array([float(r["v"]) for r in rows])
    z = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    return VelocityProfile(v, z, time)
