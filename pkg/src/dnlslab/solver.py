"""Time integration of DNLS and of the perturbation equation around an ansatz.

Both equations are stepped with integrating-factor RK4 (Lawson form): the
dispersion ``i u_xx`` is applied exactly and RK4 acts on the nonlinearity in
the rotated frame.  Negative step sizes integrate backwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .grid import Grid1D, SpatialField, atomic_write_text

Provider = Callable[[float], "SpatialField | np.ndarray"]


class NumericalFailure(RuntimeError):
    """Integration stopped; ``field`` holds the last good state."""

    def __init__(self, message: str, field: SpatialField | None = None):
        super().__init__(message)
        self.field = field

    @property
    def last_good_time(self) -> float | None:
        return None if self.field is None else self.field.time


class BoundaryMassExceeded(NumericalFailure):
    """Too much mass reached the outer tenth of the periodic box."""

    def __init__(self, message: str, field: SpatialField, fraction: float):
        super().__init__(message, field)
        self.fraction = fraction


@dataclass(frozen=True)
class SolverConfig:
    dt_max: float = 0.01
    cfl_safety: float = 0.5
    integrator: str = "IFRK4"
    dealias: bool = True
    boundary_mass_tol: float | None = 1e-8
    # step cap grows like dt_rel*|t| once that exceeds dt_max
    dt_rel: float | None = None
    nonlinear: bool = True
    log_every: int = 1

    def __post_init__(self):
        if self.integrator != "IFRK4":
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if self.dt_rel is not None and not self.dt_rel > 0:
            raise ValueError("dt_rel must be positive when given")

    def step_cap(self, t: float) -> float:
        cap = self.dt_max
        if self.dt_rel is not None:
            cap = max(cap, self.dt_rel * abs(t))
        return cap


@dataclass(frozen=True)
class ConservedTriple:
    mass: float
    momentum: float
    energy: float


@dataclass
class RunLog:
    """Per-step diagnostics, serialized as JSON lines."""

    rows: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)

    def write(self, path) -> None:
        atomic_write_text(path, self.to_jsonl())


def conserved(u: SpatialField) -> ConservedTriple:
    """Mass, momentum and energy of ``u``.

    The current is taken as ``j = Im(u conj(u_x))``; with that orientation the
    densities ``j - |u|^4/2`` and ``|u_x|^2 - 3/2 |u|^2 j + |u|^6/2`` are the
    ones conserved by ``u_t = i u_xx - (|u|^2 u)_x``.
    """
    g = u.grid
    w = u.values
    wx = np.fft.ifft(1j * g.xi_odd * np.fft.fft(w))
    rho = np.abs(w) ** 2
    j = np.imag(w * np.conj(wx))
    mass = g.dx * rho.sum()
    momentum = g.dx * (j - 0.5 * rho ** 2).sum()
    energy = g.dx * (np.abs(wx) ** 2 - 1.5 * rho * j + 0.5 * rho ** 3).sum()
    return ConservedTriple(float(mass), float(momentum), float(energy))


def _cubic_flux_hat(g: Grid1D, G: np.ndarray, dealias: bool) -> np.ndarray:
    """Raw FFT of ``-d_x G``, optionally 2/3-dealiased."""
    Gh = np.fft.fft(G)
    if dealias:
        Gh *= g.dealias_mask
    return -1j * g.xi_odd * Gh


def dnls_rhs(u: SpatialField, *, nonlinear: bool = True, dealias: bool = True) -> SpatialField:
    """``u_t = i u_xx - d_x(|u|^2 u)``."""
    g = u.grid
    uh = np.fft.fft(u.values)
    rhs = -1j * g.xi ** 2 * uh
    if nonlinear:
        rhs = rhs + _cubic_flux_hat(g, np.abs(u.values) ** 2 * u.values, dealias)
    return u.replace(np.fft.ifft(rhs))


def _as_values(obj) -> np.ndarray:
    return obj.values if isinstance(obj, SpatialField) else np.asarray(obj, dtype=np.complex128)


class _Recent:
    """Memoize a provider over the last few evaluation times."""

    def __init__(self, fn: Callable[[float], object], size: int = 4):
        self.fn = fn
        self.size = size
        self.cache: dict[float, object] = {}

    def __call__(self, t: float):
        if t not in self.cache:
            if len(self.cache) >= self.size:
                self.cache.pop(next(iter(self.cache)))
            self.cache[t] = self.fn(t)
        return self.cache[t]


def _integrate(grid: Grid1D, t0: float, w0: np.ndarray, targets: Sequence[float],
               nonlin: Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray]],
               cfg: SolverConfig, log: RunLog | None,
               monitor: Callable[[float, np.ndarray], np.ndarray] | None = None):
    """Yield ``(t, values)`` at each target.

    ``nonlin(t, uh)`` returns the raw-FFT nonlinear term and the physical field
    whose amplitude sets the CFL limit and feeds the boundary monitor.
    """
    xi2 = grid.xi ** 2
    max_xi = grid.max_xi
    t = float(t0)
    uh = np.fft.fft(w0)
    expo_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    steps = 0

    def expo(h):
        if h not in expo_cache:
            if len(expo_cache) > 8:
                expo_cache.clear()
            half = np.exp(-0.5j * xi2 * h)
            expo_cache[h] = (half, half * half)
        return expo_cache[h]

    def last_good():
        return SpatialField(grid, t, np.fft.ifft(uh))

    for target in targets:
        target = float(target)
        direction = math.copysign(1.0, target - t) if target != t else 0.0
        while direction and (target - t) * direction > 1e-12 * max(1.0, abs(t)):
            k1, full = nonlin(t, uh)
            if cfg.boundary_mass_tol is not None:
                frac = _outer_fraction(grid, full)
                if frac > cfg.boundary_mass_tol:
                    msg = f"boundary mass fraction {frac:.3e} exceeds tolerance at t={t:.6g}"
                    if log is not None:
                        log.flags.append({"t": t, "boundary_mass": frac})
                    raise BoundaryMassExceeded(msg, last_good(), frac)
            amp2 = float(np.max(np.abs(full) ** 2)) if cfg.nonlinear else 0.0
            h = min(cfg.step_cap(t), cfg.cfl_safety / max(1.0, max_xi * amp2))
            remaining = abs(target - t)
            if remaining <= h * (1 + 1e-9):
                h = remaining
            elif remaining < 2 * h:
                h = remaining / 2
            h *= direction
            E2, E = expo(h)
            th = t + h / 2
            k2, _ = nonlin(th, E2 * (uh + (h / 2) * k1))
            k3, _ = nonlin(th, E2 * uh + (h / 2) * k2)
            k4, _ = nonlin(t + h, E * uh + h * E2 * k3)
            new = E * uh + (h / 6) * (E * k1 + 2 * E2 * (k2 + k3) + k4)
            if not np.isfinite(new).all():
                raise NumericalFailure(f"non-finite state after step from t={t:.6g}", last_good())
            uh = new
            t = target if abs(target - (t + h)) <= 1e-12 * max(1.0, abs(t)) else t + h
            steps += 1
            if log is not None and cfg.log_every and steps % cfg.log_every == 0:
                log.rows.append(_log_row(grid, t, h, np.fft.ifft(uh), monitor))
        yield t, np.fft.ifft(uh)


def _outer_fraction(grid: Grid1D, w: np.ndarray) -> float:
    rho = np.abs(w) ** 2
    total = rho.sum()
    return float(rho[grid.outer_mask()].sum() / total) if total > 0 else 0.0


def _log_row(grid, t, h, w, monitor):
    full = monitor(t, w) if monitor is not None else w
    c = conserved(SpatialField(grid, t, full))
    return {"t": t, "dt": h, "mass": c.mass, "momentum": c.momentum,
            "energy": c.energy, "boundary_mass": _outer_fraction(grid, full)}


def _ordered(t0: float, times: Iterable[float]) -> list[float]:
    times = [float(s) for s in times]
    fwd = all(s >= t0 for s in times)
    bwd = all(s <= t0 for s in times)
    if not (fwd or bwd):
        raise ValueError("snapshot times must all lie on one side of the start time")
    if sorted(times, reverse=bwd) != times:
        raise ValueError("snapshot times must be ordered away from the start time")
    return times


def evolve_snapshots(u: SpatialField, times: Iterable[float], cfg: SolverConfig = SolverConfig(),
                     *, log: RunLog | None = None) -> list[SpatialField]:
    """Evolve DNLS from ``u`` and return the state at each of ``times``."""
    g = u.grid
    times = _ordered(u.time, times)

    def nonlin(t, uh):
        w = np.fft.ifft(uh)
        if not cfg.nonlinear:
            return np.zeros_like(uh), w
        return _cubic_flux_hat(g, np.abs(w) ** 2 * w, cfg.dealias), w

    out = [SpatialField(g, t, w) for t, w in _integrate(g, u.time, u.values, times, nonlin, cfg, log)]
    return out


def evolve(u: SpatialField, t_target: float, cfg: SolverConfig = SolverConfig(),
           *, log: RunLog | None = None) -> SpatialField:
    if t_target == u.time:
        return u
    return evolve_snapshots(u, [t_target], cfg, log=log)[-1]


def perturbation_flux(U: np.ndarray, ua: np.ndarray) -> np.ndarray:
    """``G`` with ``N(U, u_app) = -i d_x G``: the cubic terms of ``|U+u|^2(U+u) - |u|^2 u``."""
    Uc = np.conj(U)
    return U * U * Uc + U * U * np.conj(ua) + 2 * U * Uc * ua + 2 * U * np.abs(ua) ** 2 + Uc * ua * ua


def perturbation_snapshots(U: SpatialField, u_app_provider: Provider, f_provider: Provider,
                           times: Iterable[float], cfg: SolverConfig = SolverConfig(),
                           *, log: RunLog | None = None) -> list[SpatialField]:
    """Integrate ``i U_t = -U_xx + N(U, u_app) - f`` and sample at ``times``."""
    g = U.grid
    times = _ordered(U.time, times)
    ua_at = _Recent(lambda s: _as_values(u_app_provider(s)))
    fh_at = _Recent(lambda s: np.fft.fft(_as_values(f_provider(s))))

    def nonlin(t, uh):
        w = np.fft.ifft(uh)
        ua = ua_at(t)
        rhs = 1j * fh_at(t)
        if cfg.nonlinear:
            rhs = rhs + _cubic_flux_hat(g, perturbation_flux(w, ua), cfg.dealias)
        return rhs, w + ua

    def full_field(t, w):
        return w + ua_at(t)

    return [SpatialField(g, t, w) for t, w in
            _integrate(g, U.time, U.values, times, nonlin, cfg, log, monitor=full_field)]


def evolve_perturbation(U: SpatialField, u_app_provider: Provider, f_provider: Provider,
                        t_target: float, cfg: SolverConfig = SolverConfig(),
                        *, log: RunLog | None = None) -> SpatialField:
    if t_target == U.time:
        return U
    return perturbation_snapshots(U, u_app_provider, f_provider, [t_target], cfg, log=log)[-1]


def _check_theta(theta: float) -> None:
    if not 0 < theta < math.pi / 2:
        raise ValueError(f"soliton parameter theta must lie in (0, pi/2), got {theta}")


def soliton_profile(theta: float, x: np.ndarray) -> np.ndarray:
    """``q0(x) = sqrt(2 sin 2θ) cosh^3(x-iθ)/|cosh(x-iθ)|^4 e^{-ix cot 2θ}``.

    Uses ``c^3/|c|^4 = e^{3i arg c}/|c|`` with both factors written in
    overflow-free form.
    """
    _check_theta(theta)
    x = np.asarray(x, dtype=np.float64)
    s, c = math.sin(theta), math.cos(theta)
    e = np.exp(-2.0 * np.abs(x))
    inv_abs = 2.0 * np.sqrt(e) / np.sqrt((1.0 + e) ** 2 - 4.0 * s * s * e)
    arg = np.arctan2(-np.tanh(x) * s, c)
    cot2 = math.cos(2 * theta) / math.sin(2 * theta)
    return math.sqrt(2.0 * math.sin(2 * theta)) * inv_abs * np.exp(3j * arg - 1j * x * cot2)


def soliton(theta: float, t: float, grid: Grid1D) -> SpatialField:
    """``q(t,x) = q0(x + 2 cot(2θ) t) e^{i t csc^2(2θ)}``."""
    _check_theta(theta)
    s2 = math.sin(2 * theta)
    cot2 = math.cos(2 * theta) / s2
    vals = soliton_profile(theta, grid.x + 2.0 * cot2 * t) * np.exp(1j * t / s2 ** 2)
    return SpatialField(grid, t, vals)


def config_dict(cfg: SolverConfig) -> dict:
    return asdict(cfg)
