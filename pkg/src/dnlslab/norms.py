"""Norms, Littlewood-Paley projections, power-law fits and Gronwall envelopes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

import numpy as np

from .grid import SpatialField, VelocityProfile

Field = TypeVar("Field", SpatialField, VelocityProfile)
Bump = Callable[[np.ndarray], np.ndarray]


def _g(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def bump(r) -> np.ndarray:
    """Smooth even cutoff: 1 on ``|r| <= 1``, 0 on ``|r| >= 2``."""
    s = np.abs(np.asarray(r, dtype=np.float64))
    a = _g(2.0 - s)
    b = _g(s - 1.0)
    # a + b >= exp(-2) on the transition band, so the quotient is safe
    out = np.where(s <= 1.0, 1.0, 0.0)
    mid = (s > 1.0) & (s < 2.0)
    out[mid] = a[mid] / (a[mid] + b[mid])
    return out


def bump_derivative(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    s = np.abs(r)
    out = np.zeros_like(s)
    mid = (s > 1.0) & (s < 2.0)
    sm = s[mid]
    a = np.exp(-1.0 / (2.0 - sm))
    b = np.exp(-1.0 / (sm - 1.0))
    out[mid] = -np.sign(r[mid]) * a * b * (1.0 / (2.0 - sm) ** 2 + 1.0 / (sm - 1.0) ** 2) / (a + b) ** 2
    return out


def _spectral_multiply(f: Field, symbol: Callable[[np.ndarray], np.ndarray]) -> Field:
    if isinstance(f, SpatialField):
        xi = f.grid.xi
    elif isinstance(f, VelocityProfile):
        xi = f.xi
    else:
        raise TypeError(f"cannot project a {type(f).__name__}")
    return f.replace(np.fft.ifft(symbol(xi) * np.fft.fft(f.values)))


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise ValueError(f"frequency scale must be positive, got {lam}")


def lp_project_low(f: Field, lam: float, *, cutoff: Bump = bump) -> Field:
    """``P_{<=lam}``: multiply the spectrum by ``cutoff(xi / lam)``."""
    _check_lambda(lam)
    return _spectral_multiply(f, lambda xi: cutoff(xi / lam))


def lp_project_high(f: Field, lam: float, *, cutoff: Bump = bump) -> Field:
    _check_lambda(lam)
    return _spectral_multiply(f, lambda xi: 1.0 - cutoff(xi / lam))


def lp_project_band(f: Field, lam: float, *, cutoff: Bump = bump) -> Field:
    """``P_lam = P_{<=lam} - P_{<=lam/2}``."""
    _check_lambda(lam)
    return _spectral_multiply(f, lambda xi: cutoff(xi / lam) - cutoff(2.0 * xi / lam))


def l2_norm(f) -> float:
    return f.l2()


def linf_norm(f) -> float:
    return f.linf()


def weighted_sobolev_norm(f: SpatialField, s: float, m: float = 0.0) -> float:
    """``|| <x>^m (1 - d_x^2)^{s/2} f ||_{L^2}``."""
    if s < 0 or m < 0:
        raise ValueError("s and m must be nonnegative")
    g = f.grid
    vals = f.values
    if s:
        vals = np.fft.ifft((1.0 + g.xi ** 2) ** (s / 2) * np.fft.fft(vals))
    if m:
        vals = (1.0 + g.x ** 2) ** (m / 2) * vals
    return g.l2(vals)


def sobolev_norm(f: SpatialField, s: float) -> float:
    return weighted_sobolev_norm(f, s, 0.0)


def profile_sobolev_norm(W: VelocityProfile, s: float, weight_power: int = 0) -> float:
    """``|| v^p W ||_{H^s_v}`` on the profile's periodic grid."""
    vals = W.values * W.v ** weight_power if weight_power else W.values
    coeffs = np.fft.fft(vals) * (1.0 + W.xi ** 2) ** (s / 2)
    # Parseval on the velocity grid: dv * sum|f|^2 = dv/n * sum|fft f|^2
    return math.sqrt(W.dv / vals.size * float(np.vdot(coeffs, coeffs).real))


@dataclass(frozen=True)
class NormReport:
    time: float
    l2: float
    linf: float
    h1: float
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {"t": self.time, "l2": self.l2, "linf": self.linf, "h1": self.h1}
        for (s, m), val in self.extra.items():
            out[f"H_{s:g}_{m:g}"] = val
        return out


def norm_report(f: SpatialField, pairs: Sequence[tuple[float, float]] = ()) -> NormReport:
    extra = {(s, m): weighted_sobolev_norm(f, s, m) for s, m in pairs}
    return NormReport(f.time, f.l2(), f.linf(), sobolev_norm(f, 1.0), extra)


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit ``log value = log_constant + exponent * log t``."""

    exponent: float
    log_constant: float
    window: tuple[float, float]
    residual: float
    n_samples: int

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "log_constant": self.log_constant,
                "window": list(self.window), "residual": self.residual,
                "n_samples": self.n_samples}


def fit_rate(ts, values, *, min_samples: int = 8) -> RateFit:
    ts = np.asarray(ts, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if ts.shape != values.shape or ts.ndim != 1:
        raise ValueError("times and values must be 1-d arrays of equal length")
    if ts.size < min_samples:
        raise ValueError(f"rate fit needs at least {min_samples} samples, got {ts.size}")
    if np.any(np.diff(ts) <= 0) or ts[0] <= 0:
        raise ValueError("times must be positive and strictly increasing")
    if np.any(~(values > 0)):
        raise ValueError("rate fit needs strictly positive values")
    lt, lv = np.log(ts), np.log(values)
    A = np.column_stack([lt, np.ones_like(lt)])
    (slope, icpt), *_ = np.linalg.lstsq(A, lv, rcond=None)
    resid = lv - (slope * lt + icpt)
    return RateFit(float(slope), float(icpt), (float(ts[0]), float(ts[-1])),
                   float(np.sqrt(np.mean(resid ** 2))), int(ts.size))


def gronwall_envelope(f0: float, t0: float, C1: float, C2: float, beta: float, ts):
    """Exact solution of the comparison ODE behind the nonlinear Gronwall bound.

    For ``t >= t0`` solves ``f' = C1/(2t) f + C2/2 t^(-1-beta)`` forward.
    For ``t <= t0`` solves ``-f' = C1/(2t) f + C2/2 t^(-1-beta)``, i.e. the
    bound obtained when integrating an energy inequality backwards from ``t0``.
    """
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts <= 0):
        raise ValueError("evaluation times must be positive")
    h = C1 / 2.0
    out = np.empty_like(ts)
    fwd = ts >= t0
    if fwd.any():
        denom = C1 + 2.0 * beta
        if denom == 0:
            raise ValueError("C1 + 2*beta vanishes; perturb beta")
        t = ts[fwd]
        out[fwd] = f0 * (t / t0) ** h + C2 / denom * (t0 ** (-beta - h) * t ** h - t ** -beta)
    if (~fwd).any():
        denom = C1 - 2.0 * beta
        if denom == 0:
            raise ValueError("C1 - 2*beta vanishes; perturb beta")
        t = ts[~fwd]
        out[~fwd] = f0 * (t0 / t) ** h + C2 / denom * (t0 ** (h - beta) * t ** -h - t ** -beta)
    return out
