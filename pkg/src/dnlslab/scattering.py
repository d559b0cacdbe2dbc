"""Forward modified-scattering diagnostics.

Given snapshots of a small solution, these routines extract the asymptotic
datum ``W`` from the profile ``gamma``, measure the remainder ``R`` of the
profile ODE ``i gamma_t = (v/2) t^-1 |gamma|^2 gamma - R``, track the
logarithmic phase, and compare ``u`` with its modified-scattering asymptote.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import SpatialField, VelocityProfile
from .norms import bump
from .wavepacket import FOURIER_FACTOR, GAUSSIAN, Window, gamma

ERR_COLUMNS = ["t", "errx_linf", "errx_l2", "errxi_linf", "errxi_l2",
               "R_linf", "R_l2", "h_linf", "h_l2"]


def phase_corrected(g: VelocityProfile) -> np.ndarray:
    """``gamma e^{+i (v/2) |gamma|^2 log t}``: the per-time candidate for ``W``."""
    return g.values * np.exp(0.5j * g.v * np.abs(g.values) ** 2 * math.log(g.time))


def modified_profile(W: VelocityProfile, t: float) -> VelocityProfile:
    """``gamma* = W e^{-i (v/2) |W|^2 log t}``."""
    vals = W.values * np.exp(-0.5j * W.v * np.abs(W.values) ** 2 * math.log(t))
    return VelocityProfile(W.v, vals, t)


@dataclass(frozen=True)
class Extraction:
    W: VelocityProfile
    spread: VelocityProfile
    converged: bool
    flagged_fraction: float


def _check_series(gammas: Sequence[VelocityProfile], min_len: int = 3) -> None:
    if len(gammas) < min_len:
        raise ValueError(f"need at least {min_len} profiles, got {len(gammas)}")
    times = [g.time for g in gammas]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("profile times must be strictly increasing")
    v0 = gammas[0].v
    if any(g.v.shape != v0.shape or not np.array_equal(g.v, v0) for g in gammas):
        raise ValueError("profiles must share one velocity grid")


def extract_W(gammas: Sequence[VelocityProfile], *, rel_tol: float = 0.05,
              max_flagged: float = 0.05, min_time: float = 16.0) -> Extraction:
    """Phase-corrected profile at the latest time plus its cross-time spread.

    A velocity is flagged when its spread exceeds ``rel_tol * max|W|``; the
    extraction is non-converged when more than ``max_flagged`` of the grid is
    flagged.
    """
    _check_series(gammas)
    if gammas[0].time < min_time:
        raise ValueError(f"extraction uses times >= {min_time}")
    cands = np.array([phase_corrected(g) for g in gammas])
    W = cands[-1]
    spread = np.abs(cands - W).max(axis=0)
    scale = np.abs(W).max()
    flagged = float(np.mean(spread > rel_tol * scale)) if scale > 0 else 0.0
    t_ext = gammas[-1].time
    v = gammas[-1].v
    return Extraction(VelocityProfile(v, W, t_ext), VelocityProfile(v, spread, t_ext),
                      flagged <= max_flagged, flagged)


def unwrapped_phase(gammas: Sequence[VelocityProfile]) -> np.ndarray:
    """``arg gamma`` tracked continuously in time for each velocity."""
    _check_series(gammas, 2)
    return np.unwrap(np.angle(np.array([g.values for g in gammas])), axis=0)


@dataclass(frozen=True)
class PhaseDrift:
    times: np.ndarray
    v: np.ndarray
    theta: np.ndarray            # arg gamma + (v/2)|gamma|^2 log t, shape (n_t, n_v)
    theta_slope: np.ndarray      # d theta / d log t per v
    arg_slope: np.ndarray        # d arg gamma / d log t per v
    predicted: np.ndarray        # -(v/2)|gamma|^2 at the last time
    region: np.ndarray           # |gamma| >= max|gamma| / 2
    flat: bool
    sign_ok: bool
    worst_ratio: float

    def profile(self) -> VelocityProfile:
        return VelocityProfile(self.v, self.theta_slope, float(self.times[-1]))


def _log_slope(logt: np.ndarray, y: np.ndarray) -> np.ndarray:
    lt = logt - logt.mean()
    return (lt[:, None] * (y - y.mean(axis=0))).sum(axis=0) / (lt ** 2).sum()


def phase_drift(gammas: Sequence[VelocityProfile], t_min: float = 128.0,
                t_max: float = 1024.0, flat_tol: float = 0.05) -> PhaseDrift:
    """Least-squares drift of the corrected phase against ``log t``.

    Flatness asks ``|d theta/d log t| <= flat_tol (v/2)|gamma|^2`` on the
    high-amplitude region; the sign check asks ``d arg gamma/d log t`` to
    share the sign of ``-(v/2)|gamma|^2`` there.
    """
    _check_series(gammas, 2)
    times = np.array([g.time for g in gammas])
    arg = unwrapped_phase(gammas)
    amp2 = np.abs(np.array([g.values for g in gammas])) ** 2
    v = gammas[0].v
    theta = arg + 0.5 * v * amp2 * np.log(times)[:, None]
    sel = (times >= t_min * (1 - 1e-12)) & (times <= t_max * (1 + 1e-12))
    if sel.sum() < 2:
        raise ValueError("phase drift window holds fewer than two snapshots")
    logt = np.log(times[sel])
    theta_slope = _log_slope(logt, theta[sel])
    arg_slope = _log_slope(logt, arg[sel])
    last = np.abs(gammas[int(np.flatnonzero(sel)[-1])].values)
    predicted = -0.5 * v * last ** 2
    region = last >= 0.5 * last.max() if last.max() > 0 else np.zeros_like(last, bool)
    bound = flat_tol * np.abs(predicted)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(region, np.abs(theta_slope) / np.abs(predicted), 0.0)
    flat = bool(np.all(np.abs(theta_slope[region]) <= bound[region]))
    sign_ok = bool(np.all(np.sign(arg_slope[region]) == np.sign(predicted[region])))
    worst = float(np.nanmax(np.where(np.isfinite(ratio), ratio, np.inf))) if region.any() else 0.0
    return PhaseDrift(times, v, theta, theta_slope, arg_slope, predicted, region,
                      flat, sign_ok, worst)


@dataclass(frozen=True)
class RemainderRow:
    t: float
    R_linf: float
    R_l2: float
    fd_error_l2: float
    flagged: bool


def _centered(times: np.ndarray, vals: np.ndarray, k: int, step: int) -> np.ndarray:
    """Three-point derivative at ``times[k]`` from neighbours ``k +- step``."""
    t0, t1, t2 = times[k - step], times[k], times[k + step]
    f0, f1, f2 = vals[k - step], vals[k], vals[k + step]
    h0, h1 = t1 - t0, t2 - t1
    return (-h1 / (h0 * (h0 + h1))) * f0 + ((h1 - h0) / (h0 * h1)) * f1 + (h0 / (h1 * (h0 + h1))) * f2


def remainder_profiles(gammas: Sequence[VelocityProfile]) -> tuple[list[VelocityProfile], list[RemainderRow]]:
    """``R = (v/2) t^-1 |gamma|^2 gamma - i gamma_t`` at interior snapshots.

    ``gamma_t`` uses the three-point formula on the neighbouring snapshots.
    Its error is estimated by comparing with the same formula on neighbours
    two steps away (second order, so the difference over three approximates
    the narrow stencil's error); rows without that wider stencil reuse the
    nearest available estimate.
    """
    _check_series(gammas)
    times = np.array([g.time for g in gammas])
    vals = np.array([g.values for g in gammas])
    v = gammas[0].v
    dv = gammas[0].dv
    n = len(gammas)
    profiles, rows, errs = [], [], {}
    for k in range(1, n - 1):
        gt = _centered(times, vals, k, 1)
        if 2 <= k <= n - 3:
            errs[k] = np.abs(_centered(times, vals, k, 2) - gt) / 3.0
        R = 0.5 * v / times[k] * np.abs(vals[k]) ** 2 * vals[k] - 1j * gt
        profiles.append(VelocityProfile(v, R, float(times[k])))
    keys = sorted(errs)
    for k, R in zip(range(1, n - 1), profiles):
        r_l2 = R.l2()
        if keys:
            near = min(keys, key=lambda j: abs(j - k))
            e = errs[near]
            fd = math.sqrt(dv * float((e ** 2).sum()))
        else:
            fd = float("nan")
        rows.append(RemainderRow(R.time, R.linf(), r_l2, fd, bool(fd > 0.1 * r_l2)))
    return profiles, rows


def remainder_R(snapshots: Sequence[SpatialField], v, window: Window = GAUSSIAN) -> list[RemainderRow]:
    if any(s.time < 16 for s in snapshots):
        raise ValueError("remainder diagnostics use snapshots at t >= 16")
    return remainder_profiles([gamma(s, v, window) for s in snapshots])[1]


def _interp(W: VelocityProfile, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cubic interpolation of ``W``; zero outside its grid.  Returns values and in-range mask."""
    inside = (pts >= W.v[0]) & (pts <= W.v[-1])
    out = np.zeros(pts.shape, dtype=np.complex128)
    if inside.any():
        re = CubicSpline(W.v, W.values.real)(pts[inside])
        im = CubicSpline(W.v, W.values.imag)(pts[inside])
        out[inside] = re + 1j * im
    return out, inside


def asymptotic_field(W: VelocityProfile, u_like: SpatialField) -> tuple[np.ndarray, float]:
    """``t^{-1/2} e^{ix^2/4t} W(x/t) e^{-i (x/2t)|W(x/t)|^2 log t}`` on the grid of ``u_like``."""
    g, t = u_like.grid, u_like.time
    x = g.x
    Wx, inside = _interp(W, x / t)
    vals = t ** -0.5 * np.exp(1j * x * x / (4 * t)) * Wx * np.exp(-0.5j * (x / t) * np.abs(Wx) ** 2 * math.log(t))
    rho = np.abs(u_like.values) ** 2
    tot = rho.sum()
    outside = float(rho[~inside].sum() / tot) if tot > 0 else 0.0
    return vals, outside


@dataclass(frozen=True)
class ErrRow:
    t: float
    errx_linf: float
    errx_l2: float
    errxi_linf: float
    errxi_l2: float
    extrapolated_mass: float


def scattering_errors(u: SpatialField, W: VelocityProfile) -> ErrRow:
    """Norms of ``u - u_asymp`` in x and of ``hat u`` minus its asymptote in xi."""
    if u.time < 16:
        raise ValueError("scattering errors are measured at t >= 16")
    g, t = u.grid, u.time
    ua, outside = asymptotic_field(W, u)
    ex = u.values - ua
    xi = g.xi
    Wxi, _ = _interp(W, 2 * xi)
    asym = FOURIER_FACTOR * np.exp(-1j * t * xi ** 2) * Wxi * np.exp(-1j * xi * np.abs(Wxi) ** 2 * math.log(t))
    exi = g.fft(u.values) - asym
    return ErrRow(t, float(np.abs(ex).max()), g.l2(ex), float(np.abs(exi).max()),
                  math.sqrt(g.dxi * float(np.vdot(exi, exi).real)), outside)


def h_norms(g: VelocityProfile, W: VelocityProfile) -> tuple[float, float]:
    """``h = gamma - gamma*`` in L-infinity and L2 over v."""
    h = g.values - modified_profile(W, g.time).values
    return float(np.abs(h).max()), math.sqrt(g.dv * float((np.abs(h) ** 2).sum()))


def err_table_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ERR_COLUMNS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(r[k])) for k in ERR_COLUMNS})
    return buf.getvalue()


# -- regularity probe -------------------------------------------------------

def _sqrt_partition(x: np.ndarray, scales: Sequence[float]) -> list[np.ndarray]:
    """``sqrt(phi(x/s)^2 - phi(2x/s)^2)`` pieces; squares telescope to ``phi(x/s_max)^2``."""
    out = []
    for i, s in enumerate(scales):
        hi = bump(x / s) ** 2
        lo = bump(2 * x / s) ** 2 if i else 0.0
        out.append(np.sqrt(np.clip(hi - lo, 0.0, None)))
    return out


def dyadic_scales(limit: float) -> list[float]:
    scales = [1.0]
    while scales[-1] < limit:
        scales.append(2.0 * scales[-1])
    return scales


@dataclass(frozen=True)
class RegularityReport:
    lambdas: np.ndarray
    radii: np.ndarray
    norms: np.ndarray          # ||P_lambda T_r W||, shape (n_lambda, n_r)
    l2_squared: float          # ||W||^2
    dyadic_sum: float          # sum of squares of all pieces
    slope_lambda: float
    slope_r: float
    slope_product: float       # exponent of (lambda r) envelope

    @property
    def reconstruction_error(self) -> float:
        return abs(self.dyadic_sum - self.l2_squared) / self.l2_squared if self.l2_squared else 0.0


def _dyadic_slope(scales: np.ndarray, vals: np.ndarray, floor: float) -> float:
    keep = vals > floor
    if keep.sum() < 2:
        return float("-inf")
    x, y = np.log(scales[keep]), np.log(vals[keep])
    return float(np.polyfit(x, y, 1)[0])


def regularity_probe(W: VelocityProfile, *, rel_floor: float = 1e-12) -> RegularityReport:
    """Dyadic frequency/space decomposition of ``W``.

    Frequency pieces use the square-root partition of the same bump, so the
    squared norms of all ``P_lambda T_r W`` add up to ``||W||^2``.  Slopes are
    log-log fits of the dyadic norms above ``rel_floor * ||W||``; the slope
    along lambda excludes the base piece ``lambda = 1``, and likewise for r.
    """
    xi = W.xi
    lambdas = np.array(dyadic_scales(np.abs(xi).max()))
    radii = np.array(dyadic_scales(np.abs(W.v).max()))
    freq = _sqrt_partition(xi, lambdas)
    space = _sqrt_partition(W.v, radii)
    norms = np.zeros((lambdas.size, radii.size))
    for j, T in enumerate(space):
        spec = np.fft.fft(T * W.values)
        for i, P in enumerate(freq):
            piece = P * spec
            norms[i, j] = math.sqrt(W.dv / xi.size * float((np.abs(piece) ** 2).sum()))
    total = W.l2()
    floor = rel_floor * total
    by_lambda = np.sqrt((norms ** 2).sum(axis=1))
    by_r = np.sqrt((norms ** 2).sum(axis=0))
    prod = (lambdas[:, None] * radii[None, :])
    mask = (lambdas[:, None] > 1) & (radii[None, :] > 1)
    return RegularityReport(
        lambdas, radii, norms, total ** 2, float((norms ** 2).sum()),
        _dyadic_slope(lambdas[1:], by_lambda[1:], floor),
        _dyadic_slope(radii[1:], by_r[1:], floor),
        _dyadic_slope(prod[mask], norms[mask], floor),
    )
