"""Backward construction of solutions from a prescribed scattering datum ``W``.

The ansatz is ``u_app = t^{-1/2} e^h Wt(x/t)`` with ``Wt = P_{<=sqrt t} W`` and
``h = i x^2/4t - i (x/2t)|Wt(x/t)|^2 log t``.  Its defect
``f = (i d_t + d_x^2) u_app + i d_x(u_app |u_app|^2)`` is evaluated in closed
form as ``t^{-1/2} e^h F(x/t)``; the correction ``U = u - u_app`` is then
integrated backwards from ``U(T) = 0``.

Functions of ``v`` are stored on a periodic velocity grid and evaluated at the
rays ``v = x/t`` of a spatial grid by a chirp-z transform over the retained
modes, which is exact trigonometric interpolation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import czt

from .grid import Grid1D, SpatialField, VelocityProfile, atomic_write_text
from .norms import bump, bump_derivative, fit_rate, gronwall_envelope, lp_project_low, profile_sobolev_norm, RateFit
from .solver import RunLog, SolverConfig, evolve, perturbation_snapshots
from .wavepacket import apply_L

D_BOOTSTRAP = 10.0


@dataclass(frozen=True, eq=False)
class ScatterDatum:
    """A datum ``W`` with its norm budget ``M`` and regularity margin ``delta``."""

    W: VelocityProfile
    M: float
    delta: float
    norms: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (0 < self.delta < 1):
            raise ValueError("delta must lie in (0, 1)")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if self.M ** 2 > self.delta / 10:
            raise ValueError(f"need M^2 <= delta/10, got M={self.M}, delta={self.delta}")
        norms = datum_norms(self.W, self.delta)
        for name, val in norms.items():
            if val > self.M * (1 + 1e-12):
                raise ValueError(f"datum norm {name} = {val:.6g} exceeds M = {self.M}")
        object.__setattr__(self, "norms", norms)


def datum_norms(W: VelocityProfile, delta: float) -> dict:
    return {
        "W_H(3/2+2delta)": profile_sobolev_norm(W, 1.5 + 2 * delta),
        "vW_H(3/2+delta)": profile_sobolev_norm(W, 1.5 + delta, 1),
        "v2W_H1": profile_sobolev_norm(W, 1.0, 2),
    }


def power_tail_datum(M: float = 0.02, delta: float = 0.1, v_max: float = 16 * math.pi,
                     n: int = 32768, scale: float = 1.0) -> ScatterDatum:
    """``hat W(xi) ∝ (1+xi^2)^{-(1+delta)}``, scaled so the largest budget norm is ``scale*M``.

    The ``H^{3/2+2 delta}`` norm of this family diverges logarithmically in the
    continuum; it is finite on the band-limited velocity grid, which is the
    norm the budget refers to.
    """
    v = -v_max + (2 * v_max / n) * np.arange(n)
    xi = 2 * np.pi * np.fft.fftfreq(n, v[1] - v[0])
    # centre the profile at v = 0 on a grid starting at -v_max
    spec = (1 + xi ** 2) ** (-(1 + delta)) * np.exp(-1j * xi * v[0])
    vals = np.fft.ifft(spec)
    vals = vals.real if np.allclose(vals.imag, 0, atol=1e-14 * np.abs(vals).max()) else vals
    W = VelocityProfile(v, vals)
    c = scale * M / max(datum_norms(W, delta).values())
    return ScatterDatum(W.replace(c * W.values), M, delta)


def zero_datum(M: float = 0.02, delta: float = 0.1, v_max: float = 16 * math.pi,
               n: int = 32768) -> ScatterDatum:
    v = -v_max + (2 * v_max / n) * np.arange(n)
    return ScatterDatum(VelocityProfile(v, np.zeros(n)), M, delta)


def truncate_profile(W: VelocityProfile, t: float) -> VelocityProfile:
    """``P_{<= sqrt t} W``."""
    if t < 1:
        raise ValueError(f"truncation defined for t >= 1, got {t}")
    return lp_project_low(W, math.sqrt(t)).replace(time=t)


class _Modes:
    """Retained Fourier modes of ``W`` and the four derived symbols at time ``t``."""

    def __init__(self, W: VelocityProfile):
        self.W = W
        self.n = W.v.size
        self.v0 = float(W.v[0])
        self.dxi = 2 * math.pi / (self.n * W.dv)
        self.coef = np.fft.fft(W.values) / self.n
        self.v_hi = self.v0 + self.n * W.dv

    def symbols(self, t: float):
        st = math.sqrt(t)
        K = int(math.floor(2 * st / self.dxi))
        if 2 * K + 1 >= self.n:
            raise ValueError("velocity grid too coarse for the truncation scale at this time")
        kk = np.arange(-K, K + 1)
        xi = kk * self.dxi
        c = self.coef[kk % self.n]
        phi = bump(xi / st)
        cp = c * phi
        return xi, np.stack([cp, cp * (1j * xi), cp * (1j * xi) ** 2,
                             c * (-xi / (2 * t ** 1.5)) * bump_derivative(xi / st)])

    def on_velocity_grid(self, t: float) -> np.ndarray:
        """``(A, A', A'', A_t)`` sampled on the datum's own grid, shape (4, n)."""
        xi, rows = self.symbols(t)
        K = (xi.size - 1) // 2
        full = np.zeros((4, self.n), dtype=np.complex128)
        full[:, np.arange(-K, K + 1) % self.n] = rows
        return np.fft.ifft(full, axis=-1) * self.n

    def at_points(self, t: float, v_start: float, dv: float, count: int) -> np.ndarray:
        """``(A, A', A'', A_t)`` at ``v_start + j dv``, shape (4, count)."""
        xi, rows = self.symbols(t)
        K = (xi.size - 1) // 2
        rows = rows * np.exp(1j * xi * (v_start - self.v0))
        out = czt(rows, m=count, w=np.exp(1j * self.dxi * dv), a=1.0, axis=-1)
        j = np.arange(count)
        return out * np.exp(-1j * K * self.dxi * dv * j)


def _bracket(t: float, v: np.ndarray, A, A1, A2, At) -> tuple[np.ndarray, np.ndarray]:
    """Phase ``h`` without its ``i x^2/4t`` part, and the source bracket ``F``."""
    ell = math.log(t)
    Ab = np.conj(A)
    rho = np.abs(A) ** 2
    rho1 = 2 * np.real(Ab * A1)
    rho2 = 2 * np.real(Ab * A2) + 2 * np.abs(A1) ** 2
    q = rho + v * rho1
    rhoA1 = rho1 * A + rho * A1
    t2 = t * t
    f1 = 1j * At + v * ell * A * np.real(Ab * At)
    f2 = -(ell ** 2 / (4 * t2)) * q ** 2 * A
    f3 = -(1j * ell / t2) * rhoA1 - (1j * ell * v / (2 * t2)) * rho2 * A
    f4 = -(1j * ell * v / t2) * rho1 * A1 + A2 / t2
    f5 = (1j / t2) * rhoA1 + (ell / (2 * t2)) * rho ** 2 * A + (v * ell / (2 * t2)) * rho * rho1 * A
    return -0.5j * v * rho * ell, f1 + f2 + f3 + f4 + f5


@dataclass(frozen=True, eq=False)
class AnsatzState:
    t: float
    truncated_profile: VelocityProfile
    u_app: SpatialField
    source_f: SpatialField
    extrapolated_mass: float


class Ansatz:
    """Evaluates ``u_app`` and ``f`` for one datum on one spatial grid, memoized per time."""

    def __init__(self, datum: ScatterDatum, grid: Grid1D, cache_size: int = 6):
        self.datum = datum
        self.grid = grid
        self.modes = _Modes(datum.W)
        self.zero = not np.any(datum.W.values)
        self._cache: dict[float, tuple[np.ndarray, np.ndarray, float]] = {}
        self._cache_size = cache_size

    def _evaluate(self, t: float):
        g = self.grid
        n = g.n_points
        ua = np.zeros(n, dtype=np.complex128)
        fv = np.zeros(n, dtype=np.complex128)
        if self.zero:
            return ua, fv, 0.0
        x = g.x
        v = x / t
        inside = np.flatnonzero((v >= self.modes.v0) & (v < self.modes.v_hi))
        if inside.size:
            j0, j1 = int(inside[0]), int(inside[-1]) + 1
            A, A1, A2, At = self.modes.at_points(t, v[j0], g.dx / t, j1 - j0)
            vs = v[j0:j1]
            hrest, F = _bracket(t, vs, A, A1, A2, At)
            pref = t ** -0.5 * np.exp(hrest)
            ua[j0:j1] = pref * A
            fv[j0:j1] = pref * F
        # mass of W beyond the rays the box can represent
        W = self.datum.W
        w2 = np.abs(W.values) ** 2
        covered = (W.v >= x[0] / t) & (W.v <= x[-1] / t)
        tot = w2.sum()
        extra = float(w2[~covered].sum() / tot) if tot > 0 else 0.0
        return ua, fv, extra

    def at(self, t: float):
        t = float(t)
        if t < 1:
            raise ValueError(f"ansatz evaluated only for t >= 1, got {t}")
        if t not in self._cache:
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[t] = self._evaluate(t)
        return self._cache[t]

    def chirp(self, t: float) -> np.ndarray:
        x = self.grid.x
        return np.exp(1j * x * x / (4 * t))

    def envelope(self, t: float) -> np.ndarray:
        """``u_app e^{-i x^2/4t}``."""
        return self.at(t)[0]

    def u_app(self, t: float) -> np.ndarray:
        return self.chirp(t) * self.at(t)[0]

    def source(self, t: float) -> np.ndarray:
        return self.chirp(t) * self.at(t)[1]

    def state(self, t: float) -> AnsatzState:
        extra = self.at(t)[2]
        return AnsatzState(t, truncate_profile(self.datum.W, t),
                           SpatialField(self.grid, t, self.u_app(t)),
                           SpatialField(self.grid, t, self.source(t)), extra)


def build_u_app(datum: ScatterDatum, t: float, grid: Grid1D) -> AnsatzState:
    return Ansatz(datum, grid).state(t)


def source_f(datum: ScatterDatum, t: float, grid: Grid1D) -> SpatialField:
    return build_u_app(datum, t, grid).source_f


def _direct_envelope(datum: ScatterDatum, t: float, x: np.ndarray) -> np.ndarray:
    """``u_app e^{-i x^2/4t}`` by summing the retained modes of ``W`` directly."""
    W = datum.W
    n = W.v.size
    v0 = float(W.v[0])
    dxi = 2 * math.pi / (n * W.dv)
    st = math.sqrt(t)
    kk = np.arange(-int(2 * st / dxi), int(2 * st / dxi) + 1)
    xi = kk * dxi
    c = np.fft.fft(W.values)[kk % n] / n * bump(xi / st)
    v = x / t
    out = np.zeros(x.size, dtype=np.complex128)
    inside = np.flatnonzero((v >= v0) & (v < v0 + n * W.dv))
    step = max(1, 4_000_000 // xi.size)
    for lo in range(0, inside.size, step):
        idx = inside[lo:lo + step]
        A = np.exp(1j * np.outer(v[idx] - v0, xi)) @ c
        out[idx] = t ** -0.5 * np.exp(-0.5j * v[idx] * np.abs(A) ** 2 * math.log(t)) * A
    return out


def source_f_oracle(datum: ScatterDatum, t: float, grid: Grid1D, h: float | None = None) -> SpatialField:
    """``(i d_t + d_x^2) u_app + i d_x(u_app |u_app|^2)`` by direct differentiation.

    Writing ``u_app = e^{i x^2/4t} w``, the chirp is differentiated exactly,
    ``w`` is summed mode by mode and ``w_t`` taken by a five-point centered
    stencil. A stencil applied to the chirp itself would lose accuracy on
    rays with large ``v``.
    """
    if h is None:
        h = 2e-3 * t
    if t - 2 * h < 1:
        raise ValueError("oracle stencil reaches below t = 1")
    x = grid.x
    wm2, wm1, w, wp1, wp2 = (_direct_envelope(datum, t + k * h, x) for k in (-2, -1, 0, 1, 2))
    wt = (wm2 - 8 * wm1 + 8 * wp1 - wp2) / (12 * h)
    xi = grid.xi
    # w is band-limited far below the 2/3 cut; the mask keeps roundoff at
    # high wavenumbers from being amplified by xi^2
    keep = grid.dealias_mask
    wh = np.fft.fft(w) * keep
    wx = np.fft.ifft(1j * grid.xi_odd * wh)
    wxx = np.fft.ifft(-(xi ** 2) * wh)
    wt_full = wt - 1j * x * x / (4 * t * t) * w
    wxx_full = wxx + 1j * (x / t) * wx + (0.5j / t - x * x / (4 * t * t)) * w
    c = np.abs(w) ** 2 * w
    flux = np.fft.ifft(1j * grid.xi_odd * keep * np.fft.fft(c)) + 0.5j * (x / t) * c
    chirp = np.exp(1j * x * x / (4 * t))
    return SpatialField(grid, t, chirp * (1j * wt_full + wxx_full + 1j * flux))


# -- velocity-side diagnostics ------------------------------------------------

def _vderiv(W: VelocityProfile, vals: np.ndarray) -> np.ndarray:
    return np.fft.ifft(1j * W.xi * np.fft.fft(vals))


def _l2v(W: VelocityProfile, vals: np.ndarray) -> float:
    return math.sqrt(W.dv * float((np.abs(vals) ** 2).sum()))


def velocity_brackets(datum: ScatterDatum, t: float) -> dict:
    """Brackets ``G`` with ``X = t^{-1/2} e^h G(x/t)`` for the ansatz quantities.

    Norms in ``L^2_x`` of such ``X`` equal the ``L^2_v`` norms of ``G``, so the
    diagnostics below are exact at any time, free of spatial box limits.
    """
    W = datum.W
    v = W.v
    modes = _Modes(W)
    A, A1, A2, At = modes.on_velocity_grid(t)
    ell = math.log(t)
    _, F = _bracket(t, v, A, A1, A2, At)
    rho = np.abs(A) ** 2
    q = rho + v * 2 * np.real(np.conj(A) * A1)
    hx = 0.5j * v - 0.5j * ell * q / t      # d_x h; L contributes ell*q + 2i d_v

    def apply_L_bracket(G):
        return ell * q * G + 2j * _vderiv(W, G)

    def dx_bracket(G):
        return hx * G + _vderiv(W, G) / t

    LU = apply_L_bracket(A)
    dxLU = dx_bracket(LU)
    return {"A": A, "A1": A1, "A2": A2, "At": At, "F": F, "LF": apply_L_bracket(F),
            "dxF": dx_bracket(F), "Lu": LU, "dxLu": dxLU, "dx2Lu": dx_bracket(dxLU),
            "ux": dx_bracket(A), "uxx": dx_bracket(dx_bracket(A))}


def ansatz_diagnostics(datum: ScatterDatum, t: float) -> dict:
    """Measured norms of the truncated profile, the ansatz and the source at time ``t``."""
    if t < 1:
        raise ValueError("diagnostics need t >= 1")
    W = datum.W
    b = velocity_brackets(datum, t)
    A, A1, A2, At = b["A"], b["A1"], b["A2"], b["At"]
    A3 = _vderiv(W, A2)
    v = W.v
    diff = W.values - A
    ell = math.log(t)
    asym = W.values * np.exp(-0.5j * v * np.abs(W.values) ** 2 * ell)
    app = A * np.exp(-0.5j * v * np.abs(A) ** 2 * ell)
    At1 = _vderiv(W, At)
    st = t ** -0.5
    return {
        "t": t,
        "W_minus_Wt_l2": _l2v(W, diff), "W_minus_Wt_linf": float(np.abs(diff).max()),
        "Wt_linf": float(np.abs(A).max()), "Wt1_linf": float(np.abs(A1).max()),
        "Wt1_l2": _l2v(W, A1), "Wt2_l2": _l2v(W, A2), "Wt3_l2": _l2v(W, A3),
        "Wt2_linf": float(np.abs(A2).max()), "vWt_linf": float(np.abs(v * A).max()),
        "vWt_prime_l2": _l2v(W, A + v * A1), "vWt1_linf": float(np.abs(v * A1).max()),
        "vWt2_l2": _l2v(W, v * A2), "v2Wt1_l2": _l2v(W, v * v * A1),
        "dtWt_l2": _l2v(W, At), "dtWt1_l2": _l2v(W, At1),
        "dt_vWt_l2": _l2v(W, v * At), "dt_vWt1_l2": _l2v(W, v * At1),
        "uapp_linf": st * float(np.abs(A).max()),
        "uapp_x_linf": st * float(np.abs(b["ux"]).max()), "uapp_x_l2": _l2v(W, b["ux"]),
        "uapp_xx_l2": _l2v(W, b["uxx"]),
        "Luapp_linf": st * float(np.abs(b["Lu"]).max()), "Luapp_l2": _l2v(W, b["Lu"]),
        "dxLuapp_l2": _l2v(W, b["dxLu"]), "dxLuapp_linf": st * float(np.abs(b["dxLu"]).max()),
        "dx2Luapp_l2": _l2v(W, b["dx2Lu"]),
        "uasymp_minus_uapp_l2": _l2v(W, asym - app),
        "uasymp_minus_uapp_linf": st * float(np.abs(asym - app).max()),
        "f_l2": _l2v(W, b["F"]), "dxf_l2": _l2v(W, b["dxF"]), "Lf_l2": _l2v(W, b["LF"]),
    }


# -- backward solve -----------------------------------------------------------

def log_times(t_hi: float, t_lo: float, ratio: float = 2 ** 0.25) -> list[float]:
    """Descending times from ``t_hi`` to ``t_lo`` with consecutive ratio at most ``ratio``."""
    n = max(1, int(math.ceil(math.log(t_hi / t_lo) / math.log(ratio) - 1e-9)))
    return [t_hi * (t_lo / t_hi) ** (k / n) for k in range(n + 1)]


@dataclass
class BackwardSolution:
    T: float
    t_floor: float
    U_traj: list            # SpatialFields, times descending from T to t_floor
    u_floor: SpatialField
    u0: SpatialField
    bootstrap_events: list = field(default_factory=list)
    log: RunLog = field(default_factory=RunLog)

    def U_at(self, t: float) -> SpatialField:
        for U in self.U_traj:
            if abs(U.time - t) <= 1e-9 * t:
                return U
        raise KeyError(f"no snapshot at t={t}")


def bootstrap_bound(datum: ScatterDatum, t, D: float = D_BOOTSTRAP):
    return D * datum.M * np.asarray(t, dtype=np.float64) ** (-0.5 + datum.delta)


def solve_backward(datum: ScatterDatum, T: float, t_floor: float = 1.0,
                   cfg: SolverConfig = SolverConfig(), grid: Grid1D | None = None,
                   snapshot_times: Sequence[float] | None = None,
                   extra_times: Sequence[float] = (), D: float = D_BOOTSTRAP,
                   floor_cfg: SolverConfig | None = None) -> BackwardSolution:
    """``U(T) = 0``; integrate the correction equation to ``t_floor``, then DNLS to 0."""
    if t_floor < 1:
        raise ValueError("t_floor must be >= 1")
    if T < 4 * t_floor:
        raise ValueError("need T >= 4 t_floor")
    grid = grid or Grid1D(6400.0, 65536)
    pinned = [float(s) for s in extra_times] + [float(t_floor)]
    # a grid time within rounding of a pinned one would give a zero-width difference later
    grid_times = [float(s) for s in (snapshot_times or log_times(T, t_floor))
                  if all(abs(s - p) > 1e-9 * p for p in pinned)]
    times = sorted(set(grid_times) | set(pinned), reverse=True)
    if times[0] > T or times[-1] < t_floor:
        raise ValueError("snapshot times must lie in [t_floor, T]")
    ans = Ansatz(datum, grid)
    U_T = SpatialField(grid, T, np.zeros(grid.n_points))
    log = RunLog()
    traj = [U_T] + perturbation_snapshots(U_T, ans.u_app, ans.source,
                                          [s for s in times if s < T], cfg, log=log)
    events = []
    for U in traj:
        bound = float(bootstrap_bound(datum, U.time, D))
        if U.l2() > bound:
            events.append({"t": U.time, "U_l2": U.l2(), "bound": bound})
    u_floor = SpatialField(grid, t_floor, ans.u_app(t_floor) + traj[-1].values)
    u0 = evolve(u_floor, 0.0, floor_cfg or cfg, log=log)
    return BackwardSolution(T, t_floor, traj, u_floor, u0, events, log)


@dataclass
class CauchyReport:
    t_eval: float
    Ts: list
    pairs: list                    # (T_i, T_j, l2 diff)
    consecutive: list              # ||U_{T_{i+1}} - U_{T_i}|| at t_eval
    fit: RateFit | None
    strictly_decreasing: bool

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T_i", "T_j", "t_eval", "l2_diff"])
        for a, b, d in self.pairs:
            w.writerow([repr(float(a)), repr(float(b)), repr(float(self.t_eval)), repr(float(d))])
        return buf.getvalue()


def cauchy_report(solutions: Sequence[BackwardSolution], t_eval: float) -> CauchyReport:
    sols = sorted(solutions, key=lambda s: s.T)
    Ts = [s.T for s in sols]
    if len(Ts) < 3 or any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ValueError("need at least three strictly increasing final times")
    if t_eval > Ts[0] / 2:
        raise ValueError("t_eval must be at most min(T)/2")
    fields = [s.U_at(t_eval) for s in sols]
    g = fields[0].grid
    pairs = [(Ts[i], Ts[j], g.l2(fields[j].values - fields[i].values))
             for i in range(len(Ts)) for j in range(i + 1, len(Ts))]
    cons = [g.l2(fields[i + 1].values - fields[i].values) for i in range(len(Ts) - 1)]
    fit = None
    if all(c > 0 for c in cons):
        fit = fit_rate(Ts[:-1], cons, min_samples=2)
    dec = all(b < a for a, b in zip(cons, cons[1:]))
    return CauchyReport(t_eval, Ts, pairs, cons, fit, dec)


def cauchy_check(datum: ScatterDatum, Ts: Sequence[float], t_eval: float,
                 cfg: SolverConfig = SolverConfig(), grid: Grid1D | None = None,
                 t_floor: float = 1.0) -> tuple[CauchyReport, list]:
    sols = [solve_backward(datum, T, t_floor, cfg, grid, extra_times=[t_eval]) for T in Ts]
    return cauchy_report(sols, t_eval), sols


# -- energy ledger --------------------------------------------------------------

LEDGER_COLUMNS = ["t", "U_l2", "Ux_l2", "LU_l2", "dxLU_l2", "U_linf", "Ux_linf",
                  "bootstrap_env", "U_linf_env", "Ux_linf_env",
                  "U_l2_gronwall", "Ux_l2_gronwall", "LU_l2_gronwall", "dxLU_l2_gronwall"]


@dataclass
class EnergyLedger:
    rows: list
    constants: dict             # per energy: C1, beta, fitted C2
    dominated: dict             # per energy: measured <= envelope * (1 + tol)
    linf_ok: bool
    ux_linf_ok: bool

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(float(r[k])) for k in LEDGER_COLUMNS})
        return buf.getvalue()


def _energies(U: SpatialField) -> dict:
    g = U.grid
    ux = np.fft.ifft(1j * g.xi_odd * np.fft.fft(U.values))
    LU = apply_L(U).values
    dxLU = np.fft.ifft(1j * g.xi_odd * np.fft.fft(LU))
    return {"U_l2": g.l2(U.values), "Ux_l2": g.l2(ux), "LU_l2": g.l2(LU), "dxLU_l2": g.l2(dxLU),
            "U_linf": float(np.abs(U.values).max()), "Ux_linf": float(np.abs(ux).max())}


def _derivative(ts: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return np.gradient(ys, ts, edge_order=2)


def energy_ledger(U_traj: Sequence[SpatialField], datum: ScatterDatum, D: float = D_BOOTSTRAP,
                  tol: float = 0.05) -> EnergyLedger:
    """Energies of the correction along a trajectory against Gronwall envelopes.

    Each energy ``E`` obeys ``|d E^2/dt| <= C1/t E^2 + C2 t^{-1-beta} E`` with
    ``C1`` taken from the bootstrap coefficients and ``C2`` fitted as the
    smallest constant making the inequality hold at every sample.  The
    envelope is the backward comparison solution from the final time, where
    ``U`` vanishes.
    """
    traj = sorted(U_traj, key=lambda U: U.time)
    if len(traj) < 8:
        raise ValueError("energy ledger needs at least 8 snapshots")
    ts = np.array([U.time for U in traj])
    if np.any(np.diff(ts) <= 1e-9 * ts[1:]):
        raise ValueError("energy ledger needs distinct snapshot times")
    en = [_energies(U) for U in traj]
    M, dl = datum.M, datum.delta
    spec = {
        "U_l2": (D * M ** 2, 0.5 - dl),
        "Ux_l2": (D ** 2 * M ** 2, 0.25 - dl),
        "LU_l2": (D ** 2 * M ** 2, 0.25 - dl),
        "dxLU_l2": (M ** 2, 0.25 - dl),
    }
    T = ts[-1]
    constants, envs, dominated = {}, {}, {}
    for key, (C1, beta) in spec.items():
        E = np.array([e[key] for e in en])
        dE2 = np.abs(_derivative(ts, E ** 2))
        excess = np.clip(dE2 - C1 / ts * E ** 2, 0.0, None)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(E > 0, excess / (ts ** (-1 - beta) * E), 0.0)
        C2 = float(np.max(ratio)) if ratio.size else 0.0
        env = gronwall_envelope(0.0, T, C1, C2, beta, ts)
        constants[key] = {"C1": C1, "beta": beta, "C2": C2}
        envs[key] = env
        dominated[key] = bool(np.all(E <= env * (1 + tol) + 1e-300))
    boot = bootstrap_bound(datum, ts, D)
    linf_env = D * M * ts ** (-7 / 8 + dl)
    uxinf_env = D * M * ts ** (-3 / 4 + dl)
    rows = []
    for i, e in enumerate(en):
        r = {"t": float(ts[i]), **e, "bootstrap_env": float(boot[i]),
             "U_linf_env": float(linf_env[i]), "Ux_linf_env": float(uxinf_env[i])}
        for key in spec:
            r[f"{key}_gronwall"] = float(envs[key][i])
        rows.append(r)
    linf_ok = all(r["U_linf"] <= r["U_linf_env"] for r in rows)
    ux_ok = all(r["Ux_linf"] <= r["Ux_linf_env"] for r in rows)
    return EnergyLedger(rows, constants, dominated, linf_ok, ux_ok)


def write_text(path, text: str) -> None:
    atomic_write_text(path, text)
