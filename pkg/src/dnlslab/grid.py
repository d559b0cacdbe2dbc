"""Periodic grid, field containers and the spectral toolkit.

The continuum transform is the unitary one,
``F(xi) = (2 pi)^(-1/2) * int exp(-i x xi) f(x) dx``, approximated on the
box ``[-L, L)`` by the FFT scaled with ``dx / sqrt(2 pi)``.  Spectral
coefficients are stored in numpy FFT order; ``Grid1D.xi`` matches that order.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"DNLS"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIQdd")

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class FieldError(ValueError):
    """Invalid field contents or incompatible grids."""


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise FieldError(f"{what} has a non-finite entry at index {idx}")


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on ``[-box_half_length, box_half_length)``."""

    box_half_length: float
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if n < 16 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 16, got {n}")
        if not (self.box_half_length > 0 and math.isfinite(self.box_half_length)):
            raise ValueError("box_half_length must be positive and finite")

    @property
    def dx(self) -> float:
        return 2.0 * self.box_half_length / self.n_points

    @property
    def dxi(self) -> float:
        return math.pi / self.box_half_length

    @cached_property
    def x(self) -> np.ndarray:
        return -self.box_half_length + self.dx * np.arange(self.n_points)

    @cached_property
    def k(self) -> np.ndarray:
        """Integer mode numbers in FFT order."""
        return np.fft.fftfreq(self.n_points, 1.0 / self.n_points).astype(np.int64)

    @cached_property
    def xi(self) -> np.ndarray:
        return self.dxi * self.k

    @cached_property
    def xi_odd(self) -> np.ndarray:
        """Frequencies with the Nyquist mode zeroed, for odd-order symbols."""
        xi = self.xi.copy()
        xi[self.n_points // 2] = 0.0
        return xi

    @property
    def max_xi(self) -> float:
        return math.pi / self.dx

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return np.abs(self.k) <= self.n_points // 3

    @cached_property
    def _shift(self) -> np.ndarray:
        # exp(i xi_k L) = (-1)^k accounts for the grid starting at -L
        return np.where(self.k % 2 == 0, 1.0, -1.0)

    def fft(self, values: np.ndarray) -> np.ndarray:
        """Continuum-normalized transform of samples (any leading shape)."""
        return np.fft.fft(values, axis=-1) * (self._shift * (self.dx / _SQRT_2PI))

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifft(coeffs * (self._shift * (_SQRT_2PI / self.dx)), axis=-1)

    def l2(self, values: np.ndarray) -> float:
        return math.sqrt(self.dx * float(np.vdot(values, values).real))

    def outer_mask(self, fraction: float = 0.1) -> np.ndarray:
        return np.abs(self.x) > (1.0 - fraction) * self.box_half_length


@dataclass(frozen=True, eq=False)
class SpatialField:
    """Samples of ``u(t, x)`` on a grid."""

    grid: Grid1D
    time: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != (self.grid.n_points,):
            raise FieldError(
                f"expected {self.grid.n_points} samples, got shape {vals.shape}")
        _check_finite(vals, "spatial field")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def replace(self, values=None, time=None) -> SpatialField:
        return SpatialField(self.grid, self.time if time is None else time,
                            self.values if values is None else values)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def l2(self) -> float:
        return self.grid.l2(self.values)

    def linf(self) -> float:
        return float(np.abs(self.values).max())

    def mass(self) -> float:
        return self.l2() ** 2


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients in FFT order, continuum normalization."""

    grid: Grid1D
    time: float
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.grid.n_points,):
            raise FieldError(
                f"expected {self.grid.n_points} coefficients, got shape {c.shape}")
        _check_finite(c, "spectral field")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def xi(self) -> np.ndarray:
        return self.grid.xi

    def l2(self) -> float:
        return math.sqrt(self.grid.dxi * float(np.vdot(self.coeffs, self.coeffs).real))


@dataclass(frozen=True, eq=False)
class VelocityProfile:
    """Samples of a function of the ray velocity ``v`` on a uniform grid."""

    v: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 1 or vals.shape != v.shape:
            raise FieldError("velocity grid and values must be 1-d of equal length")
        if v.size < 2:
            raise FieldError("velocity grid needs at least two samples")
        _check_finite(vals, "velocity profile")
        dv = np.diff(v)
        if not np.allclose(dv, dv[0], rtol=1e-9, atol=0.0) or dv[0] <= 0:
            raise FieldError("velocity grid must be uniform and increasing")
        v.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "values", vals)

    @property
    def dv(self) -> float:
        return float(self.v[1] - self.v[0])

    @property
    def xi(self) -> np.ndarray:
        """Frequencies dual to the velocity grid, FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.v.size, self.dv)

    def replace(self, values=None, time=None) -> VelocityProfile:
        return VelocityProfile(self.v, self.values if values is None else values,
                               self.time if time is None else time)

    def l2(self) -> float:
        return math.sqrt(self.dv * float(np.vdot(self.values, self.values).real))

    def linf(self) -> float:
        return float(np.abs(self.values).max())


def to_spectral(f: SpatialField) -> SpectralField:
    return SpectralField(f.grid, f.time, f.grid.fft(f.values))


def to_spatial(F: SpectralField) -> SpatialField:
    return SpatialField(F.grid, F.time, F.grid.ifft(F.coeffs))


def spatial_derivative(f: SpatialField, order: int = 1) -> SpatialField:
    if order not in (1, 2, 3):
        raise ValueError(f"derivative order must be 1, 2 or 3, got {order}")
    g = f.grid
    xi = g.xi_odd if order % 2 else g.xi
    symbol = (1j * xi) ** order
    return f.replace(np.fft.ifft(symbol * np.fft.fft(f.values)))


def linear_propagate(f: SpatialField, dt: float) -> SpatialField:
    """Exact free flow ``u_hat -> u_hat * exp(-i xi^2 dt)``."""
    if dt == 0:
        return f
    g = f.grid
    vals = np.fft.ifft(np.exp(-1j * g.xi ** 2 * dt) * np.fft.fft(f.values))
    return SpatialField(g, f.time + dt, vals)


def dealias(F: SpectralField) -> SpectralField:
    return SpectralField(F.grid, F.time, np.where(F.grid.dealias_mask, F.coeffs, 0))


def boundary_mass(f: SpatialField, fraction: float = 0.1) -> float:
    """Fraction of the mass sitting in the outer ``fraction`` of the box."""
    w = np.abs(f.values) ** 2
    total = w.sum()
    if total == 0:
        return 0.0
    return float(w[f.grid.outer_mask(fraction)].sum() / total)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def snapshot_bytes(f: SpatialField) -> bytes:
    g = f.grid
    head = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.n_points,
                        g.box_half_length, f.time)
    return head + f.values.astype("<c16").tobytes()


def snapshot_from_bytes(data: bytes) -> SpatialField:
    if len(data) < _HEADER.size:
        raise FieldError("snapshot shorter than its header")
    magic, version, n, box, t = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise FieldError(f"bad snapshot magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise FieldError(f"unsupported snapshot version {version}")
    body = data[_HEADER.size:]
    if len(body) != 16 * n:
        raise FieldError(f"snapshot body holds {len(body)} bytes, expected {16 * n}")
    vals = np.frombuffer(body, dtype="<c16").astype(np.complex128)
    return SpatialField(Grid1D(box, int(n)), t, vals)


def write_snapshot(path, f: SpatialField) -> None:
    atomic_write_bytes(path, snapshot_bytes(f))


def read_snapshot(path) -> SpatialField:
    return snapshot_from_bytes(Path(path).read_bytes())
