"""Analytic fringe model with a sinusoidal phase perturbation.

The detection rate density is

    f(y, t) = f0 * (1 + K * cos(k*y + phi0 * cos(omega*t + start_phase)))

with ``k = 2*pi/period`` and ``omega = 2*pi*nu``.  Averaging over time
reduces the visible contrast by ``J_0(phi0)``; the pair correlation keeps
the full fringe period and carries the perturbation as Bessel sidebands:

    g2(u, tau) = 1 + A(tau) * cos(k*u)
    A(tau) = K^2/2 * J_0(phi0)^2 + K^2 * sum_{n>=1} J_n(phi0)^2 cos(n*omega*tau)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bessel import bessel_j, bessel_table

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FringeParameters:
    """Spatial fringe: mean density ``f0`` (events/mm/s), contrast, period (mm)."""

    f0: float
    contrast: float
    period: float

    def __post_init__(self):
        if not (math.isfinite(self.f0) and self.f0 >= 0.0):
            raise ValueError(f"f0 must be finite and >= 0, got {self.f0}")
        if not 0.0 <= self.contrast <= 1.0:
            raise ValueError(f"contrast_K must satisfy 0 <= contrast_K <= 1, got {self.contrast}")
        if not (math.isfinite(self.period) and self.period > 0.0):
            raise ValueError(f"lambda must be > 0, got {self.period}")

    @property
    def k(self) -> float:
        return TWO_PI / self.period


@dataclass(frozen=True)
class PerturbationParameters:
    """Phase oscillation ``phi0 * cos(2*pi*nu*t + start_phase)``."""

    phi0: float = 0.0
    nu: float = 50.0
    start_phase: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.phi0) and self.phi0 >= 0.0):
            raise ValueError(f"phi0 must be finite and >= 0, got {self.phi0}")
        if not (math.isfinite(self.nu) and self.nu > 0.0):
            raise ValueError(f"nu must be > 0, got {self.nu}")
        if not (math.isfinite(self.start_phase) and 0.0 <= self.start_phase < TWO_PI):
            raise ValueError(f"start_phase must lie in [0, 2*pi), got {self.start_phase}")

    @property
    def omega(self) -> float:
        return TWO_PI * self.nu


@dataclass(frozen=True)
class ModelParameters:
    fringe: FringeParameters
    perturbation: PerturbationParameters

    @classmethod
    def create(cls, *, f0=1.0, contrast=0.345, period=2.089, phi0=0.0, nu=50.0,
               start_phase=0.0) -> "ModelParameters":
        return cls(FringeParameters(f0, contrast, period),
                   PerturbationParameters(phi0, nu, start_phase))

    def with_values(self, **changes) -> "ModelParameters":
        """Copy with any of f0, contrast, period, phi0, nu, start_phase replaced."""
        fr = {k: changes.pop(k) for k in ("f0", "contrast", "period") if k in changes}
        pe = {k: changes.pop(k) for k in ("phi0", "nu", "start_phase") if k in changes}
        if changes:
            raise TypeError(f"unknown parameters: {sorted(changes)}")
        return ModelParameters(replace(self.fringe, **fr), replace(self.perturbation, **pe))


@dataclass(frozen=True)
class SeriesOptions:
    """Truncation of the sideband sum.

    ``n_max=None`` picks the smallest order ``>= ceil(phi0) + 12`` whose
    first omitted term satisfies ``J_{n_max+1}(phi0)^2 < tolerance``.
    """

    n_max: int | None = None
    tolerance: float = 1e-14

    def __post_init__(self):
        if self.n_max is not None and self.n_max < 0:
            raise ValueError("n_max must be >= 0")
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be > 0")


class TruncationError(ValueError):
    pass


def series_order(phi0: float, opts: SeriesOptions = SeriesOptions()) -> int:
    """Resolve the truncation order for ``phi0`` and check the tail bound."""
    phi0 = abs(float(phi0))
    floor = math.ceil(phi0)
    if opts.n_max is not None:
        n = opts.n_max
        if n < floor:
            raise TruncationError(f"n_max={n} below ceil(phi0)={floor}")
        if bessel_j(n + 1, phi0) ** 2 >= opts.tolerance:
            raise TruncationError(
                f"n_max={n} leaves tail J_{n + 1}({phi0:g})^2 >= {opts.tolerance:g}")
        return n
    n = floor + 12
    while bessel_j(n + 1, phi0) ** 2 >= opts.tolerance:
        n += 4
    return n


def sideband_weights(phi0: float, opts: SeriesOptions = SeriesOptions()) -> np.ndarray:
    """``J_n(phi0)^2`` for ``n = 0 .. n_max``."""
    n = series_order(phi0, opts)
    return bessel_table(n, phi0) ** 2


def intensity(y, t, p: ModelParameters):
    fr, pe = p.fringe, p.perturbation
    phase = pe.phi0 * np.cos(pe.omega * np.asarray(t) + pe.start_phase)
    return fr.f0 * (1.0 + fr.contrast * np.cos(fr.k * np.asarray(y) + phase))


def time_averaged_pattern(y, p: ModelParameters):
    fr = p.fringe
    j0 = bessel_j(0, p.perturbation.phi0)
    return fr.f0 * (1.0 + fr.contrast * j0 * np.cos(fr.k * np.asarray(y)))


def washed_out_contrast(contrast: float, phi0: float) -> float:
    """Visible contrast of the time-averaged pattern, ``K * |J_0(phi0)|``."""
    return contrast * abs(bessel_j(0, phi0))


def modulation_amplitude(tau, contrast: float, phi0: float, omega: float,
                         opts: SeriesOptions = SeriesOptions()):
    tau = np.asarray(tau, dtype=float)
    w = sideband_weights(phi0, opts)
    n = np.arange(1, w.size).reshape((-1,) + (1,) * tau.ndim)
    harmonics = np.tensordot(w[1:], np.cos(n * omega * tau), axes=1) if w.size > 1 else 0.0
    out = contrast ** 2 * (0.5 * w[0] + harmonics)
    return float(out) if out.ndim == 0 else out


def g2_model(u, tau, p: ModelParameters, opts: SeriesOptions = SeriesOptions()):
    """Closed-form pair correlation; broadcasts ``u`` against ``tau``."""
    fr, pe = p.fringe, p.perturbation
    amp = modulation_amplitude(tau, fr.contrast, pe.phi0, pe.omega, opts)
    return 1.0 + amp * np.cos(fr.k * np.asarray(u))


def g2_surface(u_centers, tau_centers, p: ModelParameters,
               opts: SeriesOptions = SeriesOptions()) -> np.ndarray:
    """Model on a (tau rows, u columns) grid."""
    amp = np.atleast_1d(modulation_amplitude(np.asarray(tau_centers), p.fringe.contrast,
                                             p.perturbation.phi0, p.perturbation.omega, opts))
    return 1.0 + np.outer(amp, np.cos(p.fringe.k * np.asarray(u_centers)))


@dataclass(frozen=True)
class OracleGrid:
    """Quadrature grid for the direct correlation average.

    The averaging window spans ``y_periods`` fringe periods and
    ``t_periods`` perturbation periods, or explicit extents that must be
    integer multiples of them.
    """

    n_y: int = 512
    n_t: int = 512
    y_periods: int = 1
    t_periods: int = 1
    y_extent: float | None = None
    t_extent: float | None = None


def _commensurate(extent: float | None, period: float, count: int, what: str) -> float:
    if extent is None:
        return count * period
    m = extent / period
    if abs(m - round(m)) > 1e-9 * max(1.0, m) or round(m) < 1:
        raise ValueError(f"{what} extent {extent:g} is not an integer multiple of the period {period:g}")
    return float(extent)


def g2_numeric_oracle(u, tau, p: ModelParameters, grid: OracleGrid = OracleGrid()):
    """Correlation computed by brute averaging of ``f(y+u, t+tau) f(y, t)``.

    Uses the periodic rectangle rule on a window commensurate with both
    periods, which is exact for the band-limited fringe and spectrally
    accurate in time.  The y-sum is factorized through the moments of
    ``cos(k y)`` and ``sin(k y)`` on the y-nodes, which is algebraically
    the same double sum.
    """
    fr, pe = p.fringe, p.perturbation
    Y = _commensurate(grid.y_extent, fr.period, grid.y_periods, "y")
    T = _commensurate(grid.t_extent, 1.0 / pe.nu, grid.t_periods, "t")
    y = np.arange(grid.n_y) * (Y / grid.n_y) - Y / 2
    t = np.arange(grid.n_t) * (T / grid.n_t)
    c, s = np.cos(fr.k * y), np.sin(fr.k * y)
    mc, ms = c.mean(), s.mean()
    mcc, mss, mcs = (c * c).mean(), (s * s).mean(), (c * s).mean()

    u_b, tau_b = np.broadcast_arrays(np.asarray(u, float), np.asarray(tau, float))
    K = fr.contrast
    phase0 = pe.phi0 * np.cos(pe.omega * t + pe.start_phase)
    cb, sb = np.cos(phase0), np.sin(phase0)
    num = np.empty(u_b.shape)
    first = np.empty(u_b.shape)
    for idx in np.ndindex(u_b.shape):
        a = fr.k * u_b[idx] + pe.phi0 * np.cos(pe.omega * (t + tau_b[idx]) + pe.start_phase)
        ca, sa = np.cos(a), np.sin(a)
        # cos(ky + a) = c*cos(a) - s*sin(a)
        lin_a = mc * ca - ms * sa
        lin_b = mc * cb - ms * sb
        quad = mcc * ca * cb - mcs * (ca * sb + sa * cb) + mss * sa * sb
        num[idx] = np.mean(1.0 + K * lin_a + K * lin_b + K * K * quad)
        first[idx] = np.mean(1.0 + K * lin_a)
    second = np.mean(1.0 + K * (mc * cb - ms * sb))
    out = num / (first * second)
    return float(out) if out.ndim == 0 else out


def g2_bruteforce(u: float, tau: float, p: ModelParameters, grid: OracleGrid) -> float:
    """Unfactorized double sum; slow, used to check the factorized oracle."""
    fr = p.fringe
    Y = _commensurate(grid.y_extent, fr.period, grid.y_periods, "y")
    T = _commensurate(grid.t_extent, 1.0 / p.perturbation.nu, grid.t_periods, "t")
    y = (np.arange(grid.n_y) * (Y / grid.n_y) - Y / 2)[:, None]
    t = (np.arange(grid.n_t) * (T / grid.n_t))[None, :]
    f1 = intensity(y + u, t + tau, p)
    f2 = intensity(y, t, p)
    return float((f1 * f2).mean() / (f1.mean() * f2.mean()))
