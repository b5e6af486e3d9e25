"""Undo a fitted phase oscillation event by event.

Each event is moved back by ``y_new = y - (lambda/2pi) * phi0 * cos(omega*t + phase)``.
The phase is not visible in g2, so it is found by maximizing the fringe
contrast of the shifted events.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .bessel import bessel_table
from .model import TWO_PI, series_order
from .simulator import EventStream

MIN_EVENTS = 100
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ReconstructionError(RuntimeError):
    pass


def shift_events(s: EventStream, period: float, phi0: float, omega: float,
                 phase: float) -> EventStream:
    """Shift every event back along y; times are untouched.

    Events pushed past the detector edge are kept with their new position;
    the result allows overhang and records the count in its provenance.
    """
    if phi0 < 0:
        raise ValueError("phi0 must be >= 0")
    y_new = s.y - (period / TWO_PI) * phi0 * np.cos(omega * s.t + phase)
    out = EventStream(s.t, y_new, s.window, s.x, dict(s.provenance), allow_overhang=True)
    prov = dict(s.provenance)
    prov.update(shift_period_mm=period, shift_phi0_rad=phi0, shift_omega_rad_s=omega,
                shift_phase_rad=phase, overhang=out.overhang)
    return replace(out, provenance=prov)


def fringe_contrast(s: EventStream, k: float, select=None) -> float:
    """Contrast estimate ``2 |sum exp(i k y)| / N``.

    ``select`` is an optional boolean mask of events to use.  Unbiased for
    events spread over a whole number of fringe periods; pure noise gives
    about ``sqrt(pi / N)``.
    """
    if not k > 0:
        raise ValueError("k must be > 0")
    y = s.y if select is None else s.y[np.asarray(select, bool)]
    if y.size < MIN_EVENTS:
        raise ValueError(f"need at least {MIN_EVENTS} events for a contrast estimate, got {y.size}")
    return float(2.0 * abs(np.exp(1j * k * y).sum()) / y.size)


def whole_period_mask(s: EventStream, period: float) -> np.ndarray:
    """Events inside the widest centered span holding a whole number of periods."""
    m = math.floor(s.window.extent / period)
    if m < 1:
        return np.ones(len(s), bool)
    return np.abs(s.y) <= m * period / 2


@dataclass(frozen=True, eq=False)
class ReconstructionReport:
    restored: EventStream
    best_phase: float  # phase in the shift formula
    contrast_before: float
    contrast_after: float
    phase_scan: np.ndarray  # rows (phase, contrast)
    nu: float  # frequency used for the shift
    period: float
    phi0: float

    @property
    def start_phase(self) -> float:
        """Perturbation phase at t = 0 in the ``cos(k*y + phi0*cos(omega*t + start))`` convention.

        The shift subtracts the oscillation, so it runs half a turn ahead.
        """
        return (self.best_phase + math.pi) % TWO_PI


class _ContrastField:
    """Exact contrast of shifted events as a function of (nu, phase)."""

    def __init__(self, s: EventStream, period: float, phi0: float):
        mask = whole_period_mask(s, period)
        self.t = s.t[mask]
        self.z = np.exp(1j * (TWO_PI / period) * s.y[mask])
        self.phi0 = phi0
        self.mask = mask
        if self.t.size < MIN_EVENTS:
            raise ValueError(f"need at least {MIN_EVENTS} events for a contrast estimate")

    def __call__(self, nu: float, phase: float) -> float:
        w = self.z * np.exp(-1j * self.phi0 * np.cos(TWO_PI * nu * self.t + phase))
        return float(2.0 * abs(w.sum()) / self.t.size)


def _search_frequency(field: _ContrastField, nu0: float, width: float, duration: float):
    """Grid search of (nu, phase) around ``nu0`` via segment phasors.

    Uses ``exp(-i a cos x) = sum_m (-i)^m J_m(a) exp(i m x)``; within short
    time segments the frequency offset only rotates each harmonic by a
    constant, so one pass over the events serves every trial frequency.
    """
    phi0 = field.phi0
    M = max(series_order(phi0) - 6, 2)
    step = 0.1 / (max(phi0, 0.5) * duration)
    n_nu = min(int(2 * width / step) + 1, 4001)
    dnus = np.linspace(-width, width, n_nu)
    seg = max(min(0.3 / (M * math.pi * width), duration / 8), 1e-6)
    n_seg = int(math.ceil(duration / seg))
    sid = np.minimum((field.t / seg).astype(np.int64), n_seg - 1)
    centers = (np.arange(n_seg) + 0.5) * seg

    ms = range(-M, M + 1)
    jm = bessel_table(M, phi0)
    # J_{-m} = (-1)^m J_m
    coef = [(-1j) ** m * jm[abs(m)] * (-1.0) ** abs(min(m, 0)) for m in ms]
    base = np.exp(1j * TWO_PI * nu0 * field.t)
    phases = np.linspace(0.0, TWO_PI, 64, endpoint=False)
    total = np.zeros((n_nu, phases.size), complex)
    for m, c in zip(ms, coef):
        wm = field.z * base ** m
        F = (np.bincount(sid, wm.real, n_seg) + 1j * np.bincount(sid, wm.imag, n_seg))
        G = np.exp(1j * m * TWO_PI * np.outer(dnus, centers)) @ F
        total += c * np.outer(G, np.exp(1j * m * phases))
    power = np.abs(total)
    i, j = np.unravel_index(np.argmax(power), power.shape)
    return nu0 + float(dnus[i]), float(phases[j]), step


def refine_frequency(field: _ContrastField, nu0: float, width: float, duration: float):
    """Best (nu, phase) near ``nu0`` by contrast maximization."""
    nu, phase, step = _search_frequency(field, nu0, width, duration)
    t_mid = duration / 2
    # parametrize by the phase at mid-acquisition, nearly uncorrelated with nu
    x0 = np.array([nu, phase + TWO_PI * nu * t_mid])

    def neg(x):
        return -field(x[0], x[1] - TWO_PI * x[0] * t_mid)

    simplex = np.array([x0, x0 + [step, 0.0], x0 + [0.0, 0.1]])
    res = minimize(neg, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-9, "fatol": 1e-12,
                            "maxiter": 400})
    nu = float(res.x[0])
    return nu, float((res.x[1] - TWO_PI * nu * t_mid) % TWO_PI)


def _golden_max(f, a: float, b: float, tol: float):
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def scan_phase(s: EventStream, period: float, phi0: float, nu: float, n_coarse: int = 64,
               refine_nu: bool = True, nu_sigma: float | None = None) -> ReconstructionReport:
    """Find the shift phase that maximizes the restored fringe contrast.

    Coarse scan over ``n_coarse`` phases, then golden-section refinement to
    below ``2*pi/1024``.  With ``refine_nu`` the shift frequency is first
    re-optimized within ``max(6*nu_sigma, 10/T)`` of ``nu``: over a long
    acquisition even a small frequency error lets the shift drift out of
    step with the oscillation.

    Contrast is measured on the events whose original position lies in the
    widest centered span of whole fringe periods.
    """
    if n_coarse < 16:
        raise ValueError("n_coarse must be >= 16")
    if phi0 < 0 or period <= 0 or nu <= 0:
        raise ValueError("need phi0 >= 0, period > 0, nu > 0")
    field = _ContrastField(s, period, phi0)
    T = s.window.duration
    k = TWO_PI / period

    if refine_nu and phi0 > 0:
        width = 10.0 / T
        if nu_sigma is not None and math.isfinite(nu_sigma):
            width = max(width, 6.0 * nu_sigma)
        width = min(width, 0.5 * nu)
        nu, _ = refine_frequency(field, nu, width, T)

    phases = np.linspace(0.0, TWO_PI, n_coarse, endpoint=False)
    values = np.array([field(nu, ph) for ph in phases])
    floor = 4.0 * math.sqrt(math.pi / field.t.size)
    if values.max() < floor:
        raise ReconstructionError("all-flat scan: no contrast recoverable")

    i = int(np.argmax(values))
    h = TWO_PI / n_coarse
    if values.max() - values.min() > 0:
        best, _ = _golden_max(lambda ph: field(nu, ph), phases[i] - h, phases[i] + h,
                              TWO_PI / 4096)
    else:
        best = phases[i]
    best = float(best % TWO_PI)

    restored = shift_events(s, period, phi0, TWO_PI * nu, best)
    return ReconstructionReport(
        restored=restored,
        best_phase=best,
        contrast_before=fringe_contrast(s, k, field.mask),
        contrast_after=fringe_contrast(restored, k, field.mask),
        phase_scan=np.column_stack([phases, values]),
        nu=nu, period=period, phi0=phi0,
    )
