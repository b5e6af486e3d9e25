"""Pair-count estimate of g2(u, tau) from a time-sorted event stream.

Every ordered pair ``(i, j)`` with ``0 <= t_i - t_j < tau_max`` and ``i != j``
is binned by the time lag ``t_i - t_j`` and the signed displacement
``u = y_i - y_j`` (later minus earlier).  Counts are normalized as

    g2 = T*Y / (N^2 dtau du) * N_{u,tau} / ((1 - tau_c/T) (1 - |u_c|/Y))

with ``tau_c``, ``u_c`` the bin centers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .simulator import AcquisitionWindow, EventStream


@dataclass(frozen=True)
class GridSpec:
    tau_max: float = 0.060  # s
    delta_tau: float = 0.5e-3  # s
    u_max: float = 8.0  # mm
    delta_u: float = 0.1  # mm

    def __post_init__(self):
        if not 0.0 < self.delta_tau <= self.tau_max:
            raise ValueError("need 0 < delta_tau <= tau_max")
        if not 0.0 < self.delta_u <= self.u_max:
            raise ValueError("need 0 < delta_u <= u_max")

    def check_window(self, duration: float, extent: float) -> None:
        if not self.tau_max < duration:
            raise ValueError(f"tau_max={self.tau_max:g} s must be < T={duration:g} s")
        if not self.u_max < extent:
            raise ValueError(f"u_max={self.u_max:g} mm must be < Y={extent:g} mm")

    @property
    def n_tau(self) -> int:
        return int(round(self.tau_max / self.delta_tau))

    @property
    def n_u(self) -> int:
        return int(round(2 * self.u_max / self.delta_u))

    @property
    def tau_centers(self) -> np.ndarray:
        return (np.arange(self.n_tau) + 0.5) * self.delta_tau

    @property
    def u_centers(self) -> np.ndarray:
        return -self.u_max + (np.arange(self.n_u) + 0.5) * self.delta_u

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """From ``tau_max,dtau,u_max,du`` (s, s, mm, mm)."""
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"grid needs 4 comma-separated values, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class GridMeta:
    n_events: int
    duration: float
    extent: float


@dataclass(frozen=True, eq=False)
class CorrelationGrid:
    spec: GridSpec
    counts: np.ndarray  # (n_tau, n_u) int64
    g2: np.ndarray  # same shape
    meta: GridMeta

    @property
    def tau_centers(self) -> np.ndarray:
        return self.spec.tau_centers

    @property
    def u_centers(self) -> np.ndarray:
        return self.spec.u_centers


@njit(cache=True)
def _count_pairs(t, y, tau_max, dtau, u_max, du, n_tau, n_u, counts):
    n = t.size
    for j in range(n):
        tj = t[j]
        yj = y[j]
        # ties: earlier index also forms a pair at lag 0
        i = j - 1
        while i >= 0 and t[i] == tj:
            u = y[i] - yj
            if -u_max < u < u_max:
                b = int((u + u_max) / du)
                if b < n_u:
                    counts[0, b] += 1
            i -= 1
        i = j + 1
        while i < n:
            dt = t[i] - tj
            if dt >= tau_max:
                break
            a = int(dt / dtau)
            u = y[i] - yj
            if a < n_tau and -u_max < u < u_max:
                b = int((u + u_max) / du)
                if b < n_u:
                    counts[a, b] += 1
            i += 1


def pair_histogram(s: EventStream, spec: GridSpec) -> np.ndarray:
    """Integer pair counts, rows tau and columns signed u.

    Sliding window over the sorted stream, cost O(N * R * tau_max).
    """
    spec.check_window(s.window.duration, s.window.extent)
    t = np.ascontiguousarray(s.t)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("event stream is not sorted by time")
    counts = np.zeros((spec.n_tau, spec.n_u), dtype=np.int64)
    _count_pairs(t, np.ascontiguousarray(s.y), spec.tau_max, spec.delta_tau,
                 spec.u_max, spec.delta_u, spec.n_tau, spec.n_u, counts)
    return counts


def pair_histogram_naive(t, y, spec: GridSpec) -> np.ndarray:
    """All-pairs double loop with the same binning rules; reference only."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    counts = np.zeros((spec.n_tau, spec.n_u), dtype=np.int64)
    n = t.size
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dt = t[i] - t[j]
            if not 0.0 <= dt < spec.tau_max:
                continue
            u = y[i] - y[j]
            if not -spec.u_max < u < spec.u_max:
                continue
            a = int(dt / spec.delta_tau)
            b = int((u + spec.u_max) / spec.delta_u)
            if a < spec.n_tau and b < spec.n_u:
                counts[a, b] += 1
    return counts


def normalize(counts: np.ndarray, meta: GridMeta, spec: GridSpec) -> np.ndarray:
    counts = np.asarray(counts)
    if meta.n_events == 0:
        return np.zeros(counts.shape)
    T, Y, N = meta.duration, meta.extent, float(meta.n_events)
    tau_c = spec.tau_centers[:, None]
    u_c = spec.u_centers[None, :]
    scale = (T * Y) / (N * N * spec.delta_tau * spec.delta_u)
    return scale * counts / ((1.0 - tau_c / T) * (1.0 - np.abs(u_c) / Y))


def crop_whole_periods(s: EventStream, period: float) -> EventStream:
    """Keep the events inside the widest centered span of whole fringe periods.

    The returned stream lives on that narrower window (rate scaled so the
    density ``R/Y`` is unchanged).  Over a whole number of periods the edge
    terms of the finite-window estimator are odd in ``u`` and drop out of
    the ``cos(k u)`` structure the fit uses.
    """
    if not period > 0:
        raise ValueError("period must be > 0")
    w = s.window
    m = math.floor(w.extent / period + 1e-9)
    if m < 1:
        raise ValueError(f"extent_Y={w.extent:g} mm holds no whole fringe period of {period:g} mm")
    extent = m * period
    if math.isclose(extent, w.extent, rel_tol=1e-12):
        return s
    keep = np.abs(s.y) <= extent / 2
    window = AcquisitionWindow(w.duration, extent, w.rate * extent / w.extent)
    prov = dict(s.provenance, cropped_extent_mm=extent, cropped_periods=m)
    x = s.x[keep] if s.x is not None else None
    return EventStream(s.t[keep], s.y[keep], window, x, prov)


def correlate(s: EventStream, spec: GridSpec = GridSpec()) -> CorrelationGrid:
    counts = pair_histogram(s, spec)
    meta = GridMeta(len(s), s.window.duration, s.window.extent)
    return CorrelationGrid(spec, counts, normalize(counts, meta, spec), meta)


@dataclass(frozen=True, eq=False)
class NeighborHistogram:
    dx_edges: np.ndarray
    dy_edges: np.ndarray
    counts: np.ndarray  # (n_dx, n_dy)
    corrected_profile: np.ndarray  # Δy profile / (1 - |Δy_c|/Y)

    @property
    def dy_centers(self) -> np.ndarray:
        return 0.5 * (self.dy_edges[1:] + self.dy_edges[:-1])


def neighbor_histogram(s: EventStream, dy_edges=None, dx_edges=None) -> NeighborHistogram:
    """Displacements between each event and its next neighbour in time.

    Defaults: Δy bins of 0.1 mm over ``(-Y, Y)``; a single Δx bin when the
    stream has no x coordinate.  Bins always cover every pair so the total
    equals ``N - 1``.
    """
    if len(s) < 2:
        raise ValueError("neighbor histogram needs at least 2 events")
    Y = s.window.extent
    if dy_edges is None:
        nb = int(round(2 * Y / 0.1))
        dy_edges = np.linspace(-Y, Y, nb + 1)
    dy_edges = np.asarray(dy_edges, float)
    dy = np.diff(s.y)
    dx = np.diff(s.x) if s.x is not None else np.zeros_like(dy)
    if dx_edges is None:
        span = max(float(np.abs(dx).max()), 1e-9) * (1 + 1e-9)
        dx_edges = np.array([-span, span]) if s.x is None else np.linspace(-span, span, 101)
    dx_edges = np.asarray(dx_edges, float)
    # clip into the outer bins so no pair is dropped
    dyc = np.clip(dy, dy_edges[0], np.nextafter(dy_edges[-1], -np.inf))
    dxc = np.clip(dx, dx_edges[0], np.nextafter(dx_edges[-1], -np.inf))
    counts, _, _ = np.histogram2d(dxc, dyc, bins=(dx_edges, dy_edges))
    counts = counts.astype(np.int64)
    centers = 0.5 * (dy_edges[1:] + dy_edges[:-1])
    corr = 1.0 - np.abs(centers) / Y
    profile = np.where(corr > 0, counts.sum(axis=0) / np.where(corr > 0, corr, 1.0), 0.0)
    return NeighborHistogram(dx_edges, dy_edges, counts, profile)


def amplitude_profile(grid: CorrelationGrid, k: float):
    """Per-row projection of ``g2 - 1`` onto ``cos(k u)`` and ``sin(k u)``.

    Returns ``(in_phase, quadrature)`` arrays over the tau rows; the
    in-phase part estimates ``A(tau)``.
    """
    du, u_max = grid.spec.delta_u, grid.spec.u_max
    if not (k > 0 and k * du < math.pi and 2 * u_max * k >= 2 * math.pi):
        raise ValueError(f"k={k:g} rad/mm outside the grid's resolvable range "
                         f"[{math.pi / u_max:g}, {math.pi / du:g})")
    u = grid.u_centers
    basis = np.column_stack([np.cos(k * u), np.sin(k * u)])
    coef, *_ = np.linalg.lstsq(basis, (grid.g2 - 1.0).T, rcond=None)
    return coef[0], coef[1]
