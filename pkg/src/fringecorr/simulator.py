"""Synthetic time-tagged detection events drawn from the perturbed fringe model."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, NamedTuple

import numpy as np

from .model import ModelParameters

RNG_ALGORITHM = "numpy.random.PCG64"


class EstimatorValidityWarning(UserWarning):
    """Window too small for the large-window approximations to hold well."""


@dataclass(frozen=True)
class AcquisitionWindow:
    duration: float  # s
    extent: float  # mm, detector spans [-extent/2, extent/2]
    rate: float  # events/s

    def __post_init__(self):
        for name in ("duration", "extent", "rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if self.duration * self.rate < 1.0:
            raise ValueError(
                f"duration_T * mean_rate_R = {self.duration * self.rate:g} < 1 expected event")

    @property
    def f0(self) -> float:
        """Density matching the rate, R / Y (events/mm/s)."""
        return self.rate / self.extent

    def check_margins(self, period: float, nu: float | None = None) -> None:
        if self.extent < 10.0 * period:
            warnings.warn(f"extent_Y={self.extent:g} mm is less than 10 fringe periods "
                          f"({period:g} mm)", EstimatorValidityWarning, stacklevel=3)
        if nu is not None and self.duration * nu < 10.0:
            warnings.warn(f"duration_T={self.duration:g} s spans fewer than 10 perturbation "
                          "periods", EstimatorValidityWarning, stacklevel=3)


class EventRecord(NamedTuple):
    t: float
    y: float
    x: float | None = None


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted detection events.

    ``t``, ``y`` and the optional ``x`` are read-only float arrays.  Events
    with ``|y| > extent/2`` are only accepted with ``allow_overhang`` set,
    which is how position-corrected streams mark events moved past the
    detector edge.
    """

    t: np.ndarray
    y: np.ndarray
    window: AcquisitionWindow
    x: np.ndarray | None = None
    provenance: Mapping[str, Any] = field(default_factory=dict)
    allow_overhang: bool = False

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t))
        object.__setattr__(self, "y", _frozen(self.y))
        if self.x is not None:
            object.__setattr__(self, "x", _frozen(self.x))
        t, y = self.t, self.y
        if t.ndim != 1 or y.shape != t.shape or (self.x is not None and self.x.shape != t.shape):
            raise ValueError("t, y (and x) must be 1-D arrays of equal length")
        for name, a in (("t", t), ("y", y), ("x", self.x)):
            if a is not None and not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite {name} value in event stream")
        if t.size:
            bad = np.flatnonzero(np.diff(t) < 0)
            if bad.size:
                raise ValueError(f"events not sorted by time at index {bad[0] + 1}")
            if t[0] < 0.0 or t[-1] >= self.window.duration:
                raise ValueError("event time outside [0, T)")
            if not self.allow_overhang and self.overhang:
                raise ValueError("event position outside [-Y/2, Y/2]")

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self) -> Iterator[EventRecord]:
        xs = self.x if self.x is not None else [None] * len(self)
        for t, y, x in zip(self.t.tolist(), self.y.tolist(), list(xs)):
            yield EventRecord(t, y, x)

    def __getitem__(self, i: int) -> EventRecord:
        return EventRecord(float(self.t[i]), float(self.y[i]),
                           None if self.x is None else float(self.x[i]))

    @property
    def overhang(self) -> int:
        """Number of events outside the detector extent."""
        return int(np.count_nonzero(np.abs(self.y) > self.window.extent / 2))

    @classmethod
    def from_records(cls, records, window: AcquisitionWindow, **kw) -> "EventStream":
        records = list(records)
        t = [r[0] for r in records]
        y = [r[1] for r in records]
        x = None
        if records and len(records[0]) > 2 and records[0][2] is not None:
            x = [r[2] for r in records]
        return cls(np.asarray(t, float), np.asarray(y, float), window, x, **kw)


def simulate(p: ModelParameters, window: AcquisitionWindow, seed: int,
             x_width: float | None = None) -> EventStream:
    """Draw events from the perturbed fringe distribution.

    Arrival times form a homogeneous Poisson process at ``window.rate``
    (Poisson count, then sorted uniform times).  Each position is drawn from
    ``f(y, t_i)`` on the detector by rejection under the flat envelope
    ``f0 * (1 + K)``.
    """
    if not math.isclose(p.fringe.f0, window.f0, rel_tol=1e-9):
        raise ValueError(f"f0={p.fringe.f0:g} inconsistent with R/Y={window.f0:g}")
    window.check_margins(p.fringe.period, p.perturbation.nu if p.perturbation.phi0 > 0 else None)

    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(rng.poisson(window.rate * window.duration))
    t = np.sort(rng.uniform(0.0, window.duration, n))

    K, k = p.fringe.contrast, p.fringe.k
    pe = p.perturbation
    half = window.extent / 2
    phase = pe.phi0 * np.cos(pe.omega * t + pe.start_phase)
    y = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        cand = rng.uniform(-half, half, todo.size)
        level = rng.uniform(0.0, 1.0 + K, todo.size)
        ok = level < 1.0 + K * np.cos(k * cand + phase[todo])
        y[todo[ok]] = cand[ok]
        todo = todo[~ok]

    x = None
    if x_width is not None:
        x = rng.uniform(-x_width / 2, x_width / 2, n)

    prov = {
        "seed": int(seed),
        "rng": RNG_ALGORITHM,
        "contrast": K,
        "period_mm": p.fringe.period,
        "phi0_rad": pe.phi0,
        "nu_hz": pe.nu,
        "start_phase_rad": pe.start_phase,
    }
    return EventStream(t, y, window, x, prov)


def integrated_pattern(s: EventStream, bin_width: float):
    """Histogram of positions over the whole acquisition.

    Returns ``(counts, edges)``; bins tile ``[-Y/2, Y/2]``, the last one may
    be narrower if ``bin_width`` does not divide ``Y``.
    """
    Y = s.window.extent
    if not 0.0 < bin_width <= Y / 8:
        raise ValueError(f"bin_width must be in (0, Y/8], got {bin_width}")
    nb = int(math.ceil(Y / bin_width - 1e-9))
    edges = -Y / 2 + bin_width * np.arange(nb + 1)
    edges[-1] = Y / 2
    lo, hi = edges[0], edges[-1]
    y = np.clip(s.y, lo, hi)  # overhanging events pile into the edge bins
    counts, _ = np.histogram(y, bins=edges)
    return counts, edges


def pattern_contrast(counts, edges, k: float) -> float:
    """Fringe contrast of a histogram by linear least squares.

    Fits ``a + b*cos(k*y) + c*sin(k*y)`` at the bin centers (weighted by
    bin width) and returns ``hypot(b, c) / a``.  Unlike a plain Fourier
    sum this needs no integer number of periods.
    """
    counts = np.asarray(counts, float)
    widths = np.diff(edges)
    yc = 0.5 * (edges[1:] + edges[:-1])
    dens = counts / widths
    basis = np.column_stack([np.ones_like(yc), np.cos(k * yc), np.sin(k * yc)])
    sw = np.sqrt(widths)
    coef, *_ = np.linalg.lstsq(basis * sw[:, None], dens * sw, rcond=None)
    if coef[0] <= 0:
        return 0.0
    return float(np.hypot(coef[1], coef[2]) / coef[0])
