"""Recover (nu, K, lambda, phi0) from a measured correlation grid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .bessel import bessel_table
from .correlator import CorrelationGrid, GridSpec, amplitude_profile, correlate, crop_whole_periods
from .model import TWO_PI, ModelParameters, SeriesOptions, modulation_amplitude

PARAM_NAMES = ("nu", "contrast", "period", "phi0")


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 200
    convergence_tol: float = 1e-10
    series: SeriesOptions = SeriesOptions()
    weight_mode: str = "poisson"
    n_starts: int = 3
    whole_periods: bool = True  # second pass on a whole-period crop (fit_events)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")
        if self.weight_mode not in ("poisson", "uniform"):
            raise ValueError(f"weight_mode must be 'poisson' or 'uniform', got {self.weight_mode!r}")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")


@dataclass(frozen=True, eq=False)
class FitResult:
    nu: float
    contrast: float
    period: float
    phi0: float
    sigma: dict[str, float]
    residual: np.ndarray
    rms_residual: float
    converged: bool
    iterations: int
    fixed: tuple[str, ...] = ()

    @property
    def values(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def model_parameters(self, f0: float = 1.0, start_phase: float = 0.0) -> ModelParameters:
        return ModelParameters.create(f0=f0, contrast=self.contrast, period=self.period,
                                      phi0=self.phi0, nu=self.nu, start_phase=start_phase)


@dataclass(frozen=True)
class StartPoint:
    """Initial estimate plus identifiability notes.

    ``phi0_branches`` lists alternative phi0 values consistent with the
    observed A_min/A_max ratio, best first.
    """

    params: ModelParameters
    nu_identified: bool
    phi0_branches: tuple[float, ...] = field(default=())


# -- initialization ---------------------------------------------------------

_PHI0_GRID = np.linspace(0.0, TWO_PI, 513)
_N_HARM = 24


def _harmonic_weights(phi0s) -> np.ndarray:
    """Rows ``[J_0^2/2, J_1^2, ..., J_N^2]`` for each phi0."""
    w = bessel_table(_N_HARM, np.asarray(phi0s, float)).T ** 2
    w[:, 0] *= 0.5
    return w


def _profile_shapes(tau, nus, phi0s) -> np.ndarray:
    """Unit-contrast A(tau) for every (nu, phi0): shape (n_nu, n_phi0, n_tau)."""
    w = _harmonic_weights(phi0s)
    n = np.arange(_N_HARM + 1)
    cosines = np.cos(TWO_PI * np.asarray(nus)[:, None, None] * n[None, :, None] * tau[None, None, :])
    return np.einsum("pn,vnt->vpt", w, cosines)


def _ratio_curve() -> np.ndarray:
    theta = np.linspace(0.0, TWO_PI, 1024, endpoint=False)
    w = _harmonic_weights(_PHI0_GRID)
    n = np.arange(_N_HARM + 1)
    shape = w @ np.cos(np.outer(n, theta))
    return shape.min(axis=1) / shape[:, 0]


_RATIO = _ratio_curve()


def _phi0_crossings(ratio: float) -> list[float]:
    r = _RATIO - ratio
    idx = np.flatnonzero(np.sign(r[:-1]) * np.sign(r[1:]) <= 0)
    out = []
    for i in idx:
        a, b = r[i], r[i + 1]
        frac = 0.0 if a == b else a / (a - b)
        out.append(float(_PHI0_GRID[i] + frac * (_PHI0_GRID[i + 1] - _PHI0_GRID[i])))
    if not out:
        out.append(float(_PHI0_GRID[np.argmin(np.abs(r))]))
    return out


def _score(amp, shapes):
    """Least-squares K^2 scale and residual for each candidate shape."""
    num = shapes @ amp
    den = np.einsum("...t,...t->...", shapes, shapes)
    scale = np.clip(num / np.where(den > 0, den, 1.0), 0.0, None)
    resid = np.einsum("...t,...t->...", shapes * scale[..., None] - amp, shapes * scale[..., None] - amp)
    return scale, resid


def _spatial_wavenumber(d: np.ndarray, du: float, u_max: float) -> float:
    n_u = d.shape[1]
    pad = 16 * n_u
    rows = (d - d.mean(axis=1, keepdims=True)) * np.hanning(n_u)
    mag = np.abs(np.fft.rfft(rows, n=pad, axis=1)).mean(axis=0)
    freq = np.fft.rfftfreq(pad, du)
    band = freq >= 1.0 / u_max
    if not band.any() or not np.any(mag[band] > 0):
        raise FitError("no significant spectral peak")
    i = int(np.flatnonzero(band)[np.argmax(mag[band])])
    floor = np.median(mag[band])
    if mag[i] <= 4.0 * floor or mag[i] < 1e-12:
        raise FitError("no significant spectral peak")
    if 0 < i < mag.size - 1:
        a, b, c = np.log(mag[i - 1:i + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
    else:
        shift = 0.0
    return TWO_PI * (freq[i] + shift * (freq[1] - freq[0]))


def _refine_wavenumber(grid: CorrelationGrid, k0: float) -> float:
    du, u_max = grid.spec.delta_u, grid.spec.u_max
    ks = k0 * np.linspace(0.96, 1.04, 161)
    ks = ks[(ks * du < math.pi) & (ks * u_max >= math.pi)]
    u = grid.u_centers
    d = grid.g2 - 1.0
    power = []
    for k in ks:
        basis = np.column_stack([np.cos(k * u), np.sin(k * u)])
        coef, *_ = np.linalg.lstsq(basis, d.T, rcond=None)
        power.append(float((coef ** 2).sum()))
    return float(ks[int(np.argmax(power))])


def initial_guess(grid: CorrelationGrid) -> StartPoint:
    """Start point from the spectra of the grid.

    lambda comes from the strongest spatial frequency of ``g2 - 1``, nu
    from the strongest temporal frequency of the A(tau) profile (checked
    against its subharmonics, since the second sideband can dominate), phi0
    by matching the profile's min/max ratio against the sideband model, and
    K from A at the first lag.
    """
    spec = grid.spec
    d = np.asarray(grid.g2, float) - 1.0
    if not np.all(np.isfinite(d)):
        raise FitError("grid contains non-finite g2 values")
    k = _spatial_wavenumber(d, spec.delta_u, spec.u_max)
    k = _refine_wavenumber(grid, k)
    amp, _ = amplitude_profile(grid, k)
    tau = grid.tau_centers
    contrast = float(np.clip(math.sqrt(max(2.0 * amp[0], 0.0)), 0.0, 1.0))
    meta = grid.meta
    f0 = meta.n_events / (meta.duration * meta.extent) if meta.n_events else 1.0

    nyquist = 0.5 / spec.delta_tau
    nu_min = 0.75 / spec.tau_max
    pad = 16 * tau.size
    spectrum = np.abs(np.fft.rfft((amp - amp.mean()) * np.hanning(tau.size), n=pad)) ** 2
    freq = np.fft.rfftfreq(pad, spec.delta_tau)
    band = (freq >= nu_min) & (freq < nyquist)
    variation = amp.std() / max(abs(amp).max(), 1e-300)
    peak_i = int(np.flatnonzero(band)[np.argmax(spectrum[band])])
    identified = bool(variation > 1e-6 and spectrum[peak_i] > 12.0 * np.median(spectrum[band]))
    if not identified:
        params = ModelParameters.create(f0=f0, contrast=contrast, period=TWO_PI / k,
                                        phi0=0.0, nu=float(freq[peak_i]))
        return StartPoint(params, False, (0.0,))

    ratio = float(amp.min() / amp.max()) if amp.max() > 0 else 1.0
    phis = np.array(sorted(set(np.linspace(0.0, TWO_PI, 257)) | set(_phi0_crossings(ratio))))
    dnu = 0.5 / spec.tau_max
    best = None
    for m in (1, 2, 3, 4):
        nu_c = freq[peak_i] / m
        if nu_c < nu_min:
            break
        # joint refinement of (nu, phi0) on the profile around this candidate
        nus = np.linspace(max(nu_c - dnu, nu_min), min(nu_c + dnu, nyquist), 41)
        scale, resid = _score(amp, _profile_shapes(tau, nus, phis))
        iv, ip = np.unravel_index(np.argmin(resid), resid.shape)
        if best is None or resid[iv, ip] < best[0]:
            best = (resid[iv, ip], float(nus[iv]), float(phis[ip]), scale[iv, ip], resid[iv])
    _, nu, phi0, k2, r = best
    if k2 > 0:
        contrast = float(np.clip(math.sqrt(k2), 0.0, 1.0))

    # alternative branches at the chosen nu, local minima of the profile misfit
    minima = [i for i in range(r.size)
              if r[i] <= r[max(i - 1, 0)] and r[i] <= r[min(i + 1, r.size - 1)]]
    minima.sort(key=lambda i: r[i])
    alt = [float(phis[i]) for i in minima]
    ordered = [phi0] + [a for a in alt if abs(a - phi0) > 0.2]
    params = ModelParameters.create(f0=f0, contrast=contrast, period=TWO_PI / k,
                                    phi0=phi0, nu=nu)
    return StartPoint(params, True, tuple(ordered))


# -- least squares ------------------------------------------------------------

def _bounds(grid: CorrelationGrid):
    spec = grid.spec
    lo = np.array([1e-9, 0.0, 2.0 * spec.delta_u, 0.0])
    hi = np.array([0.5 / spec.delta_tau, 1.0, 4.0 * spec.u_max, TWO_PI])
    return lo, hi


def _surface(theta, tau, u, series):
    nu, K, lam, phi0 = theta
    amp = np.atleast_1d(modulation_amplitude(tau, K, phi0, TWO_PI * nu, series))
    return 1.0 + np.outer(amp, np.cos(TWO_PI / lam * u))


def fit(grid: CorrelationGrid, init: ModelParameters, opts: FitOptions = FitOptions(),
        extra_phi0: tuple[float, ...] = (), fixed: tuple[str, ...] = ()) -> FitResult:
    """Bounded nonlinear least squares of the sideband model to ``grid.g2``.

    Starts from ``init`` and from ``init`` with each phi0 in ``extra_phi0``;
    the lowest cost wins.  Parameters named in ``fixed`` are held at their
    start values and get an infinite sigma.
    """
    unknown = set(fixed) - set(PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown fixed parameters {sorted(unknown)}")
    tau, u = grid.tau_centers, grid.u_centers
    data = np.asarray(grid.g2, float)
    if opts.weight_mode == "poisson":
        sw = np.sqrt(np.asarray(grid.counts, float))
    else:
        sw = np.ones_like(data)
    lo, hi = _bounds(grid)
    x_init = np.array([init.perturbation.nu, init.fringe.contrast, init.fringe.period,
                       init.perturbation.phi0])
    free = np.array([name not in fixed for name in PARAM_NAMES])
    series = opts.series

    def full(xf, base):
        x = base.copy()
        x[free] = xf
        return x

    def run(x0):
        x0 = np.clip(x0, lo, hi)

        def fun(xf):
            return (sw * (data - _surface(full(xf, x0), tau, u, series))).ravel()

        # keep the start strictly inside the box, trf needs it
        span = hi[free] - lo[free]
        xs = np.clip(x0[free], lo[free] + 1e-10 * span, hi[free] - 1e-10 * span)
        res = least_squares(fun, xs, bounds=(lo[free], hi[free]), method="trf",
                            x_scale="jac", diff_step=1e-6, xtol=opts.convergence_tol,
                            ftol=1e-15, gtol=1e-15, max_nfev=opts.max_iterations)
        return res, x0

    starts = [x_init]
    for phi0 in extra_phi0[: max(opts.n_starts - 1, 0)]:
        x = x_init.copy()
        x[3] = phi0
        starts.append(x)
    best = None
    for x0 in starts:
        res, base = run(x0)
        if best is None or res.cost < best[0].cost:
            best = (res, base)
    res, base = best
    theta = full(res.x, base)
    theta = np.clip(theta, lo, hi)

    jac = np.asarray(res.jac, float)
    dof = max(data.size - int(free.sum()), 1)
    s2 = 2.0 * res.cost / dof
    if not np.all(np.isfinite(jac)):
        raise FitError("non-finite Jacobian")
    # a column that vanishes (phi0 on its zero bound enters only as phi0^2)
    # has no linearized uncertainty; report it as infinite
    norms = np.linalg.norm(jac, axis=0)
    live = norms > 1e-8 * max(norms.max(), 1e-300)
    if not live.any():
        raise FitError("singular normal matrix: parameters not identifiable from this grid")
    js = jac[:, live] / norms[live]
    normal = js.T @ js
    if np.linalg.cond(normal) > 1e14:
        raise FitError("singular normal matrix: parameters not identifiable from this grid")
    cov_diag = s2 * np.diag(np.linalg.inv(normal)) / norms[live] ** 2
    free_sigma = np.full(live.size, math.inf)
    free_sigma[live] = np.sqrt(np.clip(cov_diag, 0.0, None))
    sig = iter(free_sigma)
    sigma = {name: (float(next(sig)) if free[i] else math.inf)
             for i, name in enumerate(PARAM_NAMES)}

    residual = data - _surface(theta, tau, u, series)
    return FitResult(
        nu=float(theta[0]), contrast=float(theta[1]), period=float(theta[2]),
        phi0=float(theta[3]), sigma=sigma, residual=residual,
        rms_residual=float(np.sqrt(np.mean(residual ** 2))),
        converged=bool(res.status > 0), iterations=int(res.nfev), fixed=tuple(fixed))


def fit_grid(grid: CorrelationGrid, opts: FitOptions = FitOptions()) -> FitResult:
    """Initial guess followed by the multi-start fit."""
    start = initial_guess(grid)
    fixed = () if start.nu_identified else ("nu",)
    return fit(grid, start.params, opts, extra_phi0=start.phi0_branches[1:], fixed=fixed)


def fit_events(s, spec: GridSpec = GridSpec(), opts: FitOptions = FitOptions()):
    """Correlate and fit an event stream; returns ``(FitResult, CorrelationGrid)``.

    With ``opts.whole_periods`` the stream is then cropped to a whole number
    of fitted fringe periods, correlated again and refitted from the first
    result.  On a detector spanning a fractional number of fringes the
    estimator carries an edge term, even in ``u`` and periodic in ``tau``
    with a profile unlike A(tau), which otherwise biases nu.
    """
    grid = correlate(s, spec)
    result = fit_grid(grid, opts)
    if not opts.whole_periods:
        return result, grid
    try:
        cropped = crop_whole_periods(s, result.period)
        spec.check_window(cropped.window.duration, cropped.window.extent)
    except ValueError:
        return result, grid
    if cropped is s:
        return result, grid
    grid = correlate(cropped, spec)
    return refit(grid, result, opts), grid


def refit(grid: CorrelationGrid, previous: FitResult, opts: FitOptions = FitOptions()) -> FitResult:
    """Fit ``grid`` starting from an earlier result, keeping its fixed parameters."""
    return fit(grid, previous.model_parameters(), opts, fixed=previous.fixed)
