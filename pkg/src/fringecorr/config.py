"""Line-based ``section.key=value`` run configuration.

Every key carries its unit.  Angles accept ``pi`` multiples (``0.802pi``).
Unknown keys and invariant violations are reported with the line number.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .correlator import GridSpec
from .fitter import FitOptions
from .model import ModelParameters, SeriesOptions
from .simulator import AcquisitionWindow


class ConfigError(ValueError):
    pass


_PI_RE = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*pi$")


def _number(text: str) -> float:
    m = _PI_RE.match(text.strip())
    if m:
        return (float(m.group(1)) if m.group(1) else 1.0) * math.pi
    return float(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive(v):
    return v > 0


# key -> (parser, check, invariant text)
KEYS = {
    "model.contrast_k": (_number, lambda v: 0 <= v <= 1, "0 <= contrast_K <= 1"),
    "model.lambda_mm": (_number, _positive, "lambda > 0"),
    "model.phi0_rad": (_number, lambda v: v >= 0, "phi0 >= 0"),
    "model.nu_hz": (_number, _positive, "nu > 0"),
    "model.start_phase_rad": (_number, lambda v: 0 <= v < 2 * math.pi, "0 <= start_phase < 2*pi"),
    "window.duration_s": (_number, _positive, "duration_T > 0"),
    "window.extent_mm": (_number, _positive, "extent_Y > 0"),
    "window.rate_hz": (_number, _positive, "mean_rate_R > 0"),
    "window.x_width_mm": (_number, _positive, "x width > 0"),
    "grid.tau_max_s": (_number, _positive, "tau_max > 0"),
    "grid.delta_tau_s": (_number, _positive, "delta_tau > 0"),
    "grid.u_max_mm": (_number, _positive, "u_max > 0"),
    "grid.delta_u_mm": (_number, _positive, "delta_u > 0"),
    "fit.max_iterations": (int, lambda v: v >= 1, "max_iterations >= 1"),
    "fit.convergence_tol": (_number, _positive, "convergence_tol > 0"),
    "fit.weight_mode": (str, lambda v: v in ("poisson", "uniform"), "weight_mode in {poisson, uniform}"),
    "fit.n_starts": (int, lambda v: v >= 1, "n_starts >= 1"),
    "fit.series_tolerance": (_number, _positive, "series tolerance > 0"),
    "fit.whole_periods": (_bool, lambda v: True, ""),
    "reconstruct.n_coarse": (int, lambda v: v >= 16, "n_coarse >= 16"),
    "reconstruct.refine_nu": (_bool, lambda v: True, ""),
    "reconstruct.use_truth": (_bool, lambda v: True, ""),
    "pattern.bin_width_mm": (_number, _positive, "bin_width > 0"),
    "seed": (int, lambda v: v >= 0, "seed >= 0"),
    "output_dir": (str, lambda v: bool(v), "output_dir non-empty"),
    "format": (str, lambda v: v in ("csv", "bin"), "format in {csv, bin}"),
    "heatmap": (_bool, lambda v: True, ""),
}


@dataclass(frozen=True)
class PipelineConfig:
    model: ModelParameters
    window: AcquisitionWindow
    grid: GridSpec = GridSpec()
    fit: FitOptions = FitOptions()
    seed: int = 0
    output_dir: Path = Path("run")
    x_width: float | None = None
    n_coarse: int = 64
    refine_nu: bool = True
    use_truth: bool = False
    bin_width: float = 0.1
    event_format: str = "csv"
    heatmap: bool = False
    values: dict = field(default_factory=dict, compare=False)

    def echo(self) -> dict:
        """Flat key=value view of the effective configuration."""
        m, w, g, f = self.model, self.window, self.grid, self.fit
        out = {
            "model.contrast_k": m.fringe.contrast, "model.lambda_mm": m.fringe.period,
            "model.phi0_rad": m.perturbation.phi0, "model.nu_hz": m.perturbation.nu,
            "model.start_phase_rad": m.perturbation.start_phase,
            "window.duration_s": w.duration, "window.extent_mm": w.extent, "window.rate_hz": w.rate,
            "grid.tau_max_s": g.tau_max, "grid.delta_tau_s": g.delta_tau,
            "grid.u_max_mm": g.u_max, "grid.delta_u_mm": g.delta_u,
            "fit.max_iterations": f.max_iterations, "fit.convergence_tol": f.convergence_tol,
            "fit.weight_mode": f.weight_mode, "fit.n_starts": f.n_starts,
            "fit.series_tolerance": f.series.tolerance, "fit.whole_periods": f.whole_periods,
            "reconstruct.n_coarse": self.n_coarse, "reconstruct.refine_nu": self.refine_nu,
            "reconstruct.use_truth": self.use_truth, "pattern.bin_width_mm": self.bin_width,
            "seed": self.seed, "output_dir": str(self.output_dir), "format": self.event_format,
            "heatmap": self.heatmap,
        }
        if self.x_width is not None:
            out["window.x_width_mm"] = self.x_width
        return out


DEFAULTS = {
    "model.contrast_k": 0.345,
    "model.lambda_mm": 2.089,
    "model.phi0_rad": 0.802 * math.pi,
    "model.nu_hz": 50.0,
    "model.start_phase_rad": 0.0,
    "window.duration_s": 100.0,
    "window.extent_mm": 20.0,
    "window.rate_hz": 5000.0,
}


def parse_config(text: str, source: str = "<config>", overrides: dict | None = None) -> PipelineConfig:
    values = dict(DEFAULTS)
    where = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser, check, rule = KEYS[key]
        try:
            v = parser(val.strip())
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: {key}: cannot parse {val.strip()!r}") from None
        if not check(v):
            raise ConfigError(f"{source}:{lineno}: {key}={val.strip()} violates {rule}")
        values[key] = v
        where[key] = lineno
    for key, v in (overrides or {}).items():
        if v is None:
            continue
        parser, check, rule = KEYS[key]
        if not check(v):
            raise ConfigError(f"{key}={v} violates {rule}")
        values[key] = v
        where[key] = "override"
    return _build(values, where, source)


def _build(values: dict, where: dict, source: str) -> PipelineConfig:
    def section(keys, make):
        try:
            return make()
        except ValueError as exc:
            lines = [f"{k} (line {where[k]})" for k in keys if k in where]
            at = f" [{', '.join(lines)}]" if lines else ""
            raise ConfigError(f"{source}: {exc}{at}") from None

    window = section(["window.duration_s", "window.extent_mm", "window.rate_hz"],
                     lambda: AcquisitionWindow(values["window.duration_s"],
                                               values["window.extent_mm"],
                                               values["window.rate_hz"]))
    model = section([k for k in values if k.startswith("model.")],
                    lambda: ModelParameters.create(
                        f0=window.f0, contrast=values["model.contrast_k"],
                        period=values["model.lambda_mm"], phi0=values["model.phi0_rad"],
                        nu=values["model.nu_hz"], start_phase=values["model.start_phase_rad"]))
    gkeys = ["grid.tau_max_s", "grid.delta_tau_s", "grid.u_max_mm", "grid.delta_u_mm"]

    def make_grid():
        base = GridSpec()
        g = GridSpec(values.get(gkeys[0], base.tau_max), values.get(gkeys[1], base.delta_tau),
                     values.get(gkeys[2], base.u_max), values.get(gkeys[3], base.delta_u))
        # the default grid is checked later, at correlation time, so that short
        # simulate-only runs need no grid section
        if any(key in where for key in gkeys):
            g.check_window(window.duration, window.extent)
        return g

    grid = section(gkeys + ["window.duration_s", "window.extent_mm"], make_grid)

    def make_fit():
        base = FitOptions()
        series = SeriesOptions(tolerance=values.get("fit.series_tolerance", base.series.tolerance))
        return FitOptions(values.get("fit.max_iterations", base.max_iterations),
                          values.get("fit.convergence_tol", base.convergence_tol),
                          series, values.get("fit.weight_mode", base.weight_mode),
                          values.get("fit.n_starts", base.n_starts),
                          values.get("fit.whole_periods", base.whole_periods))

    fit = section([k for k in values if k.startswith("fit.")], make_fit)
    return PipelineConfig(
        model=model, window=window, grid=grid, fit=fit,
        seed=values.get("seed", 0),
        output_dir=Path(values.get("output_dir", "run")),
        x_width=values.get("window.x_width_mm"),
        n_coarse=values.get("reconstruct.n_coarse", 64),
        refine_nu=values.get("reconstruct.refine_nu", True),
        use_truth=values.get("reconstruct.use_truth", False),
        bin_width=values.get("pattern.bin_width_mm", 0.1),
        event_format=values.get("format", "csv"),
        heatmap=values.get("heatmap", False),
        values=values,
    )


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path), overrides)


def default_config(overrides: dict | None = None) -> PipelineConfig:
    return parse_config("", "<defaults>", overrides)
