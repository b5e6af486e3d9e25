"""Stage runners behind the command line: each writes files and records them in a manifest."""
from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .config import PipelineConfig
from .correlator import GridSpec, correlate, crop_whole_periods
from .fitter import FitOptions, FitResult, fit_grid, refit
from .reconstructor import scan_phase
from .simulator import integrated_pattern, simulate

MANIFEST = "manifest.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


class Manifest:
    """``manifest.json`` in the output directory; merged across commands."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.path = self.dir / MANIFEST
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            self.data = {"tool": "fringecorr", "version": __version__, "config": {},
                         "timings_s": {}, "files": {}}

    def add_file(self, path) -> None:
        path = Path(path)
        self.data["files"][path.name] = {"sha256": io.sha256(path), "bytes": path.stat().st_size}

    def set_config(self, echo: dict) -> None:
        self.data["config"] = {k: (v if not isinstance(v, float) or math.isfinite(v) else repr(v))
                               for k, v in echo.items()}

    def save(self) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return self.path

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.data["timings_s"][name] = time.perf_counter() - start


def _events_name(fmt: str, stem: str = "events") -> str:
    return f"{stem}.{'bin' if fmt == 'bin' else 'csv'}"


def run_simulate(cfg: PipelineConfig, out_dir=None, manifest: Manifest | None = None) -> Path:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = manifest or Manifest(out)
    man.set_config(cfg.echo())
    with man.stage("simulate"):
        stream = simulate(cfg.model, cfg.window, cfg.seed, cfg.x_width)
        path = io.write_events(out / _events_name(cfg.event_format), stream, cfg.event_format)
    man.add_file(path)
    man.save()
    return path


def run_correlate(events_path, spec: GridSpec, out_dir, heatmap: bool = False,
                  manifest: Manifest | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = manifest or Manifest(out)
    with man.stage("correlate"):
        stream = io.read_events(events_path)
        grid = correlate(stream, spec)
    path = io.write_grid(out / "grid.csv", grid)
    man.add_file(path)
    if heatmap:
        lo, hi = float(np.min(grid.g2)), float(np.max(grid.g2))
        man.add_file(io.write_pgm(out / "g2.pgm", grid.g2, lo, hi, bits=16))
    man.save()
    return path


def run_fit(grid_path, opts: FitOptions, out_dir, manifest: Manifest | None = None,
            events_path=None) -> FitResult:
    """Fit a grid file.  Given the events and ``opts.whole_periods``, refit on
    a whole-period crop of the detector (written as ``grid_whole_periods.csv``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = manifest or Manifest(out)
    cropped_grid = None
    with man.stage("fit"):
        grid = io.read_grid(grid_path)
        result = fit_grid(grid, opts)
        if events_path is not None and opts.whole_periods:
            stream = crop_whole_periods(io.read_events(events_path), result.period)
            if stream.window.extent != grid.meta.extent:
                grid.spec.check_window(stream.window.duration, stream.window.extent)
                grid = cropped_grid = correlate(stream, grid.spec)
                result = refit(grid, result, opts)
    if cropped_grid is not None:
        man.add_file(io.write_grid(out / "grid_whole_periods.csv", cropped_grid))
    man.add_file(io.write_fit(out / "fit.txt", result))
    man.add_file(io.write_residual(out / "residual.csv", grid, result.residual))
    man.save()
    return result


def run_reconstruct(events_path, fit_path, out_dir, n_coarse: int = 64, refine_nu: bool = True,
                    bin_width: float = 0.1, event_format: str = "csv",
                    truth: dict | None = None, manifest: Manifest | None = None):
    """Shift events with the fitted parameters; ``truth`` overrides period/phi0/nu."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = manifest or Manifest(out)
    with man.stage("reconstruct"):
        stream = io.read_events(events_path)
        fr = io.read_fit(fit_path)
        period, phi0, nu, sigma = fr.period, fr.phi0, fr.nu, fr.sigma["nu"]
        if truth:
            period, phi0, nu = truth["period"], truth["phi0"], truth["nu"]
            sigma = None
        report = scan_phase(stream, period, phi0, nu, n_coarse=n_coarse,
                            refine_nu=refine_nu, nu_sigma=sigma)
    paths = [
        io.write_events(out / _events_name(event_format, "restored"), report.restored, event_format),
        out / "reconstruction.txt",
        io.write_csv(out / "phase_scan.csv", ["phase_rad", "contrast"],
                     [report.phase_scan[:, 0], report.phase_scan[:, 1]]),
    ]
    paths[1].write_text(io.format_kv({
        "best_phase_rad": report.best_phase, "start_phase_rad": report.start_phase,
        "nu_hz": report.nu, "lambda_mm": report.period, "phi0_rad": report.phi0,
        "contrast_before": report.contrast_before, "contrast_after": report.contrast_after,
        "overhang": report.restored.overhang,
    }))
    before, edges = integrated_pattern(stream, bin_width)
    after, _ = integrated_pattern(report.restored, bin_width)
    centers = 0.5 * (edges[1:] + edges[:-1])
    paths.append(io.write_csv(out / "pattern.csv", ["y_center_mm", "count_before", "count_after"],
                              [centers, before, after]))
    for p in paths:
        man.add_file(p)
    man.save()
    return report


def run_pipeline(cfg: PipelineConfig, out_dir=None) -> dict:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out)
    man.data["files"] = {}
    man.data["timings_s"] = {}
    events = run_simulate(cfg, out, man)
    grid = run_correlate(events, cfg.grid, out, cfg.heatmap, man)
    result = run_fit(grid, cfg.fit, out, man, events_path=events)
    truth = None
    if cfg.use_truth:
        pe = cfg.model.perturbation
        truth = {"period": cfg.model.fringe.period, "phi0": pe.phi0, "nu": pe.nu}
    report = run_reconstruct(events, out / "fit.txt", out, cfg.n_coarse, cfg.refine_nu,
                             cfg.bin_width, cfg.event_format, truth, man)
    man.save()
    return {"events": events, "grid": grid, "fit": result, "reconstruction": report,
            "manifest": man.path}
