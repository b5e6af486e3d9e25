"""``fringecorr`` command line.

Failures print one line ``ERROR[<stage>]: <message>`` on stderr and exit
with status 1.
"""
from __future__ import annotations

import json
import sys
import warnings
from pathlib import Path

import click

from . import io
from .config import ConfigError, default_config, load_config
from .correlator import GridSpec
from .pipeline import (MANIFEST, Manifest, StageError, run_correlate, run_fit, run_pipeline,
                       run_reconstruct, run_simulate)


def _one_line_warning(message, category, filename, lineno, line=None):
    return f"WARNING[{category.__name__}]: {message}\n"


def _fail(stage: str, exc) -> None:
    msg = str(exc).replace("\n", " ")
    click.echo(f"ERROR[{stage}]: {msg}", err=True)
    sys.exit(1)


def _config(path, seed=None, out=None, fmt=None, heatmap=None):
    overrides = {"seed": seed, "output_dir": str(out) if out else None, "format": fmt,
                 "heatmap": True if heatmap else None}
    try:
        if path:
            return load_config(path, overrides)
        return default_config(overrides)
    except ConfigError as exc:
        _fail("config", exc)


def _grid(text, cfg):
    if text is None:
        return cfg.grid if cfg else GridSpec()
    try:
        return GridSpec.parse(text)
    except ValueError as exc:
        _fail("config", exc)


def _run(stage, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError as exc:
        _fail(exc.stage, exc.cause)
    except (ValueError, OSError, RuntimeError) as exc:
        _fail(stage, exc)


config_opt = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                          help="key=value configuration file.")
out_opt = click.option("--out", type=click.Path(file_okay=False), help="Output directory.")


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Correlation analysis of periodically dephased fringe data."""
    warnings.formatwarning = _one_line_warning


@main.command("simulate")
@config_opt
@click.option("--seed", type=int, help="RNG seed (overrides config).")
@out_opt
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]), help="Event file format.")
def simulate_cmd(config_path, seed, out, fmt):
    """Simulate a time-tagged event list."""
    cfg = _config(config_path, seed, out, fmt)
    path = _run("simulate", run_simulate, cfg)
    click.echo(str(path))


@main.command("correlate")
@click.argument("events", type=click.Path(exists=True, dir_okay=False))
@config_opt
@click.option("--grid", "grid_text", help="tau_max,dtau,u_max,du in s,s,mm,mm.")
@out_opt
@click.option("--heatmap", is_flag=True, help="Also write a 16-bit PGM of g2.")
def correlate_cmd(events, config_path, grid_text, out, heatmap):
    """Pair-count g2(u, tau) from an event list."""
    cfg = _config(config_path, out=out) if config_path else None
    spec = _grid(grid_text, cfg)
    out_dir = Path(out) if out else (cfg.output_dir if cfg else Path(events).parent)
    path = _run("correlate", run_correlate, events, spec, out_dir, heatmap)
    click.echo(str(path))


@main.command("fit")
@click.argument("grid", type=click.Path(exists=True, dir_okay=False))
@config_opt
@out_opt
@click.option("--events", "events", type=click.Path(exists=True, dir_okay=False),
              help="Event file of the grid; enables the whole-period refit.")
def fit_cmd(grid, config_path, out, events):
    """Fit the sideband model to a grid CSV."""
    cfg = _config(config_path, out=out)
    out_dir = Path(out) if out else (cfg.output_dir if config_path else Path(grid).parent)
    result = _run("fit", run_fit, grid, cfg.fit, out_dir, events_path=events)
    click.echo(io.format_kv(io.fit_to_kv(result)), nl=False)


@main.command("reconstruct")
@click.argument("events", type=click.Path(exists=True, dir_okay=False))
@click.argument("fit_file", type=click.Path(exists=True, dir_okay=False))
@config_opt
@out_opt
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]), help="Restored event format.")
def reconstruct_cmd(events, fit_file, config_path, out, fmt):
    """Undo the fitted perturbation and recover its start phase."""
    cfg = _config(config_path, out=out, fmt=fmt)
    out_dir = Path(out) if out else (cfg.output_dir if config_path else Path(events).parent)
    truth = None
    if cfg.use_truth:
        pe = cfg.model.perturbation
        truth = {"period": cfg.model.fringe.period, "phi0": pe.phi0, "nu": pe.nu}
    report = _run("reconstruct", run_reconstruct, events, fit_file, out_dir, cfg.n_coarse,
                  cfg.refine_nu, cfg.bin_width, cfg.event_format, truth)
    click.echo(f"best_phase_rad={report.best_phase!r}\nstart_phase_rad={report.start_phase!r}\n"
               f"contrast_before={report.contrast_before!r}\n"
               f"contrast_after={report.contrast_after!r}")


@main.command("pipeline")
@config_opt
@click.option("--seed", type=int)
@out_opt
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]))
@click.option("--heatmap", is_flag=True)
@click.option("--grid", "grid_text", help="tau_max,dtau,u_max,du in s,s,mm,mm.")
def pipeline_cmd(config_path, seed, out, fmt, heatmap, grid_text):
    """simulate -> correlate -> fit -> reconstruct, with a run manifest."""
    cfg = _config(config_path, seed, out, fmt, heatmap)
    if grid_text:
        from dataclasses import replace
        cfg = replace(cfg, grid=_grid(grid_text, cfg))
    res = _run("pipeline", run_pipeline, cfg)
    click.echo(_summary(Path(cfg.output_dir)))
    return res


def _summary(run_dir: Path) -> str:
    lines = [f"run: {run_dir}"]
    man_path = run_dir / MANIFEST
    if man_path.exists():
        man = json.loads(man_path.read_text())
        for stage, secs in man.get("timings_s", {}).items():
            lines.append(f"  {stage:<12s} {secs:8.3f} s")
        lines.append(f"  files: {', '.join(sorted(man.get('files', {})))}")
    for name in ("fit.txt", "reconstruction.txt"):
        p = run_dir / name
        if p.exists():
            lines.append(f"[{name}]")
            lines.extend(f"  {k} = {v}" for k, v in io.parse_kv(p.read_text(), p).items())
    return "\n".join(lines)


@main.command("report")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--verify", is_flag=True, help="Recheck manifest checksums.")
def report_cmd(run_dir, verify):
    """Summarize a run directory."""
    run_dir = Path(run_dir)
    click.echo(_summary(run_dir))
    if verify:
        man = Manifest(run_dir)
        bad = [name for name, meta in man.data["files"].items()
               if not (run_dir / name).exists() or io.sha256(run_dir / name) != meta["sha256"]]
        if bad:
            _fail("report", f"checksum mismatch for {', '.join(sorted(bad))}")
        click.echo("checksums ok")


if __name__ == "__main__":
    main()
