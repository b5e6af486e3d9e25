"""File formats shared by the command-line tools.

Event list (text)::

    # fringe-events v1, T=<s>, Y=<mm>, N=<count>[, R=<events/s>][, overhang=<n>]
    t_seconds,y_mm[,x_mm]

Numbers are fixed-point decimals, written as the shortest string that
reads back to the same double and zero-padded to at least 9 significant
digits.

Event list (binary, little-endian)::

    b"FREV1"  uint8 flags (bit 0: x present, bit 1: overhang allowed)
    float64 T  float64 Y  float64 R  uint64 N
    N records of float64 t, float64 y[, float64 x]
"""
from __future__ import annotations

import hashlib
import math
import re
import struct
from pathlib import Path

import numpy as np

from .correlator import CorrelationGrid, GridMeta, GridSpec
from .fitter import PARAM_NAMES, FitResult
from .simulator import AcquisitionWindow, EventStream

EVENTS_MAGIC = b"FREV1"
_BIN_HEADER = struct.Struct("<5sBdddQ")


class FormatError(ValueError):
    """Malformed input file; message carries the path and line."""


def fmt_fixed(v: float) -> str:
    s = repr(float(v))
    if "e" in s or "E" in s:
        s = np.format_float_positional(v, unique=True, trim="0")
    digits = s.lstrip("-").replace(".", "").lstrip("0")
    if len(digits) < 9:
        s += "0" * (9 - len(digits))
    return s


# -- events -----------------------------------------------------------------

def write_events(path, s: EventStream, fmt: str = "csv") -> Path:
    path = Path(path)
    w = s.window
    if fmt == "bin":
        flags = (1 if s.x is not None else 0) | (2 if s.allow_overhang else 0)
        cols = [s.t, s.y] + ([s.x] if s.x is not None else [])
        body = np.column_stack(cols).astype("<f8") if len(s) else np.zeros((0, len(cols)), "<f8")
        with open(path, "wb") as fh:
            fh.write(_BIN_HEADER.pack(EVENTS_MAGIC, flags, w.duration, w.extent, w.rate, len(s)))
            fh.write(body.tobytes())
        return path
    if fmt != "csv":
        raise ValueError(f"unknown event format {fmt!r}")
    header = (f"# fringe-events v1, T={fmt_fixed(w.duration)}, Y={fmt_fixed(w.extent)}, "
              f"N={len(s)}, R={fmt_fixed(w.rate)}")
    if s.allow_overhang:
        header += f", overhang={s.overhang}"
    lines = [header]
    ts = [fmt_fixed(v) for v in s.t.tolist()]
    ys = [fmt_fixed(v) for v in s.y.tolist()]
    if s.x is None:
        lines.extend(f"{a},{b}" for a, b in zip(ts, ys))
    else:
        xs = [fmt_fixed(v) for v in s.x.tolist()]
        lines.extend(f"{a},{b},{c}" for a, b, c in zip(ts, ys, xs))
    path.write_text("\n".join(lines) + "\n")
    return path


_HEADER_RE = re.compile(r"^#\s*fringe-events\s+v1\s*,(.*)$")


def _parse_header_fields(text: str, path, lineno: int) -> dict[str, str]:
    fields = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        key, sep, val = item.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: malformed header field {item!r}")
        fields[key.strip()] = val.strip()
    return fields


def read_events(path) -> EventStream:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(EVENTS_MAGIC))
    if head == EVENTS_MAGIC:
        return _read_events_bin(path)
    return _read_events_csv(path)


def _read_events_bin(path: Path) -> EventStream:
    raw = path.read_bytes()
    if len(raw) < _BIN_HEADER.size:
        raise FormatError(f"{path}: truncated binary header")
    magic, flags, T, Y, R, n = _BIN_HEADER.unpack_from(raw)
    ncol = 3 if flags & 1 else 2
    body = np.frombuffer(raw, "<f8", offset=_BIN_HEADER.size)
    if body.size != n * ncol:
        raise FormatError(f"{path}: expected {n} records of {ncol} values, found {body.size} values")
    body = body.reshape(n, ncol)
    return _build_stream(path, body, T, Y, R, bool(flags & 2), first_line=None)


def _read_events_csv(path: Path) -> EventStream:
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        m = _HEADER_RE.match(first)
        if not m:
            raise FormatError(f"{path}:1: missing '# fringe-events v1' header")
        fields = _parse_header_fields(m.group(1), path, 1)
        try:
            T, Y, n = float(fields["T"]), float(fields["Y"]), int(fields["N"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}:1: header needs numeric T, Y and N ({exc})") from None
        R = float(fields["R"]) if "R" in fields else max(n, 1) / T
        rows = []
        ncol = None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if ncol is None:
                ncol = len(parts)
                if ncol not in (2, 3):
                    raise FormatError(f"{path}:{lineno}: expected 2 or 3 columns, got {ncol}")
            elif len(parts) != ncol:
                raise FormatError(f"{path}:{lineno}: expected {ncol} columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    body = np.array(rows, float).reshape(len(rows), ncol or 2)
    if body.shape[0] != n:
        raise FormatError(f"{path}: header says N={n} but file holds {body.shape[0]} events")
    return _build_stream(path, body, T, Y, R, "overhang" in fields, first_line=2)


def _build_stream(path, body, T, Y, R, overhang, first_line):
    t = body[:, 0]
    if t.size > 1:
        bad = np.flatnonzero(np.diff(t) < 0)
        if bad.size:
            where = f"line {first_line + bad[0] + 1}" if first_line else f"record {bad[0] + 1}"
            raise FormatError(f"{path}: timestamps out of order at {where}")
    try:
        window = AcquisitionWindow(T, Y, R)
        x = body[:, 2] if body.shape[1] > 2 else None
        return EventStream(t, body[:, 1], window, x, {"source": str(path)}, allow_overhang=overhang)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- correlation grids --------------------------------------------------------

def _grid_header(spec: GridSpec, meta: GridMeta, kind: str) -> list[str]:
    return [
        f"# fringe-grid v1 {kind}",
        f"# tau_max_s={spec.tau_max!r},delta_tau_s={spec.delta_tau!r},"
        f"u_max_mm={spec.u_max!r},delta_u_mm={spec.delta_u!r}",
        f"# n_events={meta.n_events},duration_s={meta.duration!r},extent_mm={meta.extent!r}",
    ]


def write_grid(path, grid: CorrelationGrid) -> Path:
    path = Path(path)
    lines = _grid_header(grid.spec, grid.meta, "g2")
    lines.append("tau_center_s,u_center_mm,count,g2")
    tau, u = grid.tau_centers, grid.u_centers
    for a, tc in enumerate(tau.tolist()):
        for b, uc in enumerate(u.tolist()):
            lines.append(f"{tc!r},{uc!r},{int(grid.counts[a, b])},{float(grid.g2[a, b])!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _read_grid_header(path: Path, lines: list[str]):
    if len(lines) < 4 or not lines[0].startswith("# fringe-grid v1"):
        raise FormatError(f"{path}:1: missing '# fringe-grid v1' header")
    try:
        sf = _parse_header_fields(lines[1].lstrip("# "), path, 2)
        spec = GridSpec(float(sf["tau_max_s"]), float(sf["delta_tau_s"]),
                        float(sf["u_max_mm"]), float(sf["delta_u_mm"]))
        mf = _parse_header_fields(lines[2].lstrip("# "), path, 3)
        meta = GridMeta(int(mf["n_events"]), float(mf["duration_s"]), float(mf["extent_mm"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad grid header ({exc})") from None
    return spec, meta


def _read_table(path: Path, lines: list[str], spec: GridSpec, columns: list[str]):
    header = lines[3].strip().split(",")
    if header[:len(columns)] != columns:
        raise FormatError(f"{path}:4: expected columns {','.join(columns)}")
    data = []
    for lineno, line in enumerate(lines[4:], start=5):
        if not line.strip():
            continue
        try:
            data.append([float(v) for v in line.split(",")])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric value") from None
    arr = np.array(data, float)
    if arr.shape != (spec.n_tau * spec.n_u, len(columns)):
        raise FormatError(f"{path}: expected {spec.n_tau * spec.n_u} rows of {len(columns)} values")
    return arr


def read_grid(path) -> CorrelationGrid:
    path = Path(path)
    lines = path.read_text().splitlines()
    spec, meta = _read_grid_header(path, lines)
    arr = _read_table(path, lines, spec, ["tau_center_s", "u_center_mm", "count", "g2"])
    shape = (spec.n_tau, spec.n_u)
    counts = arr[:, 2].astype(np.int64).reshape(shape)
    return CorrelationGrid(spec, counts, arr[:, 3].reshape(shape), meta)


def write_residual(path, grid: CorrelationGrid, residual: np.ndarray) -> Path:
    path = Path(path)
    lines = _grid_header(grid.spec, grid.meta, "residual")
    lines.append("tau_center_s,u_center_mm,residual")
    for a, tc in enumerate(grid.tau_centers.tolist()):
        for b, uc in enumerate(grid.u_centers.tolist()):
            lines.append(f"{tc!r},{uc!r},{float(residual[a, b])!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_pgm(path, image: np.ndarray, vmin: float | None = None, vmax: float | None = None,
              bits: int = 8) -> Path:
    """Binary graymap (P5), rows top to bottom, linear over [vmin, vmax]."""
    path = Path(path)
    img = np.asarray(image, float)
    vmin = float(np.min(img)) if vmin is None else float(vmin)
    vmax = float(np.max(img)) if vmax is None else float(vmax)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    scale = (img - vmin) / (vmax - vmin) if vmax > vmin else np.zeros_like(img)
    levels = np.rint(np.clip(scale, 0.0, 1.0) * maxval)
    data = levels.astype(">u1" if bits == 8 else ">u2").tobytes()
    head = (f"P5\n# g2 range [{vmin!r}, {vmax!r}]\n{img.shape[1]} {img.shape[0]}\n{maxval}\n")
    path.write_bytes(head.encode("ascii") + data)
    return path


def read_pgm(path):
    """Returns ``(levels, maxval, (vmin, vmax))``."""
    raw = Path(path).read_bytes()
    tokens, pos, rng = [], 0, None
    while len(tokens) < 4:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            m = re.search(r"\[(.*),(.*)\]", line)
            if m:
                rng = (float(m.group(1)), float(m.group(2)))
            continue
        tokens.extend(line.split())
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5":
        raise FormatError(f"{path}: not a binary PGM")
    dtype = ">u1" if maxval < 256 else ">u2"
    levels = np.frombuffer(raw, dtype, count=w * h, offset=pos).reshape(h, w)
    return levels, maxval, rng


# -- key=value blocks ---------------------------------------------------------

def format_kv(pairs: dict) -> str:
    out = []
    for k, v in pairs.items():
        if isinstance(v, bool):
            v = int(v)
        out.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(out) + "\n"


def parse_kv(text: str, path="<text>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
        out[key.strip()] = val.strip()
    return out


_FIT_KEYS = {"nu": "nu_hz", "contrast": "k_contrast", "period": "lambda_mm", "phi0": "phi0_rad"}


def fit_to_kv(r: FitResult) -> dict:
    out = {}
    for name in PARAM_NAMES:
        out[_FIT_KEYS[name]] = getattr(r, name)
    for name in PARAM_NAMES:
        out[_FIT_KEYS[name] + "_sigma"] = r.sigma[name]
    out.update(rms_residual=r.rms_residual, converged=r.converged, iterations=r.iterations)
    return out


def write_fit(path, r: FitResult) -> Path:
    path = Path(path)
    path.write_text(format_kv(fit_to_kv(r)))
    return path


def read_fit(path) -> FitResult:
    path = Path(path)
    kv = parse_kv(path.read_text(), path)
    try:
        vals = {name: float(kv[key]) for name, key in _FIT_KEYS.items()}
        sigma = {name: float(kv[key + "_sigma"]) for name, key in _FIT_KEYS.items()}
        rms = float(kv["rms_residual"])
        converged = kv["converged"] == "1"
        iterations = int(kv.get("iterations", "0"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete fit result ({exc})") from None
    fixed = tuple(n for n, s in sigma.items() if math.isinf(s))
    return FitResult(**vals, sigma=sigma, residual=np.zeros((0, 0)), rms_residual=rms,
                     converged=converged, iterations=iterations, fixed=fixed)


def write_csv(path, header: list[str], columns) -> Path:
    path = Path(path)
    cols = [np.asarray(c).tolist() for c in columns]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
