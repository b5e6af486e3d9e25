import math

import numpy as np
import pytest

from fringecorr.correlator import CorrelationGrid, GridMeta, GridSpec, correlate
from fringecorr.model import ModelParameters, g2_surface
from fringecorr.simulator import AcquisitionWindow, simulate

REF_PHI0 = 0.802 * math.pi
REF_START = 1.234


@pytest.fixture(scope="session")
def ref_window():
    return AcquisitionWindow(duration=100.0, extent=20.0, rate=5000.0)


def ref_params(window, phi0=REF_PHI0, contrast=0.345, start_phase=REF_START):
    return ModelParameters.create(f0=window.f0, contrast=contrast, period=2.089,
                                  phi0=phi0, nu=50.0, start_phase=start_phase)


@pytest.fixture(scope="session")
def ref_stream(ref_window):
    return simulate(ref_params(ref_window), ref_window, seed=11)


@pytest.fixture(scope="session")
def ref_grid(ref_stream):
    return correlate(ref_stream, GridSpec())


@pytest.fixture(scope="session")
def flat_stream(ref_window):
    return simulate(ref_params(ref_window, contrast=0.0), ref_window, seed=5)


@pytest.fixture(scope="session")
def flat_grid(flat_stream):
    return correlate(flat_stream, GridSpec())


def model_grid(params, spec=GridSpec(), n_events=500_000, duration=100.0, extent=20.0):
    """Noiseless grid sampled from the closed form at the bin centers (unit counts)."""
    g2 = g2_surface(spec.u_centers, spec.tau_centers, params)
    counts = np.ones(g2.shape, dtype=np.int64)
    return CorrelationGrid(spec, counts, g2, GridMeta(n_events, duration, extent))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
