"""Correlation analysis of periodically dephased interference fringes from time-tagged events."""

__version__ = "0.1.0"

from .model import (FringeParameters, ModelParameters, OracleGrid, PerturbationParameters,
                    SeriesOptions, g2_model, g2_numeric_oracle, intensity, modulation_amplitude,
                    time_averaged_pattern)
from .bessel import bessel_j
from .simulator import AcquisitionWindow, EventRecord, EventStream, integrated_pattern, simulate
from .correlator import (CorrelationGrid, GridSpec, amplitude_profile, correlate,
                         crop_whole_periods, neighbor_histogram, normalize, pair_histogram)
from .fitter import FitOptions, FitResult, fit, fit_events, fit_grid, initial_guess, refit
from .reconstructor import ReconstructionReport, fringe_contrast, scan_phase, shift_events
