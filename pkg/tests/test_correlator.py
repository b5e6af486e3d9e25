import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fringecorr.correlator import (CorrelationGrid, GridMeta, GridSpec, amplitude_profile,
                                   correlate, crop_whole_periods, neighbor_histogram, normalize, pair_histogram,
                                   pair_histogram_naive)
from fringecorr.model import modulation_amplitude
from fringecorr.simulator import AcquisitionWindow, EventStream, simulate

from conftest import model_grid, ref_params

STATIC_WINDOW_A = 0.0454408

W = AcquisitionWindow(duration=10.0, extent=20.0, rate=100.0)


def stream(t, y, window=W):
    order = np.argsort(t, kind="stable")
    return EventStream(np.asarray(t, float)[order], np.asarray(y, float)[order], window)


class TestGridSpec:
    def test_defaults(self):
        g = GridSpec()
        assert (g.n_tau, g.n_u) == (120, 160)
        assert g.tau_centers[0] == pytest.approx(0.25e-3)
        assert g.u_centers[0] == pytest.approx(-7.95)

    def test_invariants(self):
        with pytest.raises(ValueError):
            GridSpec(tau_max=0.01, delta_tau=0.02)
        with pytest.raises(ValueError):
            GridSpec(u_max=1.0, delta_u=0.0)
        with pytest.raises(ValueError):
            GridSpec().check_window(0.05, 20.0)
        with pytest.raises(ValueError):
            GridSpec().check_window(100.0, 8.0)

    def test_parse(self):
        assert GridSpec.parse("0.02,0.001,4,0.2") == GridSpec(0.02, 0.001, 4.0, 0.2)
        with pytest.raises(ValueError):
            GridSpec.parse("1,2,3")


class TestPairHistogram:
    def test_single_pair(self):
        spec = GridSpec(tau_max=0.01, delta_tau=1e-3, u_max=2.0, delta_u=0.1)
        counts = pair_histogram(stream([0.0, 1e-3], [0.0, 0.5]), spec)
        assert counts.sum() == 1
        a, b = np.argwhere(counts)[0]
        assert a == 1
        assert spec.u_centers[b] == pytest.approx(0.55)

    def test_identical_positions(self):
        spec = GridSpec(tau_max=0.5, delta_tau=0.01, u_max=2.0, delta_u=0.1)
        rng = np.random.default_rng(0)
        s = stream(np.sort(rng.uniform(0, 1, 200)), np.full(200, 1.3))
        counts = pair_histogram(s, spec)
        zero_col = int(np.argmin(np.abs(spec.u_centers - 0.05)))
        assert counts.sum() == counts[:, zero_col].sum() > 0

    def test_ties_count_both_orders(self):
        spec = GridSpec(tau_max=0.01, delta_tau=1e-3, u_max=2.0, delta_u=0.1)
        counts = pair_histogram(stream([0.5, 0.5], [0.0, 0.55]), spec)
        assert counts.sum() == 2 and counts[0].sum() == 2
        assert np.array_equal(counts, pair_histogram_naive([0.5, 0.5], [0.0, 0.55], spec))

    def test_empty_and_single(self):
        spec = GridSpec(0.01, 1e-3, 2.0, 0.1)
        assert pair_histogram(stream([], []), spec).sum() == 0
        assert pair_histogram(stream([1.0], [0.0]), spec).sum() == 0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_naive(self, seed):
        w = AcquisitionWindow(duration=2.0, extent=20.0, rate=500.0)
        s = simulate(ref_params(w), w, seed=seed)
        spec = GridSpec(tau_max=0.06, delta_tau=0.5e-3, u_max=8.0, delta_u=0.1)
        assert np.array_equal(pair_histogram(s, spec), pair_histogram_naive(s.t, s.y, spec))

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 300), st.integers(-18, 18)), min_size=2, max_size=60))
    def test_permutation_and_time_reversal(self, pts):
        # dyadic times and half-mm positions keep every difference exact and off the u edges
        t = np.array([p[0] for p in pts], float) / 64.0
        y = np.array([p[1] for p in pts], float) * 0.5
        w = AcquisitionWindow(duration=8.0, extent=20.0, rate=100.0)
        spec = GridSpec(tau_max=1.0, delta_tau=1 / 32, u_max=4.25, delta_u=0.5)
        base = pair_histogram(stream(t, y, w), spec)
        perm = np.random.default_rng(len(pts)).permutation(len(pts))
        assert np.array_equal(base, pair_histogram(stream(t[perm], y[perm], w), spec))
        rev = pair_histogram(stream(8.0 - t - 1 / 64, y, w), spec)
        assert np.array_equal(base, rev[:, ::-1])
        assert np.array_equal(base, pair_histogram_naive(t, y, spec))


class TestNormalize:
    def test_recomputable(self, ref_grid):
        again = normalize(ref_grid.counts, ref_grid.meta, ref_grid.spec)
        assert np.array_equal(again, ref_grid.g2)
        assert np.all(ref_grid.counts >= 0) and np.all(ref_grid.g2 >= 0)

    def test_formula(self):
        spec = GridSpec(0.01, 1e-3, 2.0, 0.1)
        counts = np.zeros((spec.n_tau, spec.n_u), np.int64)
        counts[3, 5] = 7
        meta = GridMeta(100, 10.0, 20.0)
        g2 = normalize(counts, meta, spec)
        tc, uc = spec.tau_centers[3], spec.u_centers[5]
        expect = 10.0 * 20.0 / (100 ** 2 * 1e-3 * 0.1) * 7 / ((1 - tc / 10) * (1 - abs(uc) / 20))
        assert g2[3, 5] == pytest.approx(expect, rel=1e-14)

    def test_empty_stream_zero(self):
        spec = GridSpec(0.01, 1e-3, 2.0, 0.1)
        g = correlate(stream([], []), spec)
        assert g.counts.sum() == 0 and np.all(g.g2 == 0)

    def test_flat_field(self, flat_grid):
        g = flat_grid
        assert g.g2.mean() == pytest.approx(1.0, abs=0.01)
        sigma = g.g2 / np.sqrt(np.maximum(g.counts, 1))
        outside = np.mean(np.abs(g.g2 - 1.0) > 4 * sigma)
        assert outside < 1e-3

    def test_undisturbed_is_tau_independent(self, ref_window):
        s = simulate(ref_params(ref_window, phi0=0.0), ref_window, seed=8)
        g = correlate(s, GridSpec())
        k = 2 * math.pi / 2.089
        a, q = amplitude_profile(g, k)
        # A static pattern over a non-whole number of fringes leaves an edge term
        # of order K/(kY) in the estimator.  Exact expectation for this window,
        # by quadrature of the overlap integral: A = 0.04544, mean g2 = 1.0066.
        assert np.allclose(a, STATIC_WINDOW_A, atol=0.008)
        assert a.mean() == pytest.approx(STATIC_WINDOW_A, abs=0.002)
        assert g.g2.mean() == pytest.approx(1.0066, abs=0.002)
        assert abs(np.polyfit(g.tau_centers, a, 1)[0]) * 0.06 < 0.005
        assert np.all(np.abs(q) < 0.012)

    def test_revival_stripes(self, ref_grid):
        a, _ = amplitude_profile(ref_grid, 2 * math.pi / 2.089)
        tau = ref_grid.tau_centers
        near = lambda x: int(np.argmin(np.abs(tau - x)))
        for n in (1, 2):
            assert a[near(n / 50)] > 3 * abs(a[near((n - 0.5) / 50)])


class TestAmplitudeProfile:
    def test_unperturbed_noiseless(self):
        g = model_grid(ref_params(AcquisitionWindow(100.0, 20.0, 5000.0), phi0=0.0))
        a, q = amplitude_profile(g, 2 * math.pi / 2.089)
        assert np.allclose(a, 0.5 * 0.345 ** 2, atol=1e-14)
        assert np.allclose(q, 0.0, atol=1e-14)

    def test_phi0_pi_half_period(self):
        spec = GridSpec(tau_max=0.02, delta_tau=0.004, u_max=8.0, delta_u=0.1)
        p = ref_params(AcquisitionWindow(100.0, 20.0, 5000.0), phi0=math.pi)
        a, _ = amplitude_profile(model_grid(p, spec), p.fringe.k)
        assert spec.tau_centers[2] == pytest.approx(0.01)
        assert a[2] == pytest.approx(modulation_amplitude(0.01, 0.345, math.pi, 2 * math.pi * 50), abs=1e-14)

    def test_full_scale_revival(self, ref_grid):
        a, _ = amplitude_profile(ref_grid, 2 * math.pi / 2.089)
        i1 = int(np.argmin(np.abs(ref_grid.tau_centers - 0.02)))
        assert 0.9 <= a[i1] / a[0] <= 1.1

    def test_resolvable_range(self):
        g = model_grid(ref_params(AcquisitionWindow(100.0, 20.0, 5000.0)))
        with pytest.raises(ValueError):
            amplitude_profile(g, 40.0)
        with pytest.raises(ValueError):
            amplitude_profile(g, 0.1)


class TestNeighborHistogram:
    def test_two_events(self):
        h = neighbor_histogram(stream([0.0, 1.0], [0.0, 0.3]))
        assert h.counts.sum() == 1

    def test_needs_two(self):
        with pytest.raises(ValueError):
            neighbor_histogram(stream([0.0], [0.0]))

    def test_total_with_x(self):
        w = AcquisitionWindow(10.0, 20.0, 500.0)
        s = simulate(ref_params(w), w, seed=0, x_width=6.0)
        h = neighbor_histogram(s, dy_edges=np.linspace(-5, 5, 51))
        assert h.counts.sum() == len(s) - 1
        assert h.counts.shape == (100, 50)

    def test_periodic_modulation(self, ref_stream):
        h = neighbor_histogram(ref_stream)
        c, prof = h.dy_centers, h.corrected_profile
        keep = np.abs(c) < 15
        c, prof = c[keep], prof[keep] / prof[keep].mean()

        def amp(k):
            basis = np.column_stack([np.ones_like(c), np.cos(k * c), np.sin(k * c)])
            coef, *_ = np.linalg.lstsq(basis, prof, rcond=None)
            return math.hypot(coef[1], coef[2])

        k = 2 * math.pi / 2.089
        assert amp(k) > 0.03
        assert amp(k) > 5 * amp(1.37 * k)

    def test_flat_profile(self, flat_stream):
        h = neighbor_histogram(flat_stream)
        c = h.dy_centers
        keep = np.abs(c) < 0.9 * 20
        corr = 1 - np.abs(c[keep]) / 20
        expected = (len(flat_stream) - 1) * 0.1 / 20
        sigma = np.sqrt(expected * corr) / corr
        outside = np.mean(np.abs(h.corrected_profile[keep] - expected) > 3 * sigma)
        assert outside < 0.02


class TestCropWholePeriods:
    def test_crop(self, ref_stream):
        c = crop_whole_periods(ref_stream, 2.089)
        assert c.window.extent == pytest.approx(9 * 2.089)
        assert c.window.f0 == pytest.approx(ref_stream.window.f0)
        assert np.all(np.abs(c.y) <= 9 * 2.089 / 2)
        assert len(c) == int(np.sum(np.abs(ref_stream.y) <= 9 * 2.089 / 2))
        assert c.provenance["cropped_periods"] == 9

    def test_already_whole(self):
        w = AcquisitionWindow(1.0, 20.0, 100.0)
        s = stream([0.1, 0.2], [0.0, 1.0], w)
        assert crop_whole_periods(s, 2.0) is s

    def test_too_narrow(self):
        with pytest.raises(ValueError, match="no whole fringe period"):
            crop_whole_periods(stream([0.1], [0.0]), 25.0)
