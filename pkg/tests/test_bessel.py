import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fringecorr.bessel import MAX_ORDER, bessel_j, bessel_table

J0_FIRST_ZERO = 2.4048255576957727686  # mpmath findroot on besselj(0, x)


def test_trivial_values():
    assert bessel_j(0, 0.0) == 1.0
    assert bessel_j(1, 0.0) == 0.0
    assert bessel_j(7, 0.0) == 0.0


def test_first_zero_of_j0():
    assert abs(bessel_j(0, 2.40483)) < 1e-5
    assert abs(bessel_j(0, J0_FIRST_ZERO)) < 1e-15


@pytest.mark.parametrize("x", [0.01, 0.5, 1.0, 2.5, 5.0, 7.3, 10.0, 13.7, 20.0])
def test_against_mpmath(x):
    table = bessel_table(64, x)
    for n in range(65):
        ref = float(mpmath.besselj(n, x))
        if n > x + 2 or abs(ref) > 1e-3:
            # monotone tail or away from zeros: relative accuracy
            assert table[n] == pytest.approx(ref, rel=1e-12, abs=0.0), n
        else:
            assert abs(table[n] - ref) <= 1e-12 * abs(ref) + 1e-15, n


def test_dense_grid_against_scipy():
    from scipy.special import jv
    x = np.linspace(0.0, 20.0, 801)
    table = bessel_table(40, x)
    ref = jv(np.arange(41)[:, None], x[None, :])
    assert np.max(np.abs(table - ref)) < 1e-14


def test_deep_tail_does_not_underflow_early():
    # J_40(0.01) ~ 1.1e-152 / 40! scale, well inside double range
    ref = float(mpmath.besselj(40, 0.01))
    assert bessel_j(40, 0.01) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(0, 20), x=st.floats(0.0, 15.0))
def test_negative_order_symmetry(n, x):
    assert bessel_j(-n, x) == (-1) ** n * bessel_j(n, x)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-20.0, 20.0))
def test_sum_rule_and_parity(x):
    t = bessel_table(60, x)
    # J_0^2 + 2 sum J_n^2 = 1
    assert t[0] ** 2 + 2 * np.sum(t[1:] ** 2) == pytest.approx(1.0, abs=1e-14)
    assert bessel_j(3, -x) == pytest.approx(-bessel_j(3, x), abs=1e-16)


def test_array_input_shape():
    x = np.linspace(0, 3, 12).reshape(3, 4)
    assert bessel_j(2, x).shape == (3, 4)
    assert bessel_table(5, x).shape == (6, 3, 4)


def test_range_errors():
    with pytest.raises(ValueError):
        bessel_j(MAX_ORDER + 1, 1.0)
    with pytest.raises(ValueError):
        bessel_j(0, math.inf)
