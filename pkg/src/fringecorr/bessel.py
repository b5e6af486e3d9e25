"""Bessel functions of the first kind of integer order.

Values are produced by Miller's backward recurrence normalized with the
identity ``J_0(x) + 2 * sum_{k>=1} J_{2k}(x) = 1``.  The backward direction
is stable for every order below the starting index, so a single sweep yields
the whole table ``J_0 .. J_nmax`` at once, which is what the sideband sums
need.
"""
from __future__ import annotations

import math

import numpy as np

MAX_ORDER = 256
MAX_ARGUMENT = 1.0e3

_BIG = 1.0e250
_SMALL = 1.0e-250
# below this the two-term power series is exact to double precision
_SERIES_X = 1.0e-5


def _start_index(n_top: int, x_max: float) -> int:
    m = max(n_top, int(math.ceil(x_max)))
    m = m + 30 + int(math.sqrt(40.0 * (m + 1)))
    return m + (m & 1)


def bessel_table(n_max: int, x) -> np.ndarray:
    """Return ``J_n(x)`` for ``n = 0 .. n_max``.

    The result has shape ``(n_max + 1,) + np.shape(x)``.
    """
    if not 0 <= n_max <= MAX_ORDER:
        raise ValueError(f"order {n_max} outside supported range [0, {MAX_ORDER}]")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("argument must be finite")
    ax = np.abs(x)
    if ax.size and ax.max() > MAX_ARGUMENT:
        raise ValueError(f"|x| > {MAX_ARGUMENT} not supported")

    flat = ax.ravel()
    out = np.zeros((n_max + 1, flat.size))
    zero = flat == 0.0
    out[0, zero] = 1.0

    tiny = ~zero & (flat < _SERIES_X)
    if tiny.any():
        h = flat[tiny] / 2.0
        lead = np.ones_like(h)
        for n in range(n_max + 1):
            if n:
                lead = lead * h / n
            out[n, tiny] = lead * (1.0 - h * h / (n + 1))

    live = flat >= _SERIES_X
    if live.any():
        xs = flat[live]
        m = _start_index(n_max, float(xs.max()))
        two_over_x = 2.0 / xs
        table = np.zeros((n_max + 1, xs.size))
        j_next = np.zeros_like(xs)
        j_cur = np.full_like(xs, 1.0e-30)
        norm = np.zeros_like(xs)
        for k in range(m, 0, -1):
            # j_cur holds J_k, produce J_{k-1}
            j_prev = k * two_over_x * j_cur - j_next
            j_next, j_cur = j_cur, j_prev
            if k - 1 <= n_max:
                table[k - 1] = j_cur
            if (k - 1) % 2 == 0 and k - 1 > 0:
                norm += 2.0 * j_cur
            big = np.abs(j_cur) > _BIG
            if big.any():
                j_cur[big] *= _SMALL
                j_next[big] *= _SMALL
                norm[big] *= _SMALL
                table[:, big] *= _SMALL
        norm += j_cur  # J_0 term
        out[:, live] = table / norm

    # J_n(-x) = (-1)^n J_n(x)
    neg = (x.ravel() < 0.0)
    if neg.any():
        odd = np.arange(n_max + 1) % 2 == 1
        out[np.ix_(odd, neg)] *= -1.0
    return out.reshape((n_max + 1,) + x.shape)


def bessel_j(n: int, x):
    """Bessel function of the first kind ``J_n(x)`` for integer ``n``.

    Negative orders use ``J_{-n}(x) = (-1)^n J_n(x)``.  Accepts scalar or
    array ``x``; returns a float for scalar input.
    """
    n = int(n)
    if abs(n) > MAX_ORDER:
        raise ValueError(f"order {n} outside supported range [-{MAX_ORDER}, {MAX_ORDER}]")
    val = bessel_table(abs(n), x)[abs(n)]
    if n < 0 and abs(n) % 2 == 1:
        val = -val
    if np.ndim(val) == 0:
        return float(val)
    return val
