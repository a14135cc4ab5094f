"""Compiled inner loops for line grids."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _bracket(x, y):
    # largest j with x[j] <= y, clipped to [0, m-2]; same as searchsorted(side="right") - 1
    lo, hi = 0, x.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x[mid] <= y:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def bracket_continuation(V, x, nu, a, b):
    """Exact ``sum_k nu_k Upsilon[V W_k]`` for a grid-consistent ``V`` on line grid ``x``.

    Atom ``k`` maps ``x`` to ``a[k] + b[k] x``. The maximizing row at an image
    is one of the two rows of its bracketing grid points. Brackets are found
    by walking forward while images increase in ``k`` and by bisection
    otherwise. Sums run over ``k`` in order, so the result is reproducible.
    """
    m = x.shape[0]
    n = nu.shape[0]
    out = np.empty((m, 2))
    nua = nu * a
    nub = nu * b
    for i in range(m):
        s0 = 0.0
        s1 = 0.0
        xi = x[i]
        r = 0
        prev = np.inf
        for k in range(n):
            y = a[k] + b[k] * xi
            if m > 1:
                if y < prev:
                    r = _bracket(x, y)
                else:
                    while r < m - 2 and x[r + 1] <= y:
                        r += 1
                prev = y
                J = r + (V[r + 1, 0] + V[r + 1, 1] * y > V[r, 0] + V[r, 1] * y)
            else:
                J = 0
            s0 += nu[k] * V[J, 0] + nua[k] * V[J, 1]
            s1 += nub[k] * V[J, 1]
        out[i, 0] = s0
        out[i, 1] = s1
    return out


@njit(cache=True, nogil=True)
def bracket_values(V, j, y):
    """``max`` of the two bracketing rows of every matrix in ``V`` (``(P, m, 2)``) at ``y``."""
    P = V.shape[0]
    N = y.shape[0]
    last = V.shape[1] - 1
    out = np.empty((P, N))
    for p in range(P):
        for n in range(N):
            r = j[n]
            v = V[p, r, 0] + V[p, r, 1] * y[n]
            if r < last:
                w = V[p, r + 1, 0] + V[p, r + 1, 1] * y[n]
                if w > v:
                    v = w
            out[p, n] = v
    return out
