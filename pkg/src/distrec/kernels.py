"""Inner loops of the dual coordinate-descent linear SVM solver.

Both backends take a CSR matrix split into ``(data, indices, indptr)`` whose
last column is the constant bias feature, and update ``w`` and ``alpha`` in
place.  ``cd_epoch`` points at the numba kernel unless JIT is disabled via
``DISTREC_DISABLE_JIT``; the two implementations are interchangeable and both
are importable so they can be benchmarked against each other.
"""

import numpy as np

from ._accel import USE_NUMBA, njit


def _cd_epoch_py(data, indices, indptr, y, qdiag, order, alpha, w, C):
    """One pass of dual coordinate descent over the examples in ``order``.

    Returns the largest projected-gradient magnitude seen during the pass.
    """
    max_violation = 0.0
    for i in order:
        lo, hi = indptr[i], indptr[i + 1]
        idx = indices[lo:hi]
        val = data[lo:hi]
        g = y[i] * np.dot(w[idx], val) - 1.0
        a = alpha[i]
        if a <= 0.0:
            pg = min(g, 0.0)
        elif a >= C:
            pg = max(g, 0.0)
        else:
            pg = g
        if abs(pg) > max_violation:
            max_violation = abs(pg)
        if pg != 0.0 and qdiag[i] > 0.0:
            a_new = min(max(a - g / qdiag[i], 0.0), C)
            step = (a_new - a) * y[i]
            alpha[i] = a_new
            w[idx] += step * val
    return max_violation


def _cd_epoch_loop(data, indices, indptr, y, qdiag, order, alpha, w, C):
    max_violation = 0.0
    for t in range(order.shape[0]):
        i = order[t]
        lo = indptr[i]
        hi = indptr[i + 1]
        g = 0.0
        for p in range(lo, hi):
            g += w[indices[p]] * data[p]
        g = y[i] * g - 1.0
        a = alpha[i]
        if a <= 0.0:
            pg = min(g, 0.0)
        elif a >= C:
            pg = max(g, 0.0)
        else:
            pg = g
        if abs(pg) > max_violation:
            max_violation = abs(pg)
        if pg != 0.0 and qdiag[i] > 0.0:
            a_new = min(max(a - g / qdiag[i], 0.0), C)
            step = (a_new - a) * y[i]
            alpha[i] = a_new
            for p in range(lo, hi):
                w[indices[p]] += step * data[p]
    return max_violation


_cd_epoch_jit = njit(_cd_epoch_loop)


def _violations_py(data, indices, indptr, y, alpha, w, C):
    """Projected-gradient magnitude per dual variable at the current ``w``."""
    n = len(indptr) - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    margins = np.bincount(rows, weights=data * w[indices], minlength=n)
    g = y * margins - 1.0
    pg = np.where(alpha <= 0.0, np.minimum(g, 0.0), np.where(alpha >= C, np.maximum(g, 0.0), g))
    return np.abs(pg)


def _violations_loop(data, indices, indptr, y, alpha, w, C):
    n = indptr.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        g = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            g += w[indices[p]] * data[p]
        g = y[i] * g - 1.0
        if alpha[i] <= 0.0:
            pg = min(g, 0.0)
        elif alpha[i] >= C:
            pg = max(g, 0.0)
        else:
            pg = g
        out[i] = abs(pg)
    return out


_violations_jit = njit(_violations_loop)

if USE_NUMBA:
    cd_epoch = _cd_epoch_jit
    violations = _violations_jit
else:
    cd_epoch = _cd_epoch_py
    violations = _violations_py

BACKEND = "numba" if USE_NUMBA else "numpy"
