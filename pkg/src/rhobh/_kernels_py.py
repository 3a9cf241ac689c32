"""Pure-numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` extension; used
when the extension is not built or ``RHOBH_PURE_PYTHON`` is set.
"""

import numpy as np

_INV_SQRT_2PI = 0.3989422804014327
_CHUNK = 2**22


def mixture_rows(y, centers, coef, h):
    """``out[t, b] = sum_m coef[t, m] * phi_h(y[t, b] - centers[m])``."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    T, B = y.shape
    out = np.empty((T, B))
    norm = _INV_SQRT_2PI / h
    for t in range(T):
        d = (y[t][:, None] - centers[None, :]) / h
        out[t] = np.exp(-0.5 * d * d) @ coef[t] * norm
    return out


def mixture_points(y, centers, weights, h):
    """``out[n] = sum_m weights[m] * phi_h(y[n] - centers[m])``."""
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    out = np.empty(y.size)
    step = max(1, _CHUNK // max(centers.size, 1))
    norm = _INV_SQRT_2PI / h
    for start in range(0, y.size, step):
        d = (y[start:start + step, None] - centers[None, :]) / h
        out[start:start + step] = np.exp(-0.5 * d * d) @ weights * norm
    return out


def ecdf_weighted_sum(samples, scale, coef, t_sorted, offset, denom):
    """``out[j] = sum_t coef[t] * (offset + #{b: samples[t, b] <= scale[t] * t_sorted[j]}) / denom``.

    Rows of ``samples`` must be sorted ascending; ``t_sorted`` ascending.
    """
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    t_sorted = np.ascontiguousarray(t_sorted, dtype=np.float64)
    out = np.zeros(t_sorted.size)
    for t in range(samples.shape[0]):
        counts = np.searchsorted(samples[t], scale[t] * t_sorted, side="right")
        out += coef[t] * (counts + offset) / denom
    return out
