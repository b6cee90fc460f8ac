"""Hot inner loops: im2col/col2im for 3x3 convolutions and the per-pixel
importance update.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version. ``AILSR_BACKEND`` selects one at import time (``numba`` or
``numpy``); the default is numba when it imports. The convolution kernels
visit elements in the same order on both paths and agree bitwise; the
importance update may differ in the last ulp (libm vs numpy ``exp``).
"""

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _select_backend():
    requested = os.environ.get("AILSR_BACKEND", "").strip().lower()
    if requested in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if requested not in ("numba", "numpy"):
        raise ValueError(f"AILSR_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        raise ImportError("AILSR_BACKEND=numba but numba is not installed")
    return requested


BACKEND = _select_backend()


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def im2col_numpy(x, k, pad):
    """(n, c, h, w) -> (c*k*k, n*h*w) patch matrix for a stride-1 conv."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = h + 2 * pad - k + 1
    wo = w + 2 * pad - k + 1
    cols = np.empty((c, k, k, n, ho, wo), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            cols[:, ki, kj] = xp[:, :, ki:ki + ho, kj:kj + wo].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def col2im_numpy(cols, shape, k, pad):
    """Adjoint of :func:`im2col_numpy`: scatter-add columns back to an image."""
    n, c, h, w = shape
    ho = h + 2 * pad - k + 1
    wo = w + 2 * pad - k + 1
    cols = cols.reshape(c, k, k, n, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + ho, kj:kj + wo] += cols[:, ki, kj].transpose(1, 0, 2, 3)
    return xp[:, :, pad:pad + h, pad:pad + w].copy()


def importance_update_numpy(w_prev, d, lam):
    return np.minimum(1.0, w_prev + lam * np.exp(-d))


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_nb(x, k, pad):
        n, c, h, w = x.shape
        ho = h + 2 * pad - k + 1
        wo = w + 2 * pad - k + 1
        cols = np.empty((c * k * k, n * ho * wo))
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    for b in range(n):
                        base = b * ho * wo
                        for i in range(ho):
                            si = i + ki - pad
                            o = base + i * wo
                            if si < 0 or si >= h:
                                for j in range(wo):
                                    cols[row, o + j] = 0.0
                                continue
                            for j in range(wo):
                                sj = j + kj - pad
                                cols[row, o + j] = x[b, ci, si, sj] if 0 <= sj < w else 0.0
        return cols

    @njit(cache=True)
    def _col2im_nb(cols, n, c, h, w, k, pad):
        ho = h + 2 * pad - k + 1
        wo = w + 2 * pad - k + 1
        out = np.zeros((n, c, h, w))
        # offset-major order mirrors the numpy path so sums agree bitwise
        for ki in range(k):
            for kj in range(k):
                for b in range(n):
                    base = b * ho * wo
                    for ci in range(c):
                        row = (ci * k + ki) * k + kj
                        for i in range(ho):
                            si = i + ki - pad
                            if si < 0 or si >= h:
                                continue
                            for j in range(wo):
                                sj = j + kj - pad
                                if 0 <= sj < w:
                                    out[b, ci, si, sj] += cols[row, base + i * wo + j]
        return out

    @njit(cache=True)
    def _importance_update_nb(w_prev, d, lam):
        flat_w = w_prev.ravel()
        flat_d = d.ravel()
        out = np.empty(flat_w.size)
        for i in range(flat_w.size):
            v = flat_w[i] + lam * math.exp(-flat_d[i])
            out[i] = 1.0 if v > 1.0 else v
        return out.reshape(w_prev.shape)

    def im2col_numba(x, k, pad):
        return _im2col_nb(np.ascontiguousarray(x, dtype=np.float64), k, pad)

    def col2im_numba(cols, shape, k, pad):
        n, c, h, w = shape
        return _col2im_nb(np.ascontiguousarray(cols), n, c, h, w, k, pad)

    def importance_update_numba(w_prev, d, lam):
        return _importance_update_nb(
            np.ascontiguousarray(w_prev, dtype=np.float64),
            np.ascontiguousarray(d, dtype=np.float64),
            float(lam),
        )


_TABLE = {
    "numpy": (im2col_numpy, col2im_numpy, importance_update_numpy),
}
if HAVE_NUMBA:
    _TABLE["numba"] = (im2col_numba, col2im_numba, importance_update_numba)


def get_kernels(backend=None):
    """Return ``(im2col, col2im, importance_update)`` for a backend."""
    return _TABLE[backend or BACKEND]


im2col, col2im, importance_update_kernel = get_kernels()
