"""Pure-numpy implementations of the hot kernels.

These are the fallback backend used when the compiled extension is not
available (or when TKGCAST_PURE_PYTHON is set). Semantics are identical to
``tkgcast.kernels._speedups``; the compiled versions only replace slow
numpy access patterns (np.add.at, rolled-index loops) with C loops.
"""

import numpy as np


def scatter_add_rows(out, idx, rows):
    """out[idx[e], :] += rows[e, :] for every e, accumulating in index order."""
    np.add.at(out, idx, rows)
    return out


def circular_correlate(a, b):
    """Row-wise circular correlation: c[e, i] = sum_k a[e, k] * b[e, (k + i) % d].

    Computed directly, one shift per output position (no FFT).
    """
    d = a.shape[-1]
    out = np.empty_like(a)
    for i in range(d):
        out[:, i] = np.einsum("ek,ek->e", a, np.roll(b, -i, axis=-1))
    return out


def circular_convolve(a, b):
    """Row-wise circular convolution: c[e, m] = sum_k a[e, k] * b[e, (m - k) % d]."""
    d = a.shape[-1]
    ks = np.arange(d)
    out = np.empty_like(a)
    for m in range(d):
        out[:, m] = np.einsum("ek,ek->e", a, b[:, (m - ks) % d])
    return out
