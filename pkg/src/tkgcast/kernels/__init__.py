"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The compiled extension (Cython) is picked at import time when present;
otherwise the numpy reference implementations are used. Set
TKGCAST_PURE_PYTHON=1 to force the fallback. ``BACKEND`` names the active
implementation ("compiled" or "numpy").

All kernels operate on contiguous float64 arrays; the wrappers here
normalize dtype/layout so callers can pass whatever numpy hands them.
"""

import os

import numpy as np

from . import reference

if os.environ.get("TKGCAST_PURE_PYTHON"):
    _impl = reference
    BACKEND = "numpy"
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = reference
        BACKEND = "numpy"


def _rows2d(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x.reshape(1, -1), x.shape
    if x.ndim == 2:
        return x, x.shape
    return x.reshape(-1, x.shape[-1]), x.shape


def scatter_add_rows(out, idx, rows):
    """Accumulate rows[e] into out[idx[e]] sequentially; returns out."""
    out = np.ascontiguousarray(out, dtype=np.float64)
    rows2, _ = _rows2d(rows)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if rows2.shape[0] != idx.shape[0]:
        raise ValueError(f"{rows2.shape[0]} rows but {idx.shape[0]} indices")
    if rows2.shape[0] and rows2.shape[1] != out.shape[1]:
        raise ValueError(f"row width {rows2.shape[1]} != output width {out.shape[1]}")
    if idx.size and (idx.min() < 0 or idx.max() >= out.shape[0]):
        # the compiled kernel skips bounds checks, so validate here
        raise IndexError(f"scatter index out of range for {out.shape[0]} rows")
    return _impl.scatter_add_rows(out, idx, rows2)


def circular_correlate(a, b):
    """c[..., i] = sum_k a[..., k] * b[..., (k + i) % d], computed directly."""
    a2, shape = _rows2d(a)
    b2, _ = _rows2d(b)
    if a2.shape != b2.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return _impl.circular_correlate(a2, b2).reshape(shape)


def circular_convolve(a, b):
    """c[..., m] = sum_k a[..., k] * b[..., (m - k) % d], computed directly."""
    a2, shape = _rows2d(a)
    b2, _ = _rows2d(b)
    if a2.shape != b2.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return _impl.circular_convolve(a2, b2).reshape(shape)
