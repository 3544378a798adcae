"""Numpy fallback for the periodic two-channel filter bank.

Same contract as the compiled ``_kernels`` module: inputs are C-contiguous
``(batch, n)`` float64 arrays, filtering wraps modulo ``n``.
"""

import numpy as np


def _tap_indices(n, taps):
    return (2 * np.arange(n // 2)[:, None] + np.arange(taps)[None, :]) % n


def analysis_periodic(x, lo, hi):
    x = np.asarray(x, dtype=np.float64)
    windows = x[:, _tap_indices(x.shape[1], len(lo))]
    return windows @ lo, windows @ hi


def synthesis_periodic(a, d, lo, hi):
    a = np.asarray(a, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    n = 2 * a.shape[1]
    out = np.zeros((a.shape[0], n))
    idx = _tap_indices(n, len(lo))
    # for a fixed tap the target indices 2k + j are distinct, so plain
    # fancy-index accumulation is safe
    for j in range(len(lo)):
        out[:, idx[:, j]] += lo[j] * a + hi[j] * d
    return out
