"""Orthonormal 2-D Daubechies transforms with periodic boundaries.

Coefficients are kept in the usual pyramid layout, same shape as the image:
after each level the top-left quadrant holds the coarse block, top-right the
band high-passed along width (LH), bottom-left high-passed along height (HL)
and bottom-right both (HH). The flat "transform order" used for parameter
files is: coarse block, then LH, HL, HH for each level from coarsest to
finest, each block raveled row-major, channels outermost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels

# Extremal-phase scaling filters (sum sqrt(2)), from spectral factorization
# at 50 digits; dbN has 2N taps.
_SCALING_FILTERS = {
    "db2": (
        0.48296291314453414337,
        0.83651630373780790558,
        0.22414386804201338103,
        -0.12940952255126038117,
    ),
    "db4": (
        0.23037781330889650086,
        0.71484657055291564709,
        0.63088076792985890788,
        -0.027983769416859854211,
        -0.18703481171909308408,
        0.030841381835560763627,
        0.032883011666885199735,
        -0.010597401785069032105,
    ),
    "db6": (
        0.11154074335010946362,
        0.49462389039845308568,
        0.75113390802109535068,
        0.31525035170919762909,
        -0.22626469396543982008,
        -0.12976686756726193556,
        0.097501605587323049102,
        0.027522865530305728626,
        -0.031582039317486029565,
        0.00055384220116149613925,
        0.0047772575109455106396,
        -0.0010773010853084795649,
    ),
    "db8": (
        0.054415842243104009955,
        0.31287159091429997066,
        0.67563073629728980681,
        0.58535468365420671277,
        -0.015829105256349305667,
        -0.28401554296154692652,
        0.00047248457391328277036,
        0.12874742662047845886,
        -0.01736930100180754617,
        -0.044088253930794751507,
        0.013981027917398281649,
        0.0087460940474057767164,
        -0.0048703529934515743104,
        -0.0003917403733769470463,
        0.00067544940645056936637,
        -0.00011747678412476953373,
    ),
}

FAMILIES = tuple(_SCALING_FILTERS)


@dataclass(frozen=True)
class WaveletBasis:
    family: str = "db4"
    levels: int = 2
    lo: np.ndarray = field(init=False, repr=False, compare=False)
    hi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in _SCALING_FILTERS:
            raise ValueError(f"unknown wavelet family {self.family!r}; choose from {FAMILIES}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        lo = np.array(_SCALING_FILTERS[self.family])
        hi = lo[::-1] * (-1.0) ** np.arange(lo.size)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def check_shape(self, shape) -> None:
        H, W = shape[-2:]
        block = 2**self.levels
        if H % block or W % block:
            raise ValueError(
                f"image {H}x{W} not divisible by 2^{self.levels}; reduce levels or pad"
            )


def _analysis_last_axis(x, basis):
    lead = x.shape[:-1]
    a, d = kernels.analysis_periodic(
        np.ascontiguousarray(x.reshape(-1, x.shape[-1])), basis.lo, basis.hi
    )
    half = x.shape[-1] // 2
    return a.reshape(*lead, half), d.reshape(*lead, half)


def _synthesis_last_axis(a, d, basis):
    lead = a.shape[:-1]
    x = kernels.synthesis_periodic(
        np.ascontiguousarray(a.reshape(-1, a.shape[-1])),
        np.ascontiguousarray(d.reshape(-1, d.shape[-1])),
        basis.lo,
        basis.hi,
    )
    return x.reshape(*lead, 2 * a.shape[-1])


def _forward_level(block, basis):
    h, w = block.shape[-2:]
    lo_w, hi_w = _analysis_last_axis(block, basis)
    out = np.empty_like(block)
    for half, col in ((lo_w, 0), (hi_w, w // 2)):
        lo_h, hi_h = _analysis_last_axis(np.swapaxes(half, -1, -2), basis)
        out[..., : h // 2, col : col + w // 2] = np.swapaxes(lo_h, -1, -2)
        out[..., h // 2 :, col : col + w // 2] = np.swapaxes(hi_h, -1, -2)
    return out


def _inverse_level(block, basis):
    h, w = block.shape[-2:]
    halves = []
    for col in (0, w // 2):
        top = np.swapaxes(block[..., : h // 2, col : col + w // 2], -1, -2)
        bottom = np.swapaxes(block[..., h // 2 :, col : col + w // 2], -1, -2)
        halves.append(np.swapaxes(_synthesis_last_axis(top, bottom, basis), -1, -2))
    return _synthesis_last_axis(halves[0], halves[1], basis)


def dwt2_forward(x, basis: WaveletBasis) -> np.ndarray:
    """Multi-level orthonormal transform of each channel of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("need at least a 2-D array")
    basis.check_shape(x.shape)
    out = x.copy()
    h, w = x.shape[-2:]
    for _ in range(basis.levels):
        out[..., :h, :w] = _forward_level(out[..., :h, :w], basis)
        h, w = h // 2, w // 2
    return out


def dwt2_inverse(c, basis: WaveletBasis) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim < 2:
        raise ValueError("need at least a 2-D array")
    basis.check_shape(c.shape)
    out = c.copy()
    H, W = c.shape[-2:]
    for level in reversed(range(basis.levels)):
        h, w = H >> level, W >> level
        out[..., :h, :w] = _inverse_level(out[..., :h, :w], basis)
    return out


def apply_diagonalized_hessian(d, v, basis: WaveletBasis) -> np.ndarray:
    """``W D W^T v``: scale the wavelet coefficients of ``v`` by ``d``.

    ``d`` is in pyramid layout and may broadcast over channels, e.g. shape
    ``(1, H, W)`` for a diagonal shared across channels.
    """
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    try:
        np.broadcast_shapes(d.shape, v.shape)
    except ValueError:
        raise ValueError(f"diagonal shape {d.shape} incompatible with {v.shape}") from None
    if d.ndim > v.ndim or np.broadcast_shapes(d.shape, v.shape) != v.shape:
        raise ValueError(f"diagonal shape {d.shape} incompatible with {v.shape}")
    return dwt2_inverse(d * dwt2_forward(v, basis), basis)


@lru_cache(maxsize=32)
def _order(H, W, levels):
    idx = np.arange(H * W).reshape(H, W)
    h, w = H >> levels, W >> levels
    parts = [idx[:h, :w].ravel()]
    for _ in range(levels):
        parts.append(idx[:h, w : 2 * w].ravel())  # LH
        parts.append(idx[h : 2 * h, :w].ravel())  # HL
        parts.append(idx[h : 2 * h, w : 2 * w].ravel())  # HH
        h, w = 2 * h, 2 * w
    order = np.concatenate(parts)
    order.setflags(write=False)
    return order


def transform_order(shape, levels: int) -> np.ndarray:
    """Permutation taking a raveled ``(H, W)`` pyramid to transform order."""
    H, W = shape[-2:]
    return _order(H, W, levels)


def to_transform_order(c, levels: int) -> np.ndarray:
    """Flatten pyramid-layout coefficients ``(..., H, W)`` channel by channel."""
    c = np.asarray(c)
    order = transform_order(c.shape, levels)
    return c.reshape(*c.shape[:-2], -1)[..., order].reshape(-1)


def from_transform_order(flat, shape, levels: int) -> np.ndarray:
    shape = tuple(shape)
    order = transform_order(shape, levels)
    flat = np.asarray(flat, dtype=np.float64).reshape(*shape[:-2], -1)
    out = np.empty_like(flat)
    out[..., order] = flat
    return out.reshape(shape)


def subband_levels(shape, levels: int) -> np.ndarray:
    """Integer map in pyramid layout: 0 for the coarse block, ``k`` for level-``k`` details.

    Level 1 is the finest scale.
    """
    H, W = shape[-2:]
    out = np.zeros((H, W), dtype=int)
    h, w = H, W
    for k in range(1, levels + 1):
        out[:h, :w] = k
        h, w = h // 2, w // 2
    out[:h, :w] = 0
    return out
