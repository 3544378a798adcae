"""Linear forward models, measurement synthesis and regularized solves.

Images are float64 arrays shaped ``(channels, height, width)``. Blur operators
use periodic boundaries throughout, so every convolution is diagonal in the
2-D DFT and its adjoint is correlation with the same kernel.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .rng import stream


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve misses its tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class LinearOperator:
    """Forward model ``A`` mapping ``input_shape`` arrays to ``output_shape``."""

    input_shape: tuple
    output_shape: tuple
    name = "linear"
    #: True for diagonal 0/1 operators where ``A^T A`` is a projection
    has_exact_projection = False

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, v):
        raise NotImplementedError

    def pseudo_inverse(self, v):
        """Exact Moore-Penrose inverse, or ``NotImplementedError``."""
        raise NotImplementedError(f"{self.name} has no exact pseudo-inverse")

    @property
    def has_pseudo_inverse(self) -> bool:
        return type(self).pseudo_inverse is not LinearOperator.pseudo_inverse

    def normal(self, x):
        return self.adjoint(self.apply(x))

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ValueError(f"{self.name}: expected input {self.input_shape}, got {x.shape}")
        return x

    def _check_output(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.output_shape:
            raise ValueError(f"{self.name}: expected measurement {self.output_shape}, got {v.shape}")
        return v


class IdentityOperator(LinearOperator):
    name = "identity"
    has_exact_projection = True

    def __init__(self, shape):
        self.input_shape = self.output_shape = tuple(shape)

    def apply(self, x):
        return self._check_input(x).copy()

    def adjoint(self, v):
        return self._check_output(v).copy()

    def pseudo_inverse(self, v):
        return self._check_output(v).copy()

    def mask(self):
        return np.ones(self.input_shape)


class MatrixOperator(LinearOperator):
    """Dense matrix acting on flattened inputs; used for small oracle problems."""

    name = "matrix"

    def __init__(self, matrix, input_shape=None, output_shape=None):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        m, n = self.matrix.shape
        self.input_shape = tuple(input_shape) if input_shape is not None else (n,)
        self.output_shape = tuple(output_shape) if output_shape is not None else (m,)
        if int(np.prod(self.input_shape)) != n or int(np.prod(self.output_shape)) != m:
            raise ValueError("shapes do not match matrix dimensions")

    def apply(self, x):
        x = self._check_input(x)
        return (self.matrix @ x.ravel()).reshape(self.output_shape)

    def adjoint(self, v):
        v = self._check_output(v)
        return (self.matrix.T @ v.ravel()).reshape(self.input_shape)


class ConvolutionOperator(LinearOperator):
    """Periodic 2-D convolution with a fixed kernel, applied per channel.

    The kernel is renormalized to unit sum and centred: its middle tap sits
    on the output pixel.
    """

    name = "convolution"

    def __init__(self, shape, kernel):
        shape = tuple(shape)
        if len(shape) != 3:
            raise ValueError(f"expected (C, H, W) shape, got {shape}")
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2:
            raise ValueError("kernel must be a 2-D matrix")
        if not np.all(np.isfinite(kernel)):
            raise ValueError("kernel has non-finite entries")
        total = kernel.sum()
        if total <= 0:
            raise ValueError("kernel must have positive sum")
        kh, kw = kernel.shape
        _, H, W = shape
        if kh > H or kw > W:
            raise ValueError(f"kernel {kernel.shape} larger than image {H}x{W}")
        self.input_shape = self.output_shape = shape
        self.kernel = kernel / total
        padded = np.zeros((H, W))
        padded[:kh, :kw] = self.kernel
        padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        self._transfer = np.fft.rfft2(padded)

    def apply(self, x):
        x = self._check_input(x)
        return np.fft.irfft2(np.fft.rfft2(x) * self._transfer, s=x.shape[-2:])

    def adjoint(self, v):
        v = self._check_output(v)
        return np.fft.irfft2(np.fft.rfft2(v) * np.conj(self._transfer), s=v.shape[-2:])


def gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise ValueError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = np.arange(kernel_size) - kernel_size // 2
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def gaussian_blur_operator(shape, kernel_size: int = 61, sigma: float = 3.0) -> ConvolutionOperator:
    op = ConvolutionOperator(shape, gaussian_kernel(kernel_size, sigma))
    op.name = "gaussian_blur"
    return op


def motion_blur_operator(shape, kernel) -> ConvolutionOperator:
    kernel = np.asarray(kernel, dtype=np.float64)
    if not np.any(kernel):
        raise ValueError("motion kernel is all zeros")
    op = ConvolutionOperator(shape, kernel)
    op.name = "motion_blur"
    return op


def line_motion_kernel(size: int, angle: float, length: float | None = None) -> np.ndarray:
    """Rasterized straight-line motion kernel, a stand-in for file-provided kernels."""
    length = size if length is None else length
    kernel = np.zeros((size, size))
    c = size // 2
    for s in np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, 4 * size):
        i = int(round(c + s * np.sin(angle)))
        j = int(round(c + s * np.cos(angle)))
        if 0 <= i < size and 0 <= j < size:
            kernel[i, j] += 1.0
    return kernel / kernel.sum()


def load_kernel(path) -> np.ndarray:
    """Read a plain-text kernel: rows of whitespace-separated reals."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(tok) for tok in line.split()])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric kernel entry") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: kernel rows must be non-empty and equal length")
    return np.array(rows)


def save_kernel(path, kernel) -> None:
    np.savetxt(path, np.asarray(kernel), fmt="%.17g")


class MaskOperator(LinearOperator):
    """Diagonal 0/1 operator; the same spatial mask is applied to every channel."""

    name = "mask"
    has_exact_projection = True

    def __init__(self, shape, spatial_mask):
        shape = tuple(shape)
        spatial_mask = np.asarray(spatial_mask, dtype=np.float64)
        if spatial_mask.shape != shape[-2:]:
            raise ValueError(f"mask {spatial_mask.shape} does not match image {shape}")
        if not np.all((spatial_mask == 0) | (spatial_mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        self.input_shape = self.output_shape = shape
        self.spatial_mask = spatial_mask
        self._full = np.broadcast_to(spatial_mask, shape)

    def apply(self, x):
        return self._check_input(x) * self._full

    def adjoint(self, v):
        return self._check_output(v) * self._full

    def pseudo_inverse(self, v):
        return self.adjoint(v)

    def mask(self):
        return np.array(self._full)


def random_mask_operator(shape, keep_fraction: float = 0.3, seed=0) -> MaskOperator:
    """Keep exactly ``round(keep_fraction * H * W)`` pixels chosen by shuffling."""
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    shape = tuple(shape)
    H, W = shape[-2:]
    n_keep = int(round(keep_fraction * H * W))
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "mask")
    flat = np.zeros(H * W)
    flat[rng.permutation(H * W)[:n_keep]] = 1.0
    op = MaskOperator(shape, flat.reshape(H, W))
    op.name = "random_mask"
    return op


def box_mask_operator(shape, top_left, box_size) -> MaskOperator:
    shape = tuple(shape)
    H, W = shape[-2:]
    r, c = top_left
    bh, bw = (box_size, box_size) if np.isscalar(box_size) else box_size
    if r < 0 or c < 0 or bh < 0 or bw < 0 or r + bh > H or c + bw > W:
        raise ValueError(f"box at {top_left} of size {box_size} does not fit {H}x{W}")
    mask = np.ones((H, W))
    mask[r : r + bh, c : c + bw] = 0.0
    op = MaskOperator(shape, mask)
    op.name = "box_mask"
    return op


class DownsampleOperator(LinearOperator):
    """Block-average downsampling by an integer factor."""

    name = "downsample"

    def __init__(self, shape, factor: int):
        shape = tuple(shape)
        if factor < 1:
            raise ValueError("factor must be a positive integer")
        C, H, W = shape
        if H % factor or W % factor:
            raise ValueError(f"image {H}x{W} not divisible by factor {factor}")
        self.factor = factor
        self.input_shape = shape
        self.output_shape = (C, H // factor, W // factor)

    def apply(self, x):
        x = self._check_input(x)
        f = self.factor
        C, h, w = self.output_shape
        return x.reshape(C, h, f, w, f).mean(axis=(2, 4))

    def adjoint(self, v):
        return self._upsample(self._check_output(v)) / self.factor**2

    def pseudo_inverse(self, v):
        # rows of A are orthogonal with squared norm 1/f^2
        return self._upsample(self._check_output(v))

    def _upsample(self, v):
        f = self.factor
        return np.repeat(np.repeat(v, f, axis=1), f, axis=2)


def downsample_operator(shape, factor: int) -> DownsampleOperator:
    return DownsampleOperator(shape, factor)


def _cubic(t, a=-0.5):
    t = np.abs(t)
    return np.where(
        t <= 1,
        (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def _bicubic_matrix(n: int, factor: int) -> np.ndarray:
    # antialiased Keys kernel stretched by the factor, periodic wrap
    m = n // factor
    rows = np.zeros((m, n))
    for i in range(m):
        centre = (i + 0.5) * factor - 0.5
        for j in range(int(np.floor(centre - 2 * factor)), int(np.ceil(centre + 2 * factor)) + 1):
            rows[i, j % n] += _cubic((j - centre) / factor)
        rows[i] /= rows[i].sum()
    return rows


class BicubicDownsampleOperator(LinearOperator):
    """Separable antialiased bicubic downsampling; no exact pseudo-inverse."""

    name = "bicubic_downsample"

    def __init__(self, shape, factor: int):
        shape = tuple(shape)
        C, H, W = shape
        if H % factor or W % factor:
            raise ValueError(f"image {H}x{W} not divisible by factor {factor}")
        self.factor = factor
        self.input_shape = shape
        self.output_shape = (C, H // factor, W // factor)
        self._rows = _bicubic_matrix(H, factor)
        self._cols = _bicubic_matrix(W, factor)

    def apply(self, x):
        x = self._check_input(x)
        return np.einsum("ih,chw,jw->cij", self._rows, x, self._cols)

    def adjoint(self, v):
        v = self._check_output(v)
        return np.einsum("ih,cij,jw->chw", self._rows, v, self._cols)


class Measurement(NamedTuple):
    y: np.ndarray
    sigma_y: float
    seed: object


def measure(A: LinearOperator, x0, sigma_y: float = 0.05, seed=0) -> Measurement:
    """Synthesize ``y = A x0 + sigma_y * eps`` from the measurement-noise stream."""
    if sigma_y < 0:
        raise ValueError("sigma_y must be non-negative")
    clean = A.apply(x0)
    if sigma_y == 0:
        return Measurement(clean, 0.0, seed)
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "measurement-noise")
    return Measurement(clean + sigma_y * rng.standard_normal(A.output_shape), float(sigma_y), seed)


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def solve_regularized_normal(A: LinearOperator, eta: float, v, tol: float = 1e-10, max_iters: int = 500) -> CGResult:
    """Solve ``(A^T A + eta I) w = v`` by conjugate gradients.

    Raises :class:`ConvergenceError` if the relative residual is still above
    ``tol`` after ``max_iters`` iterations.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    v = np.asarray(v, dtype=np.float64)
    v_norm = np.linalg.norm(v)
    x = np.zeros_like(v)
    if v_norm == 0:
        return CGResult(x, 0, 0.0)

    def op(p):
        return A.normal(p) + eta * p

    r = v.copy()
    p = r.copy()
    rs = np.vdot(r, r)
    for it in range(1, max_iters + 1):
        Ap = op(p)
        step = rs / np.vdot(p, Ap)
        x += step * p
        r -= step * Ap
        rs_new = np.vdot(r, r)
        rel = np.sqrt(rs_new) / v_norm
        if rel <= tol:
            # confirm against the true residual to guard against drift
            true_rel = np.linalg.norm(v - op(x)) / v_norm
            if true_rel <= tol:
                return CGResult(x, it, float(true_rel))
        p = r + (rs_new / rs) * p
        rs = rs_new
    rel = float(np.linalg.norm(v - op(x)) / v_norm)
    if rel <= tol:
        return CGResult(x, max_iters, rel)
    raise ConvergenceError("conjugate gradient did not converge", rel, max_iters)


def save_mask_pgm(path, op: MaskOperator) -> None:
    from .io import write_pgm

    write_pgm(path, op.spatial_mask)
