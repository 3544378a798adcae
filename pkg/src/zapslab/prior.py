"""Analytic score providers standing in for a learned diffusion prior.

A Gaussian mixture whose components share one orthogonal eigenbasis (pixels
or a wavelet basis) stays a Gaussian mixture under forward diffusion, so its
score, Tweedie denoiser and Hessian are available in closed form.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule
from .wavelet import WaveletBasis, dwt2_forward, dwt2_inverse, subband_levels

# components whose log-responsibility falls below this are dropped
LOG_RESPONSIBILITY_FLOOR = -40.0


class ScoreProvider:
    """Interface for ``grad log p_t(x_t)``; external models plug in here."""

    has_exact_hessian = False

    def score(self, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
        raise NotImplementedError

    def hessian_apply(self, x_t, t: int, schedule: NoiseSchedule, v) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no exact Hessian")


class CountingScore(ScoreProvider):
    """Wraps a provider and counts score evaluations (NFEs)."""

    def __init__(self, inner: ScoreProvider):
        self.inner = inner
        self.calls = 0
        self.has_exact_hessian = inner.has_exact_hessian

    def score(self, x_t, t, schedule):
        self.calls += 1
        return self.inner.score(x_t, t, schedule)

    def hessian_apply(self, x_t, t, schedule, v):
        return self.inner.hessian_apply(x_t, t, schedule, v)


class GaussianMixturePrior(ScoreProvider):
    """Mixture of Gaussians with covariances ``U diag(d_k) U^T``.

    Parameters
    ----------
    weights : array (K,)
        Mixing weights; must be positive and sum to one.
    means : array (K, *shape)
    variances : array broadcastable to (K, *shape), or (K,) scalars
        Diagonal of each covariance in the shared eigenbasis. For a wavelet
        basis this is in pyramid layout.
    basis : WaveletBasis or None
        ``None`` means the pixel basis (``U = I``).
    """

    has_exact_hessian = True

    def __init__(self, weights, means, variances, basis: WaveletBasis | None = None):
        weights = np.asarray(weights, dtype=np.float64).ravel()
        means = np.asarray(means, dtype=np.float64)
        K = weights.size
        if means.shape[0] != K:
            raise ValueError(f"{K} weights but {means.shape[0]} means")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        self.shape = means.shape[1:]
        variances = np.asarray(variances, dtype=np.float64)
        if variances.ndim == 1 and variances.size == K:
            variances = variances.reshape((K,) + (1,) * len(self.shape))
        try:
            full = np.broadcast_to(variances, means.shape)
        except ValueError:
            raise ValueError(f"variances {variances.shape} do not broadcast to {means.shape}") from None
        if np.any(full <= 0) or not np.all(np.isfinite(full)):
            raise ValueError("covariance diagonals must be strictly positive")
        if basis is not None:
            basis.check_shape(self.shape)
        self.weights = weights
        self.means = means
        self.variances = variances
        self.basis = basis
        self._log_weights = np.log(weights)
        self._eig_means = self._to_eig(means)
        self._n = int(np.prod(self.shape))

    @property
    def K(self) -> int:
        return self.weights.size

    def _to_eig(self, x):
        return x if self.basis is None else dwt2_forward(x, self.basis)

    def _from_eig(self, c):
        return c if self.basis is None else dwt2_inverse(c, self.basis)

    def _components(self, x_t, t, schedule):
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape != self.shape:
            raise ValueError(f"expected state of shape {self.shape}, got {x_t.shape}")
        ab = schedule.alpha_bar(t)
        lam = np.broadcast_to(ab * self.variances + (1.0 - ab), self._eig_means.shape)
        diff = self._to_eig(x_t)[None] - np.sqrt(ab) * self._eig_means
        axes = tuple(range(1, diff.ndim))
        log_comp = (
            self._log_weights
            - 0.5 * np.sum(diff**2 / lam, axis=axes)
            - 0.5 * np.sum(np.log(lam), axis=axes)
        )
        log_norm = logsumexp(log_comp)
        log_resp = log_comp - log_norm
        resp = np.where(log_resp < LOG_RESPONSIBILITY_FLOOR, 0.0, np.exp(log_resp))
        resp /= resp.sum()
        return resp, -diff / lam, lam, log_norm

    def log_density(self, x_t, t: int, schedule: NoiseSchedule) -> float:
        """``log p_t(x_t)`` of the diffused mixture."""
        *_, log_norm = self._components(x_t, t, schedule)
        return float(log_norm - 0.5 * self._n * np.log(2 * np.pi))

    def responsibilities(self, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
        return self._components(x_t, t, schedule)[0]

    def score(self, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
        resp, grads, _, _ = self._components(x_t, t, schedule)
        return self._from_eig(np.tensordot(resp, grads, axes=1))

    def hessian_apply(self, x_t, t: int, schedule: NoiseSchedule, v) -> np.ndarray:
        """``(d^2 log p_t / dx_t^2) v`` in closed form."""
        resp, grads, lam, _ = self._components(x_t, t, schedule)
        V = self._to_eig(np.asarray(v, dtype=np.float64))
        axes = tuple(range(1, grads.ndim))
        g_dot_v = np.sum(grads * V[None], axis=axes)
        mean_grad = np.tensordot(resp, grads, axes=1)
        out = np.tensordot(resp, -V[None] / lam, axes=1)
        out += np.tensordot(resp * g_dot_v, grads, axes=1)
        out -= mean_grad * np.sum(mean_grad * V)
        return self._from_eig(out)

    def hessian_diagonal(self, t: int, schedule: NoiseSchedule) -> np.ndarray:
        """Exact eigen-domain Hessian diagonal of a single-component prior."""
        if self.K != 1:
            raise ValueError("Hessian is basis-diagonal only for a single component")
        ab = schedule.alpha_bar(t)
        return -1.0 / np.broadcast_to(ab * self.variances[0] + (1.0 - ab), self.shape)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        k = rng.choice(self.K, p=self.weights)
        std = np.sqrt(np.broadcast_to(self.variances[k], self.shape))
        return self.means[k] + self._from_eig(std * rng.standard_normal(self.shape))


def gaussian_prior(mean, variances, basis: WaveletBasis | None = None) -> GaussianMixturePrior:
    mean = np.asarray(mean, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    return GaussianMixturePrior([1.0], mean[None], variances[None], basis)


def wavelet_level_variances(shape, basis: WaveletBasis, coarse: float, details) -> np.ndarray:
    """Pyramid-layout variances: ``coarse`` for the coarse block, ``details[k-1]`` at level ``k``."""
    details = np.asarray(details, dtype=np.float64)
    if details.size != basis.levels:
        raise ValueError(f"need {basis.levels} detail variances, got {details.size}")
    table = np.concatenate(([coarse], details))
    return np.broadcast_to(table[subband_levels(shape, basis.levels)], tuple(shape)).copy()


def desk_gaussian_prior(shape=(1, 32, 32), basis: WaveletBasis | None = None, mean: float = 0.5,
                        coarse: float = 1.0, details=None) -> GaussianMixturePrior:
    """Single Gaussian with wavelet-diagonal covariance used by the desk presets.

    Variance falls off toward fine scales, loosely mimicking natural-image
    spectra, so reconstructions have spatial structure to recover. The
    default detail variance is ``0.002 * 5**(k - 1)`` at level ``k``, giving
    pixel standard deviations near 0.2 for a 32x32 image.
    """
    basis = basis or WaveletBasis("db4", 2)
    if details is None:
        details = [0.002 * 5.0 ** (level - 1) for level in range(1, basis.levels + 1)]
    var = wavelet_level_variances(shape, basis, coarse, details)
    return gaussian_prior(np.full(shape, mean), var, basis)


def forward_diffuse(x0, t: int, schedule: NoiseSchedule, eps) -> np.ndarray:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; ``t = 0`` returns ``x0``."""
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps)


def tweedie_denoise(x_t, t: int, schedule: NoiseSchedule, score) -> np.ndarray:
    """Posterior mean ``E[x0 | x_t]`` from the score at ``(x_t, t)``."""
    ab = schedule.alpha_bar(t)
    if ab <= 0:
        raise ValueError("alpha_bar must be positive")
    return (np.asarray(x_t) + (1.0 - ab) * np.asarray(score)) / np.sqrt(ab)


def gmm_score(prior: GaussianMixturePrior, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
    return prior.score(x_t, t, schedule)


def gmm_exact_hessian_apply(prior: GaussianMixturePrior, x_t, t: int, schedule: NoiseSchedule, v) -> np.ndarray:
    return prior.hessian_apply(x_t, t, schedule, v)


def _floats(text):
    return [float(tok) for tok in text.replace(",", " ").split()]


def load_prior(path) -> GaussianMixturePrior:
    """Load a mixture prior from a ``key=value`` text file.

    Keys: ``K``, ``shape`` (``C,H,W`` or ``n``), ``weights``, ``means``
    (a constant or a file with one row per component), ``covariance``
    (``scalar``, ``pixel_diag`` or ``wavelet_diag``), ``variances``
    (per-component scalars) or ``variance_file`` (one row per component,
    pyramid layout for ``wavelet_diag``), ``wavelet`` and ``levels``.
    Relative file paths resolve against the spec file's directory.
    """
    fields = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            fields[key] = value
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        K = int(fields.get("K", "1"))
        shape = tuple(int(s) for s in fields["shape"].split(","))
        weights = _floats(fields.get("weights", " ".join(["%r" % (1.0 / K)] * K)))
        kind = fields.get("covariance", "scalar")
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc}") from None
    n = int(np.prod(shape))
    means_spec = fields.get("means", "0")
    try:
        means = np.full((K,) + shape, float(means_spec))
    except ValueError:
        means = np.loadtxt(resolve(means_spec), ndmin=2).reshape((K,) + shape)
    basis = None
    if kind == "wavelet_diag":
        basis = WaveletBasis(fields.get("wavelet", "db4"), int(fields.get("levels", "2")))
    elif kind not in ("scalar", "pixel_diag"):
        raise ValueError(f"{path}: unknown covariance kind {kind!r}")
    if "variance_file" in fields:
        variances = np.loadtxt(resolve(fields["variance_file"]), ndmin=2)
        if variances.shape != (K, n):
            raise ValueError(f"{path}: variance file must have {K} rows of {n} values")
        variances = variances.reshape((K,) + shape)
    else:
        variances = np.array(_floats(fields.get("variances", "1")))
        if variances.size == 1:
            variances = np.repeat(variances, K)
    return GaussianMixturePrior(np.array(weights), means, variances, basis)
