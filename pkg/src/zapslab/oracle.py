"""Brute-force dense references for tests and acceptance checks.

Nothing on the solver path imports this module. Everything here works on
explicit matrices with direct factorizations, so it shares no arithmetic
with the matrix-free implementations it checks.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.stats import multivariate_normal

MAX_DENSE = 4096


def dense_operator_matrix(A) -> np.ndarray:
    """Assemble ``A`` column by column from canonical basis vectors."""
    n = int(np.prod(A.input_shape))
    m = int(np.prod(A.output_shape))
    if max(n, m) > MAX_DENSE:
        raise ValueError(f"operator {m}x{n} exceeds the dense-oracle cap of {MAX_DENSE}")
    cols = np.empty((m, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        cols[:, j] = np.ravel(A.apply(e.reshape(A.input_shape)))
        e[j] = 0.0
    return cols


def dense_transform_matrix(transform, shape) -> np.ndarray:
    """Matrix of any linear map on arrays of ``shape`` (e.g. a wavelet synthesis)."""
    n = int(np.prod(shape))
    if n > MAX_DENSE:
        raise ValueError(f"dimension {n} exceeds the dense-oracle cap of {MAX_DENSE}")
    eye = np.eye(n)
    return np.stack([np.ravel(transform(eye[j].reshape(shape))) for j in range(n)], axis=1)


def woodbury_both_forms(A_dense, r_sq: float, sigma_y: float, residual):
    """Return ``(A^T (r^2 A A^T + s^2 I)^-1 res, (A^T A + eta I)^-1 A^T res / r^2)``."""
    A_dense = np.asarray(A_dense, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64).ravel()
    if r_sq <= 0:
        raise ValueError("r_sq must be positive")
    m, n = A_dense.shape
    direct = A_dense.T @ linalg.solve(r_sq * A_dense @ A_dense.T + sigma_y**2 * np.eye(m), residual,
                                      assume_a="pos")
    eta = sigma_y**2 / r_sq
    woodbury = linalg.solve(A_dense.T @ A_dense + eta * np.eye(n), A_dense.T @ residual,
                            assume_a="pos") / r_sq
    return direct, woodbury


def pinv_form(A_dense, r_sq: float, residual) -> np.ndarray:
    """Noiseless limit ``A^+ res / r^2`` via SVD."""
    return np.linalg.pinv(np.asarray(A_dense)) @ np.ravel(residual) / r_sq


def gaussian_conjugate_posterior(mu0, Sigma0, A_dense, y, sigma_y: float):
    """Closed-form posterior of ``x ~ N(mu0, Sigma0)`` given ``y = A x + N(0, s^2 I)``."""
    if sigma_y <= 0:
        raise ValueError("sigma_y must be positive")
    mu0 = np.ravel(mu0).astype(np.float64)
    Sigma0 = np.asarray(Sigma0, dtype=np.float64)
    A = np.asarray(A_dense, dtype=np.float64)
    y = np.ravel(y)
    gram = A @ Sigma0 @ A.T + sigma_y**2 * np.eye(A.shape[0])
    cho = linalg.cho_factor(gram)
    gain = linalg.cho_solve(cho, A @ Sigma0).T  # Sigma0 A^T gram^-1
    mean = mu0 + gain @ (y - A @ mu0)
    cov = Sigma0 - gain @ A @ Sigma0
    return mean, 0.5 * (cov + cov.T)


def finite_difference_gradient(f, p, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` at ``p`` (any shape)."""
    p = np.array(p, dtype=np.float64)
    grad = np.empty_like(p)
    flat, gflat = p.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(p)
        flat[i] = old - h
        down = f(p)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def finite_difference_hessian(f, p, h: float = 1e-4) -> np.ndarray:
    """Second-order central differences of scalar ``f``."""
    p = np.array(p, dtype=np.float64).ravel()
    n = p.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            def at(di, dj):
                q = p.copy()
                q[i] += di
                q[j] += dj
                return f(q)

            H[i, j] = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h)
    return H


def mixture_posterior_mean(weights, means, covariances, x_t, alpha_bar: float) -> np.ndarray:
    """``E[x0 | x_t]`` for a Gaussian mixture with dense covariances.

    Each component contributes its Gaussian conditional mean, weighted by the
    posterior probability of the component given ``x_t``.
    """
    x_t = np.ravel(x_t)
    n = x_t.size
    root = np.sqrt(alpha_bar)
    log_r, cond = [], []
    for w, mu, cov in zip(weights, means, covariances):
        mu = np.ravel(mu)
        marg = alpha_bar * cov + (1.0 - alpha_bar) * np.eye(n)
        log_r.append(np.log(w) + multivariate_normal.logpdf(x_t, root * mu, marg))
        cond.append(mu + root * cov @ linalg.solve(marg, x_t - root * mu, assume_a="pos"))
    log_r = np.array(log_r)
    r = np.exp(log_r - log_r.max())
    r /= r.sum()
    return np.tensordot(r, np.array(cond), axes=1)


def mixture_log_density(weights, means, covariances, x, alpha_bar: float) -> float:
    x = np.ravel(x)
    n = x.size
    terms = [
        np.log(w) + multivariate_normal.logpdf(x, np.sqrt(alpha_bar) * np.ravel(mu),
                                               alpha_bar * cov + (1.0 - alpha_bar) * np.eye(n))
        for w, mu, cov in zip(weights, means, covariances)
    ]
    top = max(terms)
    return float(top + np.log(np.sum(np.exp(np.array(terms) - top))))


def score_stop_chain(x_init, steps, zetas, diags, A_dense, W_dense, y, alpha_bars):
    """Dense replay of the guided chain with frozen scores.

    ``steps`` is a list of ``(index, tau, tau_prev, score, z)`` in execution
    order; ``alpha_bars[t]`` must include ``alpha_bars[0] = 1``. Uses the
    jump form of the DDPM posterior built directly from ``alpha_bars``.
    ``W_dense`` maps wavelet coefficients to pixels.
    """
    x = np.ravel(x_init).astype(np.float64)
    y = np.ravel(y)
    for index, tau, tau_prev, score, z in steps:
        ab, ab_prev = alpha_bars[tau], alpha_bars[tau_prev]
        alpha = ab / ab_prev
        beta = 1.0 - alpha
        sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab) * beta)
        x0_hat = (x + (1.0 - ab) * np.ravel(score)) / np.sqrt(ab)
        x_prime = (np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab) * x
                   + np.sqrt(ab_prev) * beta / (1.0 - ab) * x0_hat + sigma * np.ravel(z))
        hess = W_dense @ np.diag(np.ravel(diags[index])) @ W_dense.T
        jac = (np.eye(x.size) + (1.0 - ab) * hess) / np.sqrt(ab)
        x = x_prime + zetas[index] * jac @ A_dense.T @ (y - A_dense @ x0_hat)
    return x


def score_stop_loss(x_init, steps, zetas, diags, A_dense, W_dense, y, alpha_bars) -> float:
    x0 = score_stop_chain(x_init, steps, zetas, diags, A_dense, W_dense, y, alpha_bars)
    res = np.ravel(y) - A_dense @ x0
    return float(res @ res)
