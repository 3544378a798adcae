"""Named comparisons of the solver against the dense oracles.

Each check returns a :class:`CheckResult`; ``zapslab oracle --check <name>``
prints it, and the acceptance tests assert on it.
"""

from __future__ import annotations

import time
from typing import NamedTuple

import numpy as np

from .oracle import (
    dense_operator_matrix,
    dense_transform_matrix,
    finite_difference_gradient,
    gaussian_conjugate_posterior,
    mixture_posterior_mean,
    score_stop_loss,
    woodbury_both_forms,
)
from .operators import MatrixOperator, gaussian_blur_operator
from .prior import GaussianMixturePrior, gaussian_prior, tweedie_denoise
from .sampler import GuidanceConfig, dps_guidance, pigdm_direction, run_reverse, zaps_guided_step
from .schedule import build_irregular_subschedule, build_linear_schedule
from .wavelet import FAMILIES, WaveletBasis, dwt2_forward, dwt2_inverse
from .zaps import ZapsConfig, ZapsParams, backprop_unroll, finetune


class CheckResult(NamedTuple):
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.value:.3g} vs tol {self.tolerance:.3g} in {self.seconds:.2f}s{extra}"


def _rel(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_woodbury(n_ops: int = 50, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    """Matrix-free Woodbury guidance vs the direct measurement-domain form."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_ops):
        m = int(rng.integers(1, 13))
        n = int(rng.integers(m, 21))
        M = rng.standard_normal((m, n))
        res = rng.standard_normal(m)
        r_sq = float(rng.uniform(0.1, 2.0))
        for eta in (1e-3, 1.0, 10.0):
            sigma = np.sqrt(eta * r_sq)
            direct, _ = woodbury_both_forms(M, r_sq, sigma, res)
            ours = pigdm_direction(MatrixOperator(M), res, r_sq, sigma)
            worst = max(worst, _rel(ours, direct))
    return CheckResult("woodbury", worst <= tol, worst, tol, time.perf_counter() - start,
                       f"{n_ops} operators x 3 eta")


def check_dwt(tol: float = 1e-10, sizes=(8, 16, 32, 64, 128, 256), seed: int = 0) -> CheckResult:
    """Perfect reconstruction and energy preservation across families, sizes and levels."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for family in FAMILIES:
        for size in sizes:
            for levels in (1, 2, 3):
                basis = WaveletBasis(family, levels)
                x = rng.standard_normal((1, size, size))
                c = dwt2_forward(x, basis)
                recon = np.max(np.abs(dwt2_inverse(c, basis) - x))
                energy = abs(np.sum(c**2) - np.sum(x**2)) / np.sum(x**2)
                worst = max(worst, recon, energy)
    return CheckResult("dwt", worst <= tol, worst, tol, time.perf_counter() - start,
                       f"{len(FAMILIES)} families, sizes {sizes[0]}-{sizes[-1]}, levels 1-3")


def _random_gmm(rng, K, shape, basis):
    n = int(np.prod(shape))
    weights = rng.dirichlet(np.ones(K))
    means = rng.normal(0.0, 1.0, (K,) + tuple(shape))
    variances = rng.uniform(0.05, 2.0, (K,) + tuple(shape))
    prior = GaussianMixturePrior(weights, means, variances, basis)
    if basis is None:
        U = np.eye(n)
    else:
        U = dense_transform_matrix(lambda c: dwt2_inverse(c, basis), shape)
    covs = [U @ np.diag(v.ravel()) @ U.T for v in variances]
    return prior, covs


def check_tweedie(n_draws: int = 100, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    """Score-based Tweedie denoiser vs the mixture conditional-mean oracle."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    schedule = build_linear_schedule(1000)
    priors = [
        _random_gmm(rng, 5, (64,), None),
        _random_gmm(rng, 5, (17,), None),
        _random_gmm(rng, 5, (1, 8, 8), WaveletBasis("db2", 2)),
        _random_gmm(rng, 5, (1, 8, 8), WaveletBasis("db4", 1)),
    ]
    worst = 0.0
    for k in range(n_draws):
        prior, covs = priors[k % len(priors)]
        t = int(rng.integers(1, schedule.T + 1))
        ab = schedule.alpha_bar(t)
        comp = rng.choice(prior.K, p=prior.weights)
        x0 = prior.means[comp] + rng.normal(0.0, 1.0, prior.shape)
        x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * rng.standard_normal(prior.shape)
        ours = tweedie_denoise(x_t, t, schedule, prior.score(x_t, t, schedule))
        ref = mixture_posterior_mean(prior.weights, prior.means, covs, x_t, ab)
        worst = max(worst, _rel(ours, ref))
    return CheckResult("tweedie", worst <= tol, worst, tol, time.perf_counter() - start,
                       f"{n_draws} draws, 5-component mixtures up to 64-D")


def check_diagonalization(seed: int = 0, tol: float = 1e-10) -> CheckResult:
    """ZAPS step with the exact diagonal equals the exact-Hessian DPS step."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    schedule = build_linear_schedule(1000)
    shape = (1, 16, 16)
    basis = WaveletBasis("db4", 2)
    prior = gaussian_prior(rng.uniform(0, 1, shape), rng.uniform(0.01, 1.0, shape), basis)
    A = gaussian_blur_operator(shape, 5, 1.0)
    y = rng.standard_normal(shape)
    worst = 0.0
    for t in (1, 10, 100, 500, 1000):
        x_t = rng.standard_normal(shape)
        x0_hat = tweedie_denoise(x_t, t, schedule, prior.score(x_t, t, schedule))
        x_prime = rng.standard_normal(shape)
        D = prior.hessian_diagonal(t, schedule)
        zaps = zaps_guided_step(x_prime, x_t, x0_hat, A, y, 0.3, D, basis, schedule, t)
        dps = dps_guidance(x_prime, x_t, x0_hat, A, y, 0.3, t, schedule, "exact_oracle", prior)
        worst = max(worst, float(np.max(np.abs(zaps - dps))))
    return CheckResult("diagonalization", worst <= tol, worst, tol, time.perf_counter() - start,
                       "single Gaussian, 5 noise levels")


def check_gradient(seed: int = 0, tol: float = 1e-3, n_diag: int = 64, h: float = 1e-4) -> CheckResult:
    """Reverse-sweep gradients vs central differences of the dense score-stop chain."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    schedule = build_linear_schedule(1000)
    sub = build_irregular_subschedule(1000, [1, 1, 1])
    shape = (1, 8, 8)
    basis = WaveletBasis("db2", 2)
    prior = gaussian_prior(np.full(shape, 0.5), rng.uniform(0.05, 0.5, shape), basis)
    A = gaussian_blur_operator(shape, 3, 1.0)
    x_true = prior.sample(rng)
    y = A.apply(x_true) + 0.05 * rng.standard_normal(shape)
    params = ZapsParams(rng.uniform(0.1, 0.3, sub.S), rng.uniform(-0.5, 0.5, (sub.S,) + shape))
    cfg = GuidanceConfig(method="zaps", zeta=params.zetas, diags=params.diags, basis=basis)
    _, traj = run_reverse(schedule, sub, prior, A, y, cfg, seed=seed, record=True)
    grads = backprop_unroll(traj, params, A, y, basis, schedule, sub)

    A_dense = dense_operator_matrix(A)
    W_dense = dense_transform_matrix(lambda c: dwt2_inverse(c, basis), shape)
    alpha_bars = np.concatenate(([1.0], schedule.alpha_bars))
    steps = [(r.index, r.tau, r.tau_prev, r.score, r.z) for r in traj.steps]
    x_init = traj.steps[0].x_t

    def loss(zetas, diags):
        return score_stop_loss(x_init, steps, zetas, diags, A_dense, W_dense, y, alpha_bars)

    fd_zeta = finite_difference_gradient(lambda z: loss(z, params.diags), params.zetas, h)
    picks = rng.choice(params.diags.size, size=n_diag, replace=False)
    flat_diags = params.diags.ravel()

    def loss_at(values):
        d = flat_diags.copy()
        d[picks] = values
        return loss(params.zetas, d.reshape(params.diags.shape))

    fd_diag = finite_difference_gradient(loss_at, flat_diags[picks], h)
    ours = np.concatenate((grads.zetas, grads.diags.ravel()[picks]))
    ref = np.concatenate((fd_zeta, fd_diag))
    scale = np.max(np.abs(ref))
    # entries far below the gradient scale are compared against that scale
    err = np.max(np.abs(ours - ref) / np.maximum(np.abs(ref), 1e-3 * scale))
    return CheckResult("gradient", err <= tol, float(err), tol, time.perf_counter() - start,
                       f"{sub.S} zetas + {n_diag} diagonal entries, 8x8")


def conjugate_distances(seeds=range(10)) -> list[float]:
    """Relative L2 distance of ZAPS to the closed-form posterior mean on the inpainting preset."""
    from .experiment import preset, setup

    out = []
    for seed in seeds:
        config = preset("desk_inpaint", seed=seed)
        schedule, sub, A, prior, basis, y, x_true = setup(config)
        zcfg = ZapsConfig(epochs=config.epochs, lr=config.lr, task=config.zaps_task, basis=basis,
                          sigma_y=config.sigma_y)
        x0, _, _ = finetune(y, A, prior, schedule, sub, zcfg, seed, x_true)
        W = dense_transform_matrix(lambda c: dwt2_inverse(c, prior.basis), prior.shape)
        Sigma0 = W @ np.diag(np.broadcast_to(prior.variances[0], prior.shape).ravel()) @ W.T
        mean, _ = gaussian_conjugate_posterior(prior.means[0], Sigma0, dense_operator_matrix(A), y,
                                               config.sigma_y)
        out.append(_rel(x0, mean))
    return out


def check_conjugate(seeds=range(10), tol: float = 0.15) -> CheckResult:
    start = time.perf_counter()
    dists = conjugate_distances(seeds)
    worst = max(dists)
    return CheckResult("conjugate", worst <= tol, worst, tol, time.perf_counter() - start,
                       f"{len(dists)} seeds, median {np.median(dists):.3f}")


def check_nfe() -> CheckResult:
    """Counted score evaluations for the stated step x epoch budgets."""
    from .experiment import preset, setup

    start = time.perf_counter()
    cases = (("15,10,5", 10, 300), ("10,7,3", 5, 100), ("30,15,5", 10, 500))
    bad = 0
    report = []
    for spec, epochs, expected in cases:
        config = preset("desk_deblur", schedule=spec, epochs=epochs)
        schedule, sub, A, prior, basis, y, x_true = setup(config)
        zcfg = ZapsConfig(epochs=epochs, task=config.zaps_task, basis=basis)
        _, _, record = finetune(y, A, prior, schedule, sub, zcfg, 0)
        report.append(f"{spec}x{epochs}={record.nfe}")
        bad += record.nfe != expected or config.nfe != expected
    return CheckResult("nfe", bad == 0, float(bad), 0.0, time.perf_counter() - start, ", ".join(report))


def check_schedule() -> CheckResult:
    start = time.perf_counter()
    small = build_irregular_subschedule(12, [2, 2, 2]).tau
    full = build_irregular_subschedule(1000, [15, 10, 5]).tau
    ok = (
        list(small) == [1, 3, 5, 7, 9, 11]
        and len(full) == 30
        and all(a < b for a, b in zip(full, full[1:]))
        and sum(t <= 1000 // 3 + 1 for t in full) == 15
    )
    return CheckResult("schedule", ok, float(not ok), 0.0, time.perf_counter() - start,
                       f"tau(12,[2,2,2])={list(small)}")


CHECKS = {
    "woodbury": check_woodbury,
    "dwt": check_dwt,
    "tweedie": check_tweedie,
    "diagonalization": check_diagonalization,
    "gradient": check_gradient,
    "conjugate": check_conjugate,
    "nfe": check_nfe,
    "schedule": check_schedule,
}


def run_check(name: str) -> CheckResult:
    if name not in CHECKS:
        raise KeyError(f"unknown check {name!r}; choose from {tuple(CHECKS)}")
    return CHECKS[name]()
