"""Reverse-diffusion transitions and measurement-guidance rules.

Every guided method follows the same two-stage step over a sub-schedule:
an unconditional DDPM or DDIM transition from ``x_{tau_i}`` to ``x'``, then a
guidance correction or projection that uses the Tweedie estimate ``x0_hat``.
Guidance never differentiates through the score; ``jacobian_mode`` only
selects how ``d x0_hat / d x_t`` is approximated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .operators import LinearOperator, solve_regularized_normal
from .prior import CountingScore, ScoreProvider, tweedie_denoise
from .rng import stream
from .schedule import NoiseSchedule, SubSchedule
from .wavelet import WaveletBasis, apply_diagonalized_hessian

METHODS = ("none", "pocs", "mcg", "dps", "pigdm", "zaps")
JACOBIAN_MODES = ("identity", "wavelet_diag", "exact_oracle")


def default_r_sq(t: int, schedule: NoiseSchedule) -> float:
    """Variance of ``x0`` given ``x_t`` under a unit-variance prior."""
    ab = schedule.alpha_bar(t)
    return (1.0 - ab) / ab


@dataclass
class GuidanceConfig:
    """Knobs for one guided reverse pass.

    ``zeta`` and ``diags`` are indexed by sub-schedule position (ascending
    ``tau``); a length-1 leading axis is shared by every step. ``ddim_eta``
    of ``None`` selects DDPM transitions.
    """

    method: str = "dps"
    zeta: np.ndarray | float = 1.0
    sigma_y: float = 0.05
    jacobian_mode: str = "identity"
    ddim_eta: float | None = None
    r_sq_rule: Callable[[int, NoiseSchedule], float] = default_r_sq
    normalize_residual: bool = False
    diags: np.ndarray | None = None
    basis: WaveletBasis | None = None
    cg_tol: float = 1e-10
    cg_max_iters: int = 500

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.jacobian_mode not in JACOBIAN_MODES:
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")
        if self.sigma_y < 0:
            raise ValueError("sigma_y must be non-negative")
        if self.ddim_eta is not None and not 0.0 <= self.ddim_eta <= 1.0:
            raise ValueError(f"ddim_eta must be in [0, 1], got {self.ddim_eta}")
        self.zeta = np.atleast_1d(np.asarray(self.zeta, dtype=np.float64))

    def zeta_at(self, i: int) -> float:
        return float(self.zeta[0] if self.zeta.size == 1 else self.zeta[i])

    def diag_at(self, i: int) -> np.ndarray:
        if self.diags is None:
            raise ValueError("zaps guidance needs diags")
        return self.diags[0] if self.diags.shape[0] == 1 else self.diags[i]

    def check_length(self, S: int) -> None:
        if self.zeta.size not in (1, S):
            raise ValueError(f"zeta has {self.zeta.size} entries for {S} steps")
        if self.diags is not None and self.diags.shape[0] not in (1, S):
            raise ValueError(f"diags has {self.diags.shape[0]} rows for {S} steps")


def jump_coefficients(schedule: NoiseSchedule, t: int, t_prev: int):
    """Coefficients ``(c_x, c_x0, sigma)`` of the DDPM transition ``t -> t_prev``.

    For ``t_prev = t - 1`` these are the training-step values; larger jumps
    use the equivalent single-step quantities ``alpha = abar_t / abar_prev``.
    """
    if not 0 <= t_prev < t:
        raise ValueError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    ab = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    if t_prev == t - 1:
        alpha, beta, sigma = schedule.alpha(t), schedule.beta(t), schedule.posterior_sigma(t)
    else:
        alpha = ab / ab_prev
        beta = 1.0 - alpha
        sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab) * beta)
    c_x = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
    c_x0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    return c_x, c_x0, float(sigma)


def ddpm_jump_step(x_cur, tau_i: int, tau_prev: int, schedule: NoiseSchedule, x0_hat, z) -> np.ndarray:
    c_x, c_x0, sigma = jump_coefficients(schedule, tau_i, tau_prev)
    return c_x * x_cur + c_x0 * x0_hat + sigma * np.asarray(z)


def ddim_sigma(schedule: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    ab = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    return float(eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)))


def ddim_step(x_cur, tau_i: int, tau_prev: int, schedule: NoiseSchedule, x0_hat, eps_hat, eta: float, z=None) -> np.ndarray:
    """DDIM transition; ``eps_hat = -sqrt(1 - abar) * score``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    if not 0 <= tau_prev < tau_i:
        raise ValueError(f"need 0 <= tau_prev < tau_i, got {tau_i}, {tau_prev}")
    ab_prev = schedule.alpha_bar(tau_prev)
    sigma = ddim_sigma(schedule, tau_i, tau_prev, eta)
    out = np.sqrt(ab_prev) * x0_hat + np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps_hat
    if sigma > 0 and z is not None:
        out = out + sigma * np.asarray(z)
    return out


def unconditional_gain(schedule: NoiseSchedule, t: int, t_prev: int, ddim_eta: float | None) -> float:
    """``d x' / d x_cur`` with the score held fixed (a multiple of identity)."""
    ab = schedule.alpha_bar(t)
    if ddim_eta is None:
        c_x, c_x0, _ = jump_coefficients(schedule, t, t_prev)
        return c_x + c_x0 / np.sqrt(ab)
    ab_prev = schedule.alpha_bar(t_prev)
    return np.sqrt(ab_prev / ab)


def apply_tweedie_jacobian(v, x_t, t: int, schedule: NoiseSchedule, mode: str = "identity",
                           prior: ScoreProvider | None = None, diag=None,
                           basis: WaveletBasis | None = None) -> np.ndarray:
    """Apply ``d x0_hat / d x_t = (I + (1 - abar) H) / sqrt(abar)`` to ``v``.

    ``H`` is dropped (identity), replaced by ``W D W^T`` (wavelet_diag) or
    taken from the prior's exact Hessian (exact_oracle).
    """
    ab = schedule.alpha_bar(t)
    v = np.asarray(v, dtype=np.float64)
    if mode == "identity":
        return v / np.sqrt(ab)
    if mode == "wavelet_diag":
        if diag is None or basis is None:
            raise ValueError("wavelet_diag mode needs a diagonal and a basis")
        hv = apply_diagonalized_hessian(diag, v, basis)
    elif mode == "exact_oracle":
        if prior is None or not prior.has_exact_hessian:
            raise ValueError("exact_oracle mode needs a prior with an exact Hessian")
        hv = prior.hessian_apply(x_t, t, schedule, v)
    else:
        raise ValueError(f"unknown jacobian mode {mode!r}")
    return (v + (1.0 - ab) * hv) / np.sqrt(ab)


def _residual(A: LinearOperator, y, x0_hat):
    return np.asarray(y) - A.apply(x0_hat)


def dps_guidance(x_prime, x_t, x0_hat, A: LinearOperator, y, zeta: float, t: int,
                 schedule: NoiseSchedule, jacobian_mode: str = "identity", prior=None,
                 diag=None, basis=None, normalize_residual: bool = False) -> np.ndarray:
    """``x' + zeta * J A^T (y - A x0_hat)``."""
    res = _residual(A, y, x0_hat)
    if normalize_residual:
        norm = np.linalg.norm(res)
        zeta = zeta / norm if norm > 0 else 0.0
    g = apply_tweedie_jacobian(A.adjoint(res), x_t, t, schedule, jacobian_mode, prior, diag, basis)
    return x_prime + zeta * g


def pigdm_direction(A: LinearOperator, residual, r_sq: float, sigma_y: float,
                    tol: float = 1e-10, max_iters: int = 500) -> np.ndarray:
    """``A^T (r^2 A A^T + sigma_y^2 I)^{-1} residual`` in x-domain form.

    Evaluated as ``(A^T A + eta I)^{-1} A^T residual / r^2`` with
    ``eta = sigma_y^2 / r^2``; the noiseless case uses ``A^+ residual / r^2``.
    """
    if r_sq <= 0:
        raise ValueError("r_sq must be positive")
    if sigma_y == 0:
        if not A.has_pseudo_inverse:
            raise ValueError(f"noiseless pigdm needs an exact pseudo-inverse; {A.name} has none")
        return A.pseudo_inverse(residual) / r_sq
    eta = sigma_y**2 / r_sq
    sol = solve_regularized_normal(A, eta, A.adjoint(residual), tol=tol, max_iters=max_iters)
    return sol.x / r_sq


def pigdm_guidance(x_prime, x_t, x0_hat, A: LinearOperator, y, zeta: float, r_sq: float,
                   sigma_y: float, t: int, schedule: NoiseSchedule,
                   jacobian_mode: str = "identity", prior=None, diag=None, basis=None,
                   tol: float = 1e-10, max_iters: int = 500) -> np.ndarray:
    direction = pigdm_direction(A, _residual(A, y, x0_hat), r_sq, sigma_y, tol, max_iters)
    g = apply_tweedie_jacobian(direction, x_t, t, schedule, jacobian_mode, prior, diag, basis)
    return x_prime + zeta * g


def _require_projection(A: LinearOperator):
    if not A.has_exact_projection:
        raise ValueError(f"projection methods need a mask-type operator, got {A.name}")


def pocs_projection(x_prime, A: LinearOperator, y, tau_prev: int, schedule: NoiseSchedule, eps) -> np.ndarray:
    """Replace measured coordinates with the measurement diffused to ``tau_prev``."""
    _require_projection(A)
    ab_prev = schedule.alpha_bar(tau_prev)
    noisy_y = np.sqrt(ab_prev) * np.asarray(y) + np.sqrt(1.0 - ab_prev) * np.asarray(eps)
    return x_prime - A.normal(x_prime) + A.adjoint(noisy_y)


def mcg_step(x_t, x_prime, x0_hat, A: LinearOperator, y, zeta: float, t: int, tau_prev: int,
             schedule: NoiseSchedule, eps, jacobian_mode: str = "identity", prior=None,
             diag=None, basis=None, normalize_residual: bool = False) -> np.ndarray:
    """Gradient correction (``K = I``) followed by the measurement projection."""
    _require_projection(A)
    corrected = dps_guidance(x_prime, x_t, x0_hat, A, y, zeta, t, schedule, jacobian_mode,
                             prior, diag, basis, normalize_residual)
    return pocs_projection(corrected, A, y, tau_prev, schedule, eps)


def zaps_guidance_vector(x0_hat, A: LinearOperator, y, D_t, basis: WaveletBasis, t: int,
                         schedule: NoiseSchedule) -> np.ndarray:
    """``(I + (1 - abar) W D W^T) A^T (y - A x0_hat) / sqrt(abar)``."""
    ab = schedule.alpha_bar(t)
    r = A.adjoint(_residual(A, y, x0_hat))
    return (r + (1.0 - ab) * apply_diagonalized_hessian(D_t, r, basis)) / np.sqrt(ab)


def zaps_guided_step(x_prime, x_t, x0_hat, A: LinearOperator, y, zeta_t: float, D_t,
                     basis: WaveletBasis, schedule: NoiseSchedule, tau_i: int) -> np.ndarray:
    return x_prime + zeta_t * zaps_guidance_vector(x0_hat, A, y, D_t, basis, tau_i, schedule)


@dataclass
class NoiseBank:
    """Every Gaussian draw a reverse pass consumes.

    ``steps[i]`` is the transition noise at sub-schedule position ``i``;
    ``projection[i]`` the measurement-domain noise for projection methods.
    """

    x_init: np.ndarray
    steps: np.ndarray
    projection: np.ndarray

    @classmethod
    def draw(cls, seed: int, S: int, shape, measurement_shape=None) -> "NoiseBank":
        shape = tuple(shape)
        measurement_shape = tuple(measurement_shape or shape)
        return cls(
            x_init=stream(seed, "init-noise").standard_normal(shape),
            steps=stream(seed, "step-noise").standard_normal((S,) + shape),
            projection=stream(seed, "projection-noise").standard_normal((S,) + measurement_shape),
        )

    def redraw_steps(self, rng: np.random.Generator) -> "NoiseBank":
        return NoiseBank(self.x_init, rng.standard_normal(self.steps.shape),
                         rng.standard_normal(self.projection.shape))


@dataclass
class StepRecord:
    index: int
    tau: int
    tau_prev: int
    x_t: np.ndarray
    score: np.ndarray
    x0_hat: np.ndarray
    x_prime: np.ndarray
    z: np.ndarray
    guidance: np.ndarray | None


@dataclass
class Trajectory:
    """Per-step record of a reverse pass, in execution order (high ``tau`` first)."""

    steps: list = field(default_factory=list)
    x0: np.ndarray | None = None
    nfe: int = 0

    def __len__(self):
        return len(self.steps)

    def save(self, directory) -> None:
        """Dump each state as a raw frame plus an ``index.csv``."""
        import os

        from .io import write_raw

        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "index.csv"), "w") as fh:
            fh.write("frame,index,tau,tau_prev,state,x0_hat\n")
            for k, rec in enumerate(self.steps):
                state = f"x_{k:04d}.raw"
                est = f"x0hat_{k:04d}.raw"
                write_raw(os.path.join(directory, state), rec.x_t)
                write_raw(os.path.join(directory, est), rec.x0_hat)
                fh.write(f"{k},{rec.index},{rec.tau},{rec.tau_prev},{state},{est}\n")
            if self.x0 is not None:
                write_raw(os.path.join(directory, "x0_final.raw"), self.x0)


def run_reverse(schedule: NoiseSchedule, sub: SubSchedule, prior: ScoreProvider,
                operator: LinearOperator | None, y, config: GuidanceConfig, seed: int = 0,
                record: bool = False, noise: NoiseBank | None = None):
    """Run one guided reverse pass over ``sub`` and return ``(x0, trajectory)``.

    The trajectory keeps per-step states only when ``record`` is true; its
    ``nfe`` field always counts score evaluations.
    """
    S = sub.S
    config.check_length(S)
    if config.method != "none" and operator is None:
        raise ValueError(f"method {config.method!r} needs a forward operator")
    shape = tuple(operator.input_shape) if operator is not None else tuple(getattr(prior, "shape"))
    if noise is None:
        out_shape = operator.output_shape if operator is not None else shape
        noise = NoiseBank.draw(seed, S, shape, out_shape)
    counted = CountingScore(prior)
    traj = Trajectory()
    x = np.array(noise.x_init, dtype=np.float64)
    method = config.method
    for i in reversed(range(S)):
        t = sub.tau[i]
        t_prev = sub.previous(i)
        score = counted.score(x, t, schedule)
        x0_hat = tweedie_denoise(x, t, schedule, score)
        z = noise.steps[i] if i > 0 else np.zeros(shape)
        if config.ddim_eta is None:
            x_prime = ddpm_jump_step(x, t, t_prev, schedule, x0_hat, z)
        else:
            eps_hat = -np.sqrt(1.0 - schedule.alpha_bar(t)) * score
            x_prime = ddim_step(x, t, t_prev, schedule, x0_hat, eps_hat, config.ddim_eta, z)
        zeta = config.zeta_at(i)
        diag = config.diags[0 if config.diags.shape[0] == 1 else i] if config.diags is not None else None
        if method == "none":
            x_next = x_prime
        elif method == "dps":
            x_next = dps_guidance(x_prime, x, x0_hat, operator, y, zeta, t, schedule,
                                  config.jacobian_mode, prior, diag, config.basis,
                                  config.normalize_residual)
        elif method == "pigdm":
            x_next = pigdm_guidance(x_prime, x, x0_hat, operator, y, zeta,
                                    config.r_sq_rule(t, schedule), config.sigma_y, t, schedule,
                                    config.jacobian_mode, prior, diag, config.basis,
                                    config.cg_tol, config.cg_max_iters)
        elif method == "mcg":
            x_next = mcg_step(x, x_prime, x0_hat, operator, y, zeta, t, t_prev, schedule,
                              noise.projection[i], config.jacobian_mode, prior, diag,
                              config.basis, config.normalize_residual)
        elif method == "pocs":
            x_next = pocs_projection(x_prime, operator, y, t_prev, schedule, noise.projection[i])
        else:
            if config.basis is None:
                raise ValueError("zaps guidance needs a wavelet basis")
            x_next = zaps_guided_step(x_prime, x, x0_hat, operator, y, zeta,
                                      config.diag_at(i), config.basis, schedule, t)
        if not np.all(np.isfinite(x_next)):
            raise FloatingPointError(f"non-finite state at step {i} (tau={t}, method={method})")
        if record:
            traj.steps.append(StepRecord(i, t, t_prev, x, score, x0_hat, x_prime, z, x_next - x_prime))
        x = x_next
    traj.x0 = x
    traj.nfe = counted.calls
    return x, traj
