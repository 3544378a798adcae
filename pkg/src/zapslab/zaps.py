"""Zero-shot fine-tuning of per-step guidance weights and Hessian diagonals.

Each epoch unrolls the guided reverse chain with the current parameters,
scores the final estimate by ``||y - A x0||^2`` and backpropagates through the
chain. Score evaluations are treated as constants in the backward sweep, so
every step linearizes to an explicit affine map built from schedule
coefficients, ``A``, ``A^T`` and the wavelet transform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import psnr, ssim
from .operators import LinearOperator
from .prior import ScoreProvider
from .rng import stream
from .sampler import GuidanceConfig, NoiseBank, Trajectory, run_reverse, unconditional_gain
from .schedule import NoiseSchedule, SubSchedule
from .wavelet import WaveletBasis, dwt2_forward, dwt2_inverse, from_transform_order, to_transform_order

TASK_ZETA_INIT = {
    "gaussian_blur": 0.2,
    "motion_blur": 0.2,
    "inpaint": 0.1,
    "super_resolution": 0.1,
}
DIAG_INIT = 0.2


@dataclass
class ZapsParams:
    """Learnable weights: ``zetas`` (S,) or (1,), ``diags`` (S or 1, C or 1, H, W)."""

    zetas: np.ndarray
    diags: np.ndarray
    shared_zeta: bool = False
    shared_diag: bool = False

    @property
    def n_parameters(self) -> int:
        return int(self.zetas.size + self.diags.size)

    def copy(self) -> "ZapsParams":
        return ZapsParams(self.zetas.copy(), self.diags.copy(), self.shared_zeta, self.shared_diag)

    def zeta_at(self, i: int) -> float:
        return float(self.zetas[0 if self.shared_zeta else i])

    def diag_at(self, i: int) -> np.ndarray:
        return self.diags[0 if self.shared_diag else i]

    def check(self, S: int, shape) -> None:
        if self.zetas.size != (1 if self.shared_zeta else S):
            raise ValueError(f"zetas has {self.zetas.size} entries, expected {1 if self.shared_zeta else S}")
        rows = 1 if self.shared_diag else S
        if self.diags.shape[0] != rows or self.diags.shape[-2:] != tuple(shape)[-2:]:
            raise ValueError(f"diags shape {self.diags.shape} does not match {rows} x {tuple(shape)}")
        if not (np.all(np.isfinite(self.zetas)) and np.all(np.isfinite(self.diags))):
            raise FloatingPointError("non-finite parameters")


def init_params(task: str, S: int, shape, shared_zeta: bool = False, shared_diag: bool = False,
                zeta_init: float | None = None, diag_init: float | None = None,
                channel_shared_diag: bool = False) -> ZapsParams:
    """Uniform initialization; task defaults are 0.2 (blurs) or 0.1 (inpainting, SR)."""
    if S <= 0:
        raise ValueError("S must be positive")
    shape = tuple(shape)
    if zeta_init is None:
        if task not in TASK_ZETA_INIT:
            raise ValueError(f"unknown task {task!r}; choose from {tuple(TASK_ZETA_INIT)}")
        zeta_init = TASK_ZETA_INIT[task]
    diag_init = DIAG_INIT if diag_init is None else diag_init
    diag_shape = ((1,) + shape[1:]) if channel_shared_diag else shape
    return ZapsParams(
        zetas=np.full(1 if shared_zeta else S, float(zeta_init)),
        diags=np.full((1 if shared_diag else S,) + diag_shape, float(diag_init)),
        shared_zeta=shared_zeta,
        shared_diag=shared_diag,
    )


def measurement_loss(y, A: LinearOperator, x0) -> float:
    res = np.asarray(y) - A.apply(x0)
    return float(np.vdot(res, res))


@dataclass
class Gradients:
    zetas: np.ndarray
    diags: np.ndarray


def backprop_unroll(trajectory: Trajectory, params: ZapsParams, A: LinearOperator, y,
                    basis: WaveletBasis, schedule: NoiseSchedule, sub: SubSchedule,
                    ddim_eta: float | None = None) -> Gradients:
    """Reverse sweep of the score-stop chain; returns loss gradients.

    Per step, ``x_next = g * x + c + zeta * G`` with
    ``G = (I + (1 - abar) W D W^T) A^T (y - A x0_hat) / sqrt(abar)`` and
    ``x0_hat = (x + const) / sqrt(abar)``.
    """
    S = sub.S
    if len(trajectory) != S or trajectory.x0 is None:
        raise ValueError("trajectory must be recorded over the full sub-schedule")
    params.check(S, trajectory.x0.shape)
    y = np.asarray(y)
    lam = -2.0 * A.adjoint(y - A.apply(trajectory.x0))
    g_zeta = np.zeros(S)
    g_diag = np.zeros((S,) + params.diags.shape[1:])
    # recorded in execution order (high tau first); sweep back from x0
    for rec in reversed(trajectory.steps):
        i = rec.index
        if rec.tau != sub.tau[i]:
            raise ValueError("trajectory does not match sub-schedule")
        t = rec.tau
        ab = schedule.alpha_bar(t)
        root = np.sqrt(ab)
        zeta = params.zeta_at(i)
        D = params.diag_at(i)
        r = A.adjoint(y - A.apply(rec.x0_hat))
        wr = dwt2_forward(r, basis)
        wl = dwt2_forward(lam, basis)
        guidance = (r + (1.0 - ab) * dwt2_inverse(D * wr, basis)) / root
        g_zeta[i] = np.vdot(lam, guidance)
        grad_d = zeta * (1.0 - ab) / root * (wl * wr)
        if grad_d.shape != g_diag.shape[1:]:
            grad_d = grad_d.sum(axis=0, keepdims=True)
        g_diag[i] = grad_d
        p_lam = (lam + (1.0 - ab) * dwt2_inverse(D * wl, basis)) / root
        lam = unconditional_gain(schedule, t, rec.tau_prev, ddim_eta) * lam - zeta / root * A.normal(p_lam)
    if params.shared_zeta:
        g_zeta = g_zeta.sum(keepdims=True)
    if params.shared_diag:
        g_diag = g_diag.sum(axis=0, keepdims=True)
    return Gradients(g_zeta, g_diag)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(arrays, grads, state: AdamState, hyper: AdamHyper, lrs=None):
    """Bias-corrected Adam on a list of arrays; returns new arrays and state."""
    step = state.step + 1
    new_arrays, new_m, new_v = [], [], []
    lrs = lrs or [hyper.lr] * len(arrays)
    for a, g, m, v, lr in zip(arrays, grads, state.m, state.v, lrs):
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        m_hat = m / (1.0 - hyper.beta1**step)
        v_hat = v / (1.0 - hyper.beta2**step)
        new_arrays.append(a - lr * m_hat / (np.sqrt(v_hat) + hyper.eps))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, AdamState(new_m, new_v, step)


def adam_update(params: ZapsParams, grads: Gradients, state: AdamState | None,
                hyper: AdamHyper, lr_diag: float | None = None):
    if state is None:
        state = AdamState.zeros_like([params.zetas, params.diags])
    lrs = [hyper.lr, hyper.lr if lr_diag is None else lr_diag]
    (zetas, diags), state = adam_step([params.zetas, params.diags], [grads.zetas, grads.diags],
                                      state, hyper, lrs)
    return ZapsParams(zetas, diags, params.shared_zeta, params.shared_diag), state


@dataclass
class ZapsConfig:
    """Fine-tuning settings.

    ``lr`` defaults to 0.1 rather than the stock Adam 1e-3: with only ten
    epochs the smaller step barely moves the parameters at desk scale.
    """

    epochs: int = 10
    lr: float = 0.1
    lr_diag: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    task: str = "gaussian_blur"
    zeta_init: float | None = None
    diag_init: float | None = None
    shared_zeta: bool = False
    shared_diag: bool = False
    channel_shared_diag: bool = False
    noise_policy: str = "fixed_bank"
    ddim_eta: float | None = None
    basis: WaveletBasis = field(default_factory=lambda: WaveletBasis("db4", 2))
    sigma_y: float = 0.05
    grad_check: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0 or (self.lr_diag is not None and self.lr_diag <= 0):
            raise ValueError("learning rates must be positive")
        if self.noise_policy not in ("fixed_bank", "resample_per_epoch"):
            raise ValueError(f"unknown noise_policy {self.noise_policy!r}")

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.adam_eps)


@dataclass
class EpochRow:
    epoch: int
    loss: float
    psnr: float
    ssim: float


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    nfe: int = 0
    wall_clock: float = 0.0
    final_loss: float = float("nan")
    final_psnr: float = float("nan")
    final_ssim: float = float("nan")
    params_path: str | None = None
    grad_check_error: float | None = None


def _quality(x0, x_true, ssim_window):
    if x_true is None:
        return float("nan"), float("nan")
    return psnr(x0, x_true), ssim(x0, x_true, window=ssim_window)


class EpochFailure(RuntimeError):
    def __init__(self, epoch, cause):
        super().__init__(f"fine-tuning failed at epoch {epoch}: {cause}")
        self.epoch = epoch


def replay_score_stop(trajectory: Trajectory, params: ZapsParams, A: LinearOperator, y,
                      basis: WaveletBasis, schedule: NoiseSchedule, ddim_eta: float | None = None):
    """Re-run a recorded chain with its scores frozen; used for gradient checks."""
    from .sampler import ddim_step, ddpm_jump_step, zaps_guided_step

    x = trajectory.steps[0].x_t
    for rec in trajectory.steps:
        ab = schedule.alpha_bar(rec.tau)
        x0_hat = (x + (1.0 - ab) * rec.score) / np.sqrt(ab)
        if ddim_eta is None:
            x_prime = ddpm_jump_step(x, rec.tau, rec.tau_prev, schedule, x0_hat, rec.z)
        else:
            eps_hat = -np.sqrt(1.0 - ab) * rec.score
            x_prime = ddim_step(x, rec.tau, rec.tau_prev, schedule, x0_hat, eps_hat, ddim_eta, rec.z)
        x = zaps_guided_step(x_prime, x, x0_hat, A, y, params.zeta_at(rec.index),
                             params.diag_at(rec.index), basis, schedule, rec.tau)
    return x


def _gradient_check(traj, params, grads, A, y, basis, schedule, ddim_eta, h=1e-4):
    worst = 0.0
    for k in range(params.zetas.size):
        plus, minus = params.copy(), params.copy()
        plus.zetas[k] += h
        minus.zetas[k] -= h
        fd = (measurement_loss(y, A, replay_score_stop(traj, plus, A, y, basis, schedule, ddim_eta))
              - measurement_loss(y, A, replay_score_stop(traj, minus, A, y, basis, schedule, ddim_eta))) / (2 * h)
        worst = max(worst, abs(fd - grads.zetas[k]) / max(abs(fd), 1e-12))
    return worst


def finetune(y, A: LinearOperator, prior: ScoreProvider, schedule: NoiseSchedule,
             sub: SubSchedule, config: ZapsConfig, seed: int = 0, x_true=None,
             ssim_window: int = 7, params: ZapsParams | None = None, noise: NoiseBank | None = None,
             callback=None):
    """Fine-tune ``{zeta_t}`` and ``{D_t}`` for one measurement.

    Returns ``(x0, params, record)`` where ``x0`` is the last epoch's
    reconstruction and ``params`` include the final update.
    """
    shape = A.input_shape
    S = sub.S
    if params is None:
        params = init_params(config.task, S, shape, config.shared_zeta, config.shared_diag,
                             config.zeta_init, config.diag_init, config.channel_shared_diag)
    params.check(S, shape)
    if noise is None:
        noise = NoiseBank.draw(seed, S, shape, A.output_shape)
    resample_rng = stream(seed, "step-noise") if config.noise_policy == "resample_per_epoch" else None
    if resample_rng is not None:
        resample_rng.standard_normal(noise.steps.shape)  # skip the draws used by epoch 1
        resample_rng.standard_normal(noise.projection.shape)
    state = None
    record = RunRecord()
    start = time.perf_counter()
    x0 = None
    for epoch in range(1, config.epochs + 1):
        try:
            if resample_rng is not None and epoch > 1:
                noise = noise.redraw_steps(resample_rng)
            guidance = GuidanceConfig(method="zaps", zeta=params.zetas, sigma_y=config.sigma_y,
                                      ddim_eta=config.ddim_eta, diags=params.diags, basis=config.basis)
            x0, traj = run_reverse(schedule, sub, prior, A, y, guidance, record=True, noise=noise)
            record.nfe += traj.nfe
            loss = measurement_loss(y, A, x0)
            q_psnr, q_ssim = _quality(x0, x_true, ssim_window)
            record.rows.append(EpochRow(epoch, loss, q_psnr, q_ssim))
            grads = backprop_unroll(traj, params, A, y, config.basis, schedule, sub, config.ddim_eta)
            if config.grad_check and epoch == 1:
                record.grad_check_error = _gradient_check(traj, params, grads, A, y, config.basis,
                                                          schedule, config.ddim_eta)
            if callback is not None:
                callback(epoch, params, grads, loss)
            params, state = adam_update(params, grads, state, config.hyper, config.lr_diag)
            params.check(S, shape)
        except (FloatingPointError, ValueError, ArithmeticError) as exc:
            raise EpochFailure(epoch, exc) from exc
    record.wall_clock = time.perf_counter() - start
    last = record.rows[-1]
    record.final_loss, record.final_psnr, record.final_ssim = last.loss, last.psnr, last.ssim
    return x0, params, record


def write_params(path, params: ZapsParams, sub: SubSchedule, basis: WaveletBasis) -> None:
    """Plain-text parameter file; diagonals are written in wavelet transform order."""
    diag_shape = params.diags.shape[1:]
    n = int(np.prod(diag_shape))
    with open(path, "w") as fh:
        fh.write("zaps-params v1\n")
        fh.write(
            f"S={sub.S} n={n} shape={','.join(map(str, diag_shape))} "
            f"shared_zeta={int(params.shared_zeta)} shared_diag={int(params.shared_diag)} "
            f"wavelet={basis.family} levels={basis.levels}\n"
        )
        fh.write("tau " + " ".join(str(t) for t in sub.tau) + "\n")
        fh.write("zeta " + " ".join(f"{v:.17g}" for v in params.zetas) + "\n")
        for k, d in enumerate(params.diags):
            flat = to_transform_order(d, basis.levels)
            fh.write(f"diag {k} " + " ".join(f"{v:.17g}" for v in flat) + "\n")


def read_params(path):
    """Inverse of :func:`write_params`; returns ``(params, header dict, tau)``."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != "zaps-params v1":
        raise ValueError(f"{path}: not a zaps parameter file")
    header = dict(tok.split("=", 1) for tok in lines[1].split())
    shape = tuple(int(s) for s in header["shape"].split(","))
    levels = int(header["levels"])
    tau = tuple(int(v) for v in lines[2].split()[1:])
    zetas = np.array([float(v) for v in lines[3].split()[1:]])
    diags = []
    for line in lines[4:]:
        parts = line.split()
        if not parts:
            continue
        diags.append(from_transform_order(np.array([float(v) for v in parts[2:]]), shape, levels))
    params = ZapsParams(zetas, np.array(diags), header["shared_zeta"] == "1", header["shared_diag"] == "1")
    return params, header, tau
