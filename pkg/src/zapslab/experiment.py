"""Experiment runner, desk presets and ablation suites.

An experiment builds the schedule, forward operator and prior from an
:class:`ExperimentConfig`, synthesizes (or loads) a measurement, and either
runs one guided reverse pass or fine-tunes ZAPS parameters. Every output
directory is self-describing: re-running its ``config.txt`` with the same
seed reproduces every file except wall-clock timings.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, kernels
from .config import ConfigError, ExperimentConfig
from .io import export_pgm, read_raw, write_epoch_csv, write_manifest, write_raw, write_summary_csv
from .metrics import psnr, ssim
from .operators import (
    BicubicDownsampleOperator,
    box_mask_operator,
    downsample_operator,
    gaussian_blur_operator,
    line_motion_kernel,
    load_kernel,
    measure,
    motion_blur_operator,
    random_mask_operator,
)
from .prior import desk_gaussian_prior, load_prior
from .rng import stream
from .sampler import GuidanceConfig, run_reverse
from .schedule import build_linear_schedule, subschedule_from_spec
from .wavelet import WaveletBasis
from .zaps import DIAG_INIT, EpochRow, RunRecord, ZapsConfig, finetune, measurement_loss, write_params

PRESETS = {
    "desk_deblur": {"task": "gaussian_deblur"},
    "desk_motion": {"task": "motion_deblur"},
    "desk_inpaint": {"task": "inpaint_random", "keep_fraction": 0.3},
    "desk_box": {"task": "inpaint_box"},
    "desk_sr4": {"task": "super_resolution", "sr_factor": 4},
}

SUITES = ("epochs_vs_steps", "shared_vs_distinct", "uniform_vs_irregular", "ddpm_vs_ddim")


class ExperimentError(RuntimeError):
    """A module failure, tagged with the task and method that raised it."""

    def __init__(self, config: ExperimentConfig, cause: BaseException):
        super().__init__(f"task={config.task} method={config.method} seed={config.seed}: {cause}")
        self.cause = cause


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {tuple(PRESETS)}")
    return ExperimentConfig(**{**PRESETS[name], **overrides})


def build_operator(config: ExperimentConfig):
    shape = config.shape
    task = config.task
    if task == "gaussian_deblur":
        return gaussian_blur_operator(shape, config.blur_size, config.blur_sigma)
    if task == "motion_deblur":
        if config.kernel:
            kernel = load_kernel(config.kernel)
        else:
            kernel = line_motion_kernel(config.motion_size, np.deg2rad(config.motion_angle),
                                        config.motion_length)
        return motion_blur_operator(shape, kernel)
    if task == "inpaint_random":
        return random_mask_operator(shape, config.keep_fraction, config.seed)
    if task == "inpaint_box":
        return box_mask_operator(shape, (config.box_top, config.box_left), config.box_size)
    if config.sr_kind == "bicubic":
        return BicubicDownsampleOperator(shape, config.sr_factor)
    return downsample_operator(shape, config.sr_factor)


def build_prior(config: ExperimentConfig):
    basis = WaveletBasis(config.wavelet, config.levels)
    if config.prior == "desk":
        return desk_gaussian_prior(config.shape, basis, config.prior_mean, config.prior_coarse,
                                   config.detail_variances())
    prior = load_prior(config.prior)
    if tuple(prior.shape) != config.shape:
        raise ConfigError(f"prior shape {prior.shape} does not match image shape {config.shape}")
    return prior


def _load_image(path, shape, what):
    image = read_raw(path)
    if image.shape != tuple(shape):
        raise ConfigError(f"{what} {path} has shape {image.shape}, expected {tuple(shape)}")
    return image


def setup(config: ExperimentConfig):
    """Build ``(schedule, sub, A, prior, basis, y, x_true)`` for a config."""
    schedule = build_linear_schedule(config.T, config.beta_start, config.beta_end)
    sub = subschedule_from_spec(config.T, config.schedule, config.schedule_kind)
    A = build_operator(config)
    prior = build_prior(config)
    basis = WaveletBasis(config.wavelet, config.levels)
    x_true = None
    if config.image:
        x_true = _load_image(config.image, config.shape, "image")
    elif not config.measurement:
        x_true = prior.sample(stream(config.seed, "ground-truth"))
    if config.measurement:
        y = _load_image(config.measurement, A.output_shape, "measurement")
    else:
        y = measure(A, x_true, config.sigma_y, config.seed).y
    return schedule, sub, A, prior, basis, y, x_true


def _quality(x0, x_true, window):
    if x_true is None:
        return float("nan"), float("nan")
    return psnr(x0, x_true), ssim(x0, x_true, window=window)


def _run_baseline(config, schedule, sub, A, prior, basis, y, x_true):
    diags = None
    if config.jacobian_mode == "wavelet_diag":
        init = DIAG_INIT if config.diag_init is None else config.diag_init
        diags = np.full((1,) + config.shape, init)
    guidance = GuidanceConfig(method=config.method, zeta=config.zeta, sigma_y=config.sigma_y,
                              jacobian_mode=config.jacobian_mode, ddim_eta=config.ddim_eta,
                              normalize_residual=config.normalize_residual, diags=diags, basis=basis)
    start = time.perf_counter()
    x0, traj = run_reverse(schedule, sub, prior, A if config.method != "none" else None, y,
                           guidance, seed=config.seed)
    record = RunRecord()
    record.nfe = traj.nfe
    q_psnr, q_ssim = _quality(x0, x_true, config.ssim_window)
    record.rows.append(EpochRow(1, measurement_loss(y, A, x0), q_psnr, q_ssim))
    record.final_loss, record.final_psnr, record.final_ssim = record.rows[0].loss, q_psnr, q_ssim
    record.wall_clock = time.perf_counter() - start
    return x0, record


def _write_baseline_params(path, config, sub):
    with open(path, "w") as fh:
        fh.write("baseline-params v1\n")
        fh.write(f"method={config.method} jacobian_mode={config.jacobian_mode} S={sub.S}\n")
        fh.write("tau " + " ".join(str(t) for t in sub.tau) + "\n")
        fh.write(f"zeta {config.zeta!r}\n")


def run_experiment(config: ExperimentConfig, out: str | None = None) -> RunRecord:
    """Run one experiment and write its output directory.

    Files: ``config.txt`` (resolved config), ``epochs.csv``, ``x0.raw`` with
    PGM previews, ``y.raw``, ``truth.raw`` when the ground truth is known,
    ``params.txt`` and ``manifest.txt``.
    """
    out = out or config.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(config.echo())
    try:
        schedule, sub, A, prior, basis, y, x_true = setup(config)
        if config.method == "zaps":
            zcfg = ZapsConfig(
                epochs=config.epochs, lr=config.lr, lr_diag=config.lr_diag, beta1=config.beta1,
                beta2=config.beta2, adam_eps=config.adam_eps, task=config.zaps_task,
                zeta_init=config.zeta_init, diag_init=config.diag_init,
                shared_zeta=config.shared_zeta, shared_diag=config.shared_diag,
                channel_shared_diag=config.channel_shared_diag, noise_policy=config.noise_policy,
                ddim_eta=config.ddim_eta, basis=basis, sigma_y=config.sigma_y,
                grad_check=config.grad_check,
            )
            x0, params, record = finetune(y, A, prior, schedule, sub, zcfg, config.seed, x_true,
                                          config.ssim_window)
            write_params(os.path.join(out, "params.txt"), params, sub, basis)
        else:
            x0, record = _run_baseline(config, schedule, sub, A, prior, basis, y, x_true)
            _write_baseline_params(os.path.join(out, "params.txt"), config, sub)
    except ConfigError:
        raise
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        raise ExperimentError(config, exc) from exc
    record.params_path = os.path.join(out, "params.txt")
    write_epoch_csv(os.path.join(out, "epochs.csv"), record.rows)
    write_raw(os.path.join(out, "x0.raw"), x0)
    export_pgm(os.path.join(out, "x0"), x0)
    write_raw(os.path.join(out, "y.raw"), y)
    if x_true is not None:
        write_raw(os.path.join(out, "truth.raw"), x_true)
    manifest = {
        "version": __version__,
        "seed": config.seed,
        "task": config.task,
        "method": config.method,
        "schedule": config.schedule,
        "schedule_kind": config.schedule_kind,
        "tau": ",".join(map(str, sub.tau)),
        "S": sub.S,
        "epochs": len(record.rows),
        "nfe": record.nfe,
        "final_loss": repr(record.final_loss),
        "final_psnr": repr(record.final_psnr),
        "final_ssim": repr(record.final_ssim),
        "kernel_backend": kernels.BACKEND,
        "files": "config.txt epochs.csv x0.raw y.raw params.txt",
    }
    if config.grad_check and record.grad_check_error is not None:
        manifest["grad_check_error"] = repr(record.grad_check_error)
    write_manifest(os.path.join(out, "manifest.txt"), manifest)
    return record


def suite_configs(name: str, seeds=(0,)) -> list[tuple[str, ExperimentConfig]]:
    """The ``(run_id, config)`` matrix of a named ablation."""
    runs = []
    for seed in seeds:
        if name == "epochs_vs_steps":
            # same NFE=300: 15 epochs x 20 steps, 10 x 30, 5 x 60
            for epochs, spec in ((15, "10,7,3"), (10, "15,10,5"), (5, "30,20,10")):
                runs.append((f"e{epochs}_s{sum(map(int, spec.split(',')))}_seed{seed}",
                             preset("desk_deblur", epochs=epochs, schedule=spec, seed=seed)))
        elif name == "shared_vs_distinct":
            for label, shared in (("distinct", False), ("shared", True)):
                runs.append((f"{label}_seed{seed}", preset("desk_sr4", shared_zeta=shared, seed=seed)))
        elif name == "uniform_vs_irregular":
            for kind in ("irregular", "uniform"):
                runs.append((f"{kind}_seed{seed}", preset("desk_sr4", schedule_kind=kind, seed=seed)))
        elif name == "ddpm_vs_ddim":
            for label, eta in (("ddpm", None), ("ddim", 0.0)):
                runs.append((f"{label}_seed{seed}", preset("desk_deblur", ddim_eta=eta, seed=seed)))
        else:
            raise ConfigError(f"unknown suite {name!r}; choose from {SUITES}")
    return runs


def _run_one(args):
    run_id, config, directory = args
    record = run_experiment(config, directory)
    return {
        "run_id": run_id,
        "task": config.task,
        "method": config.method,
        "schedule": f"{config.schedule_kind}:{config.schedule}",
        "epochs": config.epochs,
        "nfe": record.nfe,
        "final_psnr": float(record.final_psnr),
        "final_ssim": float(record.final_ssim),
        "final_loss": float(record.final_loss),
        "wct_seconds": round(record.wall_clock, 6),
    }


def ablation_suite(name: str, out: str = "runs", seeds=(0,), workers: int = 1) -> list[dict]:
    """Run a named ablation into ``out/<name>/`` and write ``summary.csv``.

    Each run owns its subdirectory, so ``workers > 1`` runs them in parallel
    processes without changing any per-run output.
    """
    runs = suite_configs(name, seeds)
    root = os.path.join(out, name)
    jobs = [(run_id, cfg, os.path.join(root, run_id)) for run_id, cfg in runs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(job) for job in jobs]
    os.makedirs(root, exist_ok=True)
    write_summary_csv(os.path.join(root, "summary.csv"), rows)
    return rows
