"""Flat ``key=value`` experiment configuration.

One key per line, ``#`` starts a comment. Every field of
:class:`ExperimentConfig` is a valid key; anything else is rejected with the
offending line number. The fully resolved configuration is echoed into the
output directory so a run can be repeated from its own output.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .schedule import parse_segment_spec
from .wavelet import FAMILIES

TASKS = ("gaussian_deblur", "motion_deblur", "inpaint_random", "inpaint_box", "super_resolution")
METHODS = ("none", "pocs", "mcg", "dps", "pigdm", "zaps")

# task names used for the ZAPS initialization table
ZAPS_TASK = {
    "gaussian_deblur": "gaussian_blur",
    "motion_deblur": "motion_blur",
    "inpaint_random": "inpaint",
    "inpaint_box": "inpaint",
    "super_resolution": "super_resolution",
}


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


@dataclass
class ExperimentConfig:
    task: str = "gaussian_deblur"
    method: str = "zaps"
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    schedule: str = "15,10,5"
    schedule_kind: str = "irregular"
    epochs: int = 10
    sigma_y: float = 0.05
    seed: int = 0
    channels: int = 1
    height: int = 32
    width: int = 32
    # "desk" or a path to a prior file
    prior: str = "desk"
    prior_mean: float = 0.5
    prior_coarse: float = 1.0
    prior_details: str = ""
    wavelet: str = "db4"
    levels: int = 2
    # optional raw images; empty means synthesize from the prior
    image: str = ""
    measurement: str = ""
    out: str = "runs/default"
    blur_size: int = 9
    blur_sigma: float = 1.5
    kernel: str = ""
    motion_size: int = 9
    motion_angle: float = 30.0
    motion_length: float = 7.0
    keep_fraction: float = 0.3
    box_top: int = 8
    box_left: int = 8
    box_size: int = 16
    sr_factor: int = 4
    sr_kind: str = "block"
    # baseline guidance
    zeta: float = 1.0
    jacobian_mode: str = "identity"
    normalize_residual: bool = False
    ddim_eta: float | None = None
    # fine-tuning
    lr: float = 0.1
    lr_diag: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    zeta_init: float | None = None
    diag_init: float | None = None
    shared_zeta: bool = False
    shared_diag: bool = False
    channel_shared_diag: bool = False
    noise_policy: str = "fixed_bank"
    grad_check: bool = False
    ssim_window: int = 7

    def __post_init__(self):
        self.validate()

    @property
    def counts(self) -> list[int]:
        return parse_segment_spec(self.schedule)

    @property
    def S(self) -> int:
        return sum(self.counts)

    @property
    def nfe(self) -> int:
        """Score evaluations: one pass per epoch for ZAPS, a single pass otherwise."""
        return self.S * (self.epochs if self.method == "zaps" else 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def zaps_task(self) -> str:
        return ZAPS_TASK[self.task]

    def detail_variances(self):
        if not self.prior_details.strip():
            return None
        return [float(v) for v in self.prior_details.replace(",", " ").split()]

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.task in TASKS, f"task must be one of {TASKS}, got {self.task!r}")
        need(self.method in METHODS, f"method must be one of {METHODS}, got {self.method!r}")
        need(self.T >= 2, "T must be >= 2")
        need(0 < self.beta_start < self.beta_end < 1, "need 0 < beta_start < beta_end < 1")
        try:
            counts = self.counts
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None
        need(sum(counts) <= self.T, f"schedule uses {sum(counts)} steps but T={self.T}")
        need(self.schedule_kind in ("irregular", "uniform"), "schedule_kind must be irregular or uniform")
        need(self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}")
        need(self.sigma_y >= 0, "sigma_y must be non-negative")
        need(self.seed >= 0, "seed must be non-negative")
        need(min(self.channels, self.height, self.width) >= 1, "image dimensions must be positive")
        need(self.wavelet in FAMILIES, f"wavelet must be one of {FAMILIES}")
        need(self.levels >= 1, "levels must be >= 1")
        block = 2**self.levels
        need(self.height % block == 0 and self.width % block == 0,
             f"{self.height}x{self.width} image not divisible by 2^{self.levels}")
        need(0 < self.keep_fraction <= 1, "keep_fraction must be in (0, 1]")
        need(self.sr_factor >= 1, "sr_factor must be >= 1")
        need(self.sr_kind in ("block", "bicubic"), "sr_kind must be block or bicubic")
        if self.task == "super_resolution":
            need(self.height % self.sr_factor == 0 and self.width % self.sr_factor == 0,
                 "image size must be divisible by sr_factor")
        need(self.jacobian_mode in ("identity", "wavelet_diag", "exact_oracle"),
             f"unknown jacobian_mode {self.jacobian_mode!r}")
        need(self.ddim_eta is None or 0.0 <= self.ddim_eta <= 1.0, "ddim_eta must be in [0, 1]")
        need(self.lr > 0 and (self.lr_diag is None or self.lr_diag > 0), "learning rates must be positive")
        need(self.noise_policy in ("fixed_bank", "resample_per_epoch"),
             "noise_policy must be fixed_bank or resample_per_epoch")
        need(self.ssim_window in (7, 11), "ssim_window must be 7 or 11")
        if self.prior_details.strip():
            try:
                details = self.detail_variances()
            except ValueError:
                raise ConfigError(f"prior_details is not a list of numbers: {self.prior_details!r}") from None
            need(len(details) == self.levels, f"prior_details needs {self.levels} values")
            need(min(details) > 0, "prior_details must be positive")
        need(self.prior_coarse > 0, "prior_coarse must be positive")

    def echo(self) -> str:
        """Canonical ``key=value`` text; loading it reproduces this config."""
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(name: str, type_text: str, raw: str):
    optional = "None" in type_text
    if optional and raw.lower() in ("none", ""):
        return None
    base = type_text.split("|")[0].strip()
    if base == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if base == "int":
        return int(raw)
    if base == "float":
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<string>", **overrides) -> ExperimentConfig:
    """Parse ``key=value`` text; ``overrides`` are applied after the file."""
    types = {f.name: str(f.type) for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, types[key], raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: invalid value for {key}: {exc}") from None
    values.update(overrides)
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path), **overrides)
