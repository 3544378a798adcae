"""Training noise schedules and the inference sub-schedules unrolled over.

All public interfaces use 1-based timesteps ``t in [1, T]``; ``t = 0`` is the
clean-data convention with ``alpha_bar(0) == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance tables for ``T`` training steps (stored 0-based, read 1-based)."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)
    posterior_sigmas: np.ndarray = field(repr=False)

    def beta(self, t: int) -> float:
        return float(self.betas[self._index(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._index(t)])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at ``t``; ``alpha_bar(0) == 1``."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._index(t)])

    def posterior_sigma(self, t: int) -> float:
        return float(self.posterior_sigmas[self._index(t)])

    def _index(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return t - 1


def schedule_from_betas(betas) -> NoiseSchedule:
    """Derive alpha, alpha-bar and posterior-sigma tables from ``betas``."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 2:
        raise ValueError("need at least two betas")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ValueError("betas must lie in (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate(([1.0], alpha_bars[:-1]))
    posterior_sigmas = np.sqrt((1.0 - prev) / (1.0 - alpha_bars) * betas)
    for arr in (betas, alphas, alpha_bars, posterior_sigmas):
        arr.setflags(write=False)
    return NoiseSchedule(
        T=betas.size,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_sigmas=posterior_sigmas,
    )


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Standard DDPM schedule with betas linearly spaced, endpoints inclusive."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    return schedule_from_betas(np.linspace(beta_start, beta_end, T))


@dataclass(frozen=True)
class SubSchedule:
    """Strictly increasing timesteps ``tau`` visited by the sampler.

    ``counts`` holds the per-segment sample counts for irregular schedules
    (lowest-noise segment first) and is ``None`` for uniform ones.
    """

    T: int
    tau: tuple[int, ...]
    kind: str
    counts: tuple[int, ...] | None = None

    @property
    def S(self) -> int:
        return len(self.tau)

    def previous(self, i: int) -> int:
        """Timestep the sampler jumps to from ``tau[i]`` (0-based ``i``)."""
        return self.tau[i - 1] if i > 0 else 0

    def __post_init__(self):
        tau = self.tau
        if not tau:
            raise ValueError("empty sub-schedule")
        if tau[0] < 1 or tau[-1] > self.T:
            raise ValueError(f"indices must lie in [1, {self.T}]")
        if any(b <= a for a, b in zip(tau, tau[1:])):
            raise ValueError("sub-schedule must be strictly increasing")


def parse_segment_spec(spec: str) -> list[int]:
    """Parse ``"c1,c2,...,ck"``; the first count is the lowest-noise segment."""
    if spec is None or not spec.strip():
        raise ValueError("empty schedule spec")
    counts = []
    for token in spec.split(","):
        token = token.strip()
        try:
            value = int(token)
        except ValueError:
            raise ValueError(f"non-numeric segment count {token!r} in {spec!r}") from None
        if value <= 0:
            raise ValueError(f"segment counts must be positive, got {value}")
        counts.append(value)
    return counts


def _segment_bounds(T: int, n_segments: int) -> list[tuple[int, int]]:
    # earlier (low-t) segments absorb the remainder
    size, extra = divmod(T, n_segments)
    bounds = []
    start = 1
    for k in range(n_segments):
        length = size + (1 if k < extra else 0)
        bounds.append((start, length))
        start += length
    return bounds


def _strided(start: int, length: int, count: int) -> list[int]:
    return [start + (j * length) // count for j in range(count)]


def build_irregular_subschedule(T: int, counts) -> SubSchedule:
    """Split ``[1, T]`` into ``len(counts)`` equal segments and stride each.

    Segment ``k`` of length ``L`` starting at ``a`` contributes
    ``a + floor(j * L / counts[k])`` for ``j < counts[k]``.
    """
    counts = [int(c) for c in counts]
    if not counts:
        raise ValueError("need at least one segment")
    if any(c <= 0 for c in counts):
        raise ValueError("segment counts must be positive")
    if sum(counts) > T:
        raise ValueError(f"counts sum to {sum(counts)} > T={T}")
    tau = []
    for (start, length), c in zip(_segment_bounds(T, len(counts)), counts):
        if c > length:
            raise ValueError(f"segment starting at {start} has {length} steps, asked for {c}")
        tau.extend(_strided(start, length, c))
    return SubSchedule(T=T, tau=tuple(tau), kind="irregular", counts=tuple(counts))


def build_uniform_subschedule(T: int, S: int) -> SubSchedule:
    if not 1 <= S <= T:
        raise ValueError(f"need 1 <= S <= T, got S={S}, T={T}")
    return SubSchedule(T=T, tau=tuple(_strided(1, T, S)), kind="uniform")


def subschedule_from_spec(T: int, spec: str, kind: str = "irregular") -> SubSchedule:
    """Build a sub-schedule from a ``--schedule`` string.

    With ``kind="uniform"`` only the total count ``S`` of the spec is used.
    """
    counts = parse_segment_spec(spec)
    if kind == "uniform":
        return build_uniform_subschedule(T, sum(counts))
    if kind != "irregular":
        raise ValueError(f"unknown schedule kind {kind!r}")
    return build_irregular_subschedule(T, counts)
