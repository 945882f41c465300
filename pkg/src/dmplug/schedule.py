"""Discrete variance schedules and reverse-step subsequences."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = ["NoiseSchedule", "make_schedule", "make_linear_schedule", "pick_substeps"]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Betas for steps 1..T and the derived cumulative products.

    ``alpha_bars`` has length T+1 so that ``alpha_bars[t]`` is the cumulative
    product up to step t; ``alpha_bars[0]`` is fixed to 1.
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self):
        return len(self.betas)

    def beta(self, t):
        return float(self.betas[t - 1])

    def alpha(self, t):
        return float(self.alphas[t - 1])

    def alpha_bar(self, t):
        return float(self.alpha_bars[t])

    @property
    def terminal_is_noise(self):
        return self.alpha_bars[-1] < 0.01

    def to_dict(self):
        return {"betas": [float(b) for b in self.betas]}


def make_schedule(betas):
    betas = np.array(betas, dtype=np.float64)
    if betas.ndim != 1 or len(betas) < 1:
        raise ContractError("schedule needs at least one beta")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ContractError("every beta must lie in (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.empty(len(betas) + 1)
    alpha_bars[0] = 1.0
    for t, a in enumerate(alphas, start=1):
        alpha_bars[t] = a * alpha_bars[t - 1]
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(betas, alphas, alpha_bars)


def make_linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ContractError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return make_schedule(np.linspace(beta_start, beta_end, T))


def pick_substeps(schedule, k):
    """Return ``k`` ascending step indices evenly spread over [1, T], ending at T.

    Index i (1-based) is ``ceil(i * T / k)``.
    """
    T = schedule.T if isinstance(schedule, NoiseSchedule) else int(schedule)
    if not 1 <= k <= T:
        raise ContractError(f"need 1 <= k <= T, got k={k}, T={T}")
    return [-(-i * T // k) for i in range(1, k + 1)]
