from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# (beta_1, beta_T) per number of steps; other T scale the T=1000 endpoints by 1000/T
LINEAR_ENDPOINTS = {
    1000: (1e-4, 0.02),
    100: (1e-3, 0.2),
}


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def t_max(self) -> int:
        return len(self.beta)

    # 1-based accessors, matching the step index used throughout
    def b(self, t: int) -> float:
        return float(self.beta[t - 1])

    def a(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def ab(self, t: int) -> float:
        return float(self.alpha_bar[t - 1])

    def nearest_step(self, alpha_bar: float) -> int:
        """1-based ``t`` minimising ``|alpha_bar_t - alpha_bar|``."""
        return int(np.argmin(np.abs(self.alpha_bar - alpha_bar))) + 1


def schedule_from_betas(beta) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size == 0:
        raise ValueError("beta must be a nonempty 1-D array")
    if np.any(beta <= 0) or np.any(beta >= 1) or np.any(np.diff(beta) <= 0):
        raise ValueError("beta must be strictly increasing inside (0, 1)")
    alpha = 1.0 - beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def linear_schedule(t_max: int, beta_start: float | None = None,
                    beta_end: float | None = None) -> NoiseSchedule:
    if t_max < 2:
        raise ValueError(f"t_max must be >= 2, got {t_max}")
    default = LINEAR_ENDPOINTS.get(t_max)
    if default is None:
        scale = 1000.0 / t_max
        default = (1e-4 * scale, min(0.02 * scale, 0.999))
    b0 = default[0] if beta_start is None else beta_start
    b1 = default[1] if beta_end is None else beta_end
    return schedule_from_betas(np.linspace(b0, b1, t_max))


def forward_sample(schedule: NoiseSchedule, h0, t, eps):
    """``h_t = sqrt(ab_t) h0 + sqrt(1 - ab_t) eps``; ``t`` may be an array of steps."""
    ab = schedule.alpha_bar[np.asarray(t) - 1]
    if np.ndim(ab) > 0:
        ab = ab.reshape(-1, *([1] * (np.ndim(h0) - 1)))
    return np.sqrt(ab) * h0 + np.sqrt(1.0 - ab) * eps
