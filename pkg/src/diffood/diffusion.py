"""Discrete variance-preserving noise schedules and deterministic DDIM stepping.

The schedule carries the cumulative signal coefficients alpha_bar[0..T]
(alpha_bar[0] == 1, strictly decreasing, near zero at T). DDIM steps are
the eta=0 deterministic update in either time direction; running them
data-to-noise while recording the predicted noise at each visited level
yields the trajectory that the anomaly score consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BETA_CLAMP = 0.999
COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative VP diffusion coefficients for t = 0..T.

    ``beta[t]`` is the per-step rate 1 - alpha_bar[t]/alpha_bar[t-1]
    (clamped), with beta[0] repeating beta[1] so the array indexes like
    alpha_bar. ``sigma[t] = sqrt(1 - alpha_bar[t])`` is the forward
    marginal standard deviation.
    """

    T: int
    alpha_bar: np.ndarray
    beta: np.ndarray
    tag: str = "custom"
    sigma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.T + 1,):
            raise ValueError(f"alpha_bar must have length T+1, got {ab.shape}")
        if abs(ab[0] - 1.0) > 1e-6:
            raise ValueError(f"alpha_bar[0] must be 1, got {ab[0]}")
        if not np.all(np.diff(ab) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not (0.0 < ab[-1] < 0.01):
            raise ValueError(f"alpha_bar[T] must lie in (0, 0.01), got {ab[-1]}")
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64))
        object.__setattr__(self, "sigma", np.sqrt(1.0 - ab))

    def g2_rate(self, t: int) -> float:
        """Squared diffusion coefficient per unit time, beta_t * T."""
        return float(self.beta[t]) * self.T


def cosine_schedule(T: int) -> NoiseSchedule:
    """Squared-cosine alpha_bar with per-step beta clamped at 0.999.

    alpha_bar is rebuilt as the cumulative product of the clamped
    (1 - beta) so the stored beta and alpha_bar stay consistent.
    """
    if T < 2:
        raise ValueError("schedule needs T >= 2")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * math.pi / 2.0) ** 2
    beta_steps = np.clip(1.0 - f[1:] / f[:-1], 0.0, BETA_CLAMP)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta_steps)])
    beta = np.concatenate([[beta_steps[0]], beta_steps])
    return NoiseSchedule(T=T, alpha_bar=alpha_bar, beta=beta, tag=f"cosine-T{T}")


@dataclass(frozen=True)
class Trajectory:
    """Forward DDIM path of one sample: the score-net outputs eps_hat_i
    recorded at strictly increasing levels t_i, alongside the state x_{t_i}
    at which each was evaluated.
    """

    sample_id: str
    t: tuple[int, ...]
    x: tuple[np.ndarray, ...]
    eps: tuple[np.ndarray, ...]
    schedule_tag: str
    stride: int

    def __post_init__(self):
        if len(self.t) < 2:
            raise ValueError("trajectory needs at least 2 steps")
        if not all(a < b for a, b in zip(self.t, self.t[1:])):
            raise ValueError("trajectory levels must be strictly increasing")
        if len({e.shape for e in self.eps} | {x.shape for x in self.x}) != 1:
            raise ValueError("all trajectory tensors must share one shape")

    @property
    def n_steps(self) -> int:
        return len(self.t)


def _x0_hat(x_t: np.ndarray, eps: np.ndarray, a_t: float) -> np.ndarray:
    return (x_t - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)


def ddim_encode_step(x_t, eps, t: int, t_next: int, schedule: NoiseSchedule):
    """Deterministic step toward noise, t -> t_next (t_next == t is identity)."""
    if t > t_next:
        raise ValueError(f"encode requires t <= t_next, got {t} -> {t_next}")
    if t_next > schedule.T:
        raise ValueError(f"t_next={t_next} beyond schedule T={schedule.T}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    a_next = schedule.alpha_bar[t_next]
    x0 = _x0_hat(x_t, eps, schedule.alpha_bar[t])
    return math.sqrt(a_next) * x0 + math.sqrt(1.0 - a_next) * eps


def ddim_decode_step(x_t, eps, t: int, t_prev: int, schedule: NoiseSchedule):
    """Deterministic step toward data, t -> t_prev; exact inverse of the
    encode step under a shared eps."""
    if t_prev >= t:
        raise ValueError(f"decode requires t_prev < t, got {t} -> {t_prev}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    a_prev = schedule.alpha_bar[t_prev]
    x0 = _x0_hat(x_t, eps, schedule.alpha_bar[t])
    return math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps


def encode_trajectory(model, x0, n_steps: int, stride: int,
                      schedule: NoiseSchedule, t_start: int = 0,
                      sample_id: str = "") -> Trajectory:
    """Run the forward DDIM path t_start -> t_start + n_steps*stride.

    The score network is evaluated exactly ``n_steps`` times, once at the
    start of each jump; its output is both recorded and reused as the eps
    of that jump. ``model`` needs only a ``score_forward(x, t)`` method.
    """
    if n_steps < 2:
        raise ValueError("need n_steps >= 2 (the curvature term needs a difference)")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if t_start + n_steps * stride > schedule.T:
        raise ValueError(
            f"t_start + n_steps*stride = {t_start + n_steps * stride} exceeds T={schedule.T}")
    x = np.asarray(x0, dtype=np.float64)
    levels, states, eps_list = [], [], []
    for i in range(1, n_steps + 1):
        t_from = t_start + (i - 1) * stride
        t_to = t_start + i * stride
        eps = model.score_forward(x, t_from)
        levels.append(t_from)
        states.append(x)
        eps_list.append(np.asarray(eps, dtype=np.float64))
        x = ddim_encode_step(x, eps, t_from, t_to, schedule)
    return Trajectory(sample_id=sample_id, t=tuple(levels), x=tuple(states),
                      eps=tuple(eps_list), schedule_tag=schedule.tag, stride=stride)


def ddim_generate(model, rng: np.random.Generator, dim: int,
                  schedule: NoiseSchedule, n_steps: int = 50,
                  x0_clip: float = 4.0):
    """Draw one sample by decoding pure noise to t=0 over strided levels.

    Sanity-check path only; scoring never calls this. The implied clean
    sample is clamped to [-x0_clip, x0_clip] at every step (data is
    standardized, so this only suppresses the 1/sqrt(alpha_bar)
    amplification of network error near the noise end) and the step's eps
    is re-derived from the clamped value.
    """
    levels = np.linspace(schedule.T, 0, n_steps + 1).round().astype(int)
    x = rng.standard_normal(dim)
    for t, t_prev in zip(levels[:-1], levels[1:]):
        eps = model.score_forward(x, int(t))
        a_t = schedule.alpha_bar[t]
        x0 = np.clip(_x0_hat(x, eps, a_t), -x0_clip, x0_clip)
        eps = (x - math.sqrt(a_t) * x0) / math.sqrt(1.0 - a_t)
        a_prev = schedule.alpha_bar[t_prev]
        x = math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps
    return x
