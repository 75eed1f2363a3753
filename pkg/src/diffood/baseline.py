"""Reconstruction-error baseline: encode up, decode back, L2 distance.

The comparison method the trajectory score is measured against. It walks
the deterministic path to a target noise level and back, costing two
network evaluations per step instead of the trajectory score's one-way
pass.
"""

from __future__ import annotations

import numpy as np

from .diffusion import NoiseSchedule, ddim_decode_step, ddim_encode_step


def reconstruction_baseline(model, x0, n_steps: int, schedule: NoiseSchedule,
                            stride: int = 10) -> float:
    """DDIM round-trip error ||x0 - x0_hat||_2 over n_steps each way."""
    if n_steps < 2:
        raise ValueError("need at least 2 reconstruction steps")
    if n_steps * stride > schedule.T:
        raise ValueError("reconstruction path exceeds schedule length")
    x0 = np.asarray(x0, dtype=np.float64)
    x = x0
    for i in range(1, n_steps + 1):
        t_from, t_to = (i - 1) * stride, i * stride
        eps = model.score_forward(x, t_from)
        x = ddim_encode_step(x, eps, t_from, t_to, schedule)
    for i in range(n_steps, 0, -1):
        t_from, t_to = i * stride, (i - 1) * stride
        eps = model.score_forward(x, t_from)
        x = ddim_decode_step(x, eps, t_from, t_to, schedule)
    return float(np.linalg.norm(x0 - x))
