"""Trajectory anomaly scoring and KDE calibration.

A trajectory's anomaly value is the sum of two non-negative terms: the
p-norm (raised to p) of the summed noise predictions, and the same
functional applied to the summed finite differences of those predictions
over unit diffusion time. Inlier validation values calibrate a Gaussian
kernel density; test samples are judged by their log-density under it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import Trajectory

LOGPDF_FLOOR = -745.0  # ln of the smallest positive double


@dataclass(frozen=True)
class AnomalyScore:
    value: float
    magnitude_term: float
    curvature_term: float
    sample_id: str
    n_steps: int
    norm_power: int
    stride: int

    def __post_init__(self):
        if self.magnitude_term < 0 or self.curvature_term < 0:
            raise ValueError("score terms must be non-negative")


def _powered_norm(v: np.ndarray, p: int) -> float:
    """(p-norm of v) ** p, i.e. the sum of |v_i|^p."""
    return float(np.sum(np.abs(v) ** p))


def anomaly_score(traj: Trajectory, p: int = 3) -> AnomalyScore:
    """Magnitude plus curvature terms of a forward trajectory.

    Curvature uses forward differences (eps_{i+1} - eps_i) / dt on unit
    diffusion time dt = stride/T, with the last difference repeated so the
    sum runs over as many terms as the trajectory has steps.
    """
    if p < 1:
        raise ValueError("norm power must be >= 1")
    if traj.n_steps < 2:
        raise ValueError("trajectory too short for a finite difference")
    eps = np.stack(traj.eps)
    levels = np.asarray(traj.t, dtype=np.float64)
    T = _schedule_T(traj)
    dts = np.diff(levels) / T
    diffs = (eps[1:] - eps[:-1]) / dts[:, None]
    diffs = np.concatenate([diffs, diffs[-1:]], axis=0)
    # summing in sorted order makes the magnitude term exactly invariant
    # under reordering of the recorded steps
    magnitude = _powered_norm(np.sort(eps, axis=0).sum(axis=0), p)
    curvature = _powered_norm(diffs.sum(axis=0), p)
    return AnomalyScore(value=magnitude + curvature, magnitude_term=magnitude,
                        curvature_term=curvature, sample_id=traj.sample_id,
                        n_steps=traj.n_steps, norm_power=p, stride=traj.stride)


def trajectory_norms(traj: Trajectory, p: int = 3) -> tuple[float, float]:
    """Unpowered p-norms of the two score terms (for rank-equivalence checks)."""
    s = anomaly_score(traj, p)
    return s.magnitude_term ** (1.0 / p), s.curvature_term ** (1.0 / p)


def _schedule_T(traj: Trajectory) -> int:
    tag = traj.schedule_tag
    if tag.startswith("cosine-T"):
        return int(tag.split("cosine-T")[1])
    # fall back to the last visited level plus one stride
    return traj.t[-1] + traj.stride


@dataclass(frozen=True)
class KdeModel:
    """Gaussian-kernel density over scalar validation scores."""

    support: np.ndarray
    bandwidth: float
    rule: str = "silverman"

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.float64)
        if support.ndim != 1 or support.size < 2:
            raise ValueError("KDE needs at least 2 support points")
        if not np.all(np.isfinite(support)):
            raise ValueError("KDE support must be finite")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "support", support)


def silverman_bandwidth(values: np.ndarray) -> float:
    """0.9 * min(std, IQR/1.34) * n^(-1/5), with a tiny floor for
    zero-spread inputs."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    std = float(np.std(values, ddof=1))
    q75, q25 = np.percentile(values, [75.0, 25.0])
    spread = min(std, (q75 - q25) / 1.34)
    h = 0.9 * spread * n ** (-0.2)
    if h <= 0.0:
        h = 1e-3 * max(abs(float(np.mean(values))), 1.0)
    return h


def kde_fit(val_scores) -> KdeModel:
    values = np.asarray(val_scores, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise ValueError("need at least 2 validation scores")
    if not np.all(np.isfinite(values)):
        raise ValueError("validation scores must be finite")
    return KdeModel(support=values, bandwidth=silverman_bandwidth(values))


def kde_logpdf(kde: KdeModel, s: float) -> float:
    """Log density at s, stabilized by shifting out the largest exponent."""
    z = (s - kde.support) / kde.bandwidth
    expo = -0.5 * z * z
    m = float(np.max(expo))
    if m <= LOGPDF_FLOOR:
        return LOGPDF_FLOOR
    total = float(np.sum(np.exp(expo - m)))
    out = m + math.log(total) - math.log(kde.support.size * kde.bandwidth
                                         * math.sqrt(2.0 * math.pi))
    return max(out, LOGPDF_FLOOR)


def ood_score(kde: KdeModel, s: AnomalyScore | float) -> float:
    """Continuous OOD score: negative KDE log-density; higher means more
    anomalous."""
    value = s.value if isinstance(s, AnomalyScore) else float(s)
    return -kde_logpdf(kde, value)


def decision_threshold(kde: KdeModel, alpha: float = 0.05) -> float:
    """alpha-quantile of the log-densities of the fitted validation scores."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    logs = np.array([kde_logpdf(kde, float(v)) for v in kde.support])
    # "lower" keeps the quantile at an observed value, so alpha -> 0 flags
    # nothing and the flagged fraction stays within 1/n of alpha
    return float(np.quantile(logs, alpha, method="lower"))


def ood_decision(kde: KdeModel, s: AnomalyScore | float, alpha: float = 0.05) -> bool:
    """Flag OOD when the score's log-density falls below the alpha-quantile
    of the validation log-densities."""
    value = s.value if isinstance(s, AnomalyScore) else float(s)
    return kde_logpdf(kde, value) < decision_threshold(kde, alpha)
