"""Reconstruction-free OOD detection from forward diffusion trajectories.

A sample is pushed a few deterministic steps toward noise; the score
network's outputs along the way, and how fast they change, summarize how
well the sample conforms to the training density. A KDE over inlier
validation scores turns that into a calibrated detector.
"""

from .autodiff import Adam, Tensor, backward
from .detector import TrajectoryAnomalyDetector
from .diffusion import (NoiseSchedule, Trajectory, cosine_schedule,
                        ddim_decode_step, ddim_encode_step, encode_trajectory)
from .gaussians import (AnalyticScoreModel, GaussianSpec, closed_form_gaussian_kl,
                        gaussian_marginal, gaussian_score, kl_score_integral)
from .metrics import auroc, fpr_at_tpr
from .scorenet import (ScoreModel, TrainConfig, load_checkpoint, save_checkpoint,
                       score_forward, time_embedding, train)
from .scoring import (AnomalyScore, KdeModel, anomaly_score, kde_fit, kde_logpdf,
                      ood_decision, ood_score)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Tensor", "backward",
    "TrajectoryAnomalyDetector",
    "NoiseSchedule", "Trajectory", "cosine_schedule",
    "ddim_decode_step", "ddim_encode_step", "encode_trajectory",
    "AnalyticScoreModel", "GaussianSpec", "closed_form_gaussian_kl",
    "gaussian_marginal", "gaussian_score", "kl_score_integral",
    "auroc", "fpr_at_tpr",
    "ScoreModel", "TrainConfig", "load_checkpoint", "save_checkpoint",
    "score_forward", "time_embedding", "train",
    "AnomalyScore", "KdeModel", "anomaly_score", "kde_fit", "kde_logpdf",
    "ood_decision", "ood_score",
    "__version__",
]
