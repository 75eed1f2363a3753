"""Scikit-learn style anomaly detector over forward diffusion trajectories.

``fit`` trains the noise-prediction network on inlier rows and calibrates
a KDE on held-out inlier trajectory scores; ``score_samples`` returns the
calibrated log-density (higher means more normal), and ``predict`` flags
outliers with the usual -1/+1 convention.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .diffusion import cosine_schedule, encode_trajectory
from .rng import stream, stream_seed
from .scorenet import ScoreModel, TrainConfig, train
from .scoring import anomaly_score, decision_threshold, kde_fit, kde_logpdf


class TrajectoryAnomalyDetector(BaseEstimator, OutlierMixin):
    """OOD detector scoring samples by their forward diffusion trajectory.

    Parameters
    ----------
    n_steps : trajectory length S (model evaluations per scored sample).
    norm_power : p of the powered p-norm in the anomaly value.
    stride : level stride between trajectory steps.
    schedule_steps : discrete schedule length T.
    alpha : validation-quantile at which ``predict`` flags outliers.
    hidden_sizes, embed_dim : score-network architecture.
    learning_rate, batch_size, epochs : training settings (epochs=0 keeps
        the fresh zero-output network).
    val_fraction : inlier fraction held out of training for calibration.
    random_state : seed for all internal randomness.
    model : optional pre-trained ScoreModel; skips training entirely.
    """

    def __init__(self, n_steps: int = 5, norm_power: int = 3, stride: int = 20,
                 schedule_steps: int = 1000, alpha: float = 0.05,
                 hidden_sizes: tuple[int, ...] = (128, 128, 128),
                 embed_dim: int = 32, learning_rate: float = 1e-4,
                 batch_size: int = 64, epochs: int = 50,
                 val_fraction: float = 0.15, random_state: int = 0,
                 model: ScoreModel | None = None):
        self.n_steps = n_steps
        self.norm_power = norm_power
        self.stride = stride
        self.schedule_steps = schedule_steps
        self.alpha = alpha
        self.hidden_sizes = hidden_sizes
        self.embed_dim = embed_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.val_fraction = val_fraction
        self.random_state = random_state
        self.model = model

    def fit(self, X, y=None, calibration_X=None):
        """Train on inlier rows and calibrate the score density.

        When ``calibration_X`` is given it supplies the validation scores;
        otherwise ``val_fraction`` of X is held out for that purpose.
        """
        X = check_array(X, dtype=np.float64)
        if calibration_X is not None:
            calibration_X = check_array(calibration_X, dtype=np.float64)
        if self.model is not None:
            if self.model.data_dim != X.shape[1]:
                raise ValueError(
                    f"pretrained model dim {self.model.data_dim} != {X.shape[1]}")
            self.model_ = self.model
            self.schedule_ = cosine_schedule(self.model.T)
            self.loss_curve_ = []
        else:
            self.schedule_ = cosine_schedule(self.schedule_steps)
            if calibration_X is None:
                rng = stream(self.random_state, "detector/val-split")
                idx = rng.permutation(X.shape[0])
                n_val = max(2, int(round(self.val_fraction * X.shape[0])))
                calibration_X, train_X = X[idx[:n_val]], X[idx[n_val:]]
            else:
                train_X = X
            self.model_ = ScoreModel(
                data_dim=X.shape[1], hidden=tuple(self.hidden_sizes),
                embed_dim=self.embed_dim, T=self.schedule_steps,
                schedule_tag=self.schedule_.tag,
                init_seed=stream_seed(self.random_state, "detector/init"))
            if self.epochs > 0:
                cfg = TrainConfig(learning_rate=self.learning_rate,
                                  batch_size=self.batch_size, epochs=self.epochs,
                                  seed=stream_seed(self.random_state, "detector/train"),
                                  T=self.schedule_steps)
                self.loss_curve_ = train(self.model_, train_X, cfg, self.schedule_)
            else:
                self.loss_curve_ = []
        if calibration_X is None:
            raise ValueError("a pretrained model needs explicit calibration_X "
                             "for score calibration")
        val_values = self._anomaly_values(calibration_X)
        self.kde_ = kde_fit(val_values)
        self.offset_ = decision_threshold(self.kde_, self.alpha)
        self.n_features_in_ = X.shape[1]
        return self

    def _anomaly_values(self, X) -> np.ndarray:
        values = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            traj = encode_trajectory(self.model_, X[i], self.n_steps, self.stride,
                                     self.schedule_)
            values[i] = anomaly_score(traj, self.norm_power).value
        return values

    def score_samples(self, X) -> np.ndarray:
        """Calibrated log-density of each sample's trajectory score.
        Higher means more normal."""
        check_is_fitted(self, "kde_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected "
                             f"{self.n_features_in_}")
        return np.array([kde_logpdf(self.kde_, v) for v in self._anomaly_values(X)])

    def decision_function(self, X) -> np.ndarray:
        """Positive for inliers, negative for outliers."""
        return self.score_samples(X) - self.offset_

    def predict(self, X) -> np.ndarray:
        """+1 for inliers, -1 for outliers."""
        return np.where(self.decision_function(X) < 0.0, -1, 1)
