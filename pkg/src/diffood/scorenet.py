"""The noise-prediction network and its denoising training loop.

An MLP takes the noised sample concatenated with a sinusoidal embedding of
the noise level and predicts the injected unit Gaussian noise. Training
minimizes the mean squared prediction error with levels drawn uniformly,
which makes the network output converge to -sigma_t times the Stein score
of the forward marginal.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import sbdt
from .autodiff import Adam, Tensor, backward, matmul, silu, zero_grads
from .diffusion import NoiseSchedule, cosine_schedule
from .rng import stream


class TrainingDivergedError(RuntimeError):
    """Raised when a training batch produces a non-finite loss."""

    def __init__(self, epoch: int, batch: int, seed: int):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (training seed {seed})")
        self.epoch = epoch
        self.batch = batch
        self.seed = seed


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    T: int = 1000
    sigma_mode: str = "marginal"  # or "step-ratio", see sample_training_pair

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs, self.T) <= 0:
            raise ValueError("all training settings must be positive")
        if self.sigma_mode not in ("marginal", "step-ratio"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sin/cos features of the raw level t over geometric frequencies.

    Layout is [sin(t f_0) .. sin(t f_{h-1}), cos(t f_0) .. cos(t f_{h-1})]
    with f_k = 10000^(-k/(h-1)) and h = dim/2.
    """
    if dim % 2 != 0 or dim < 2:
        raise ValueError(f"embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = 10000.0 ** (-np.arange(half) / (half - 1))
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


class ScoreModel:
    """MLP noise predictor with an instrumented evaluation counter.

    Hidden layers use SiLU; the output layer starts at zero so a fresh
    model is exactly the zero predictor. ``nfe`` counts per-sample forward
    evaluations made through :meth:`score_forward` (thread safe).
    """

    def __init__(self, data_dim: int, hidden: tuple[int, ...] = (128, 128, 128),
                 embed_dim: int = 32, T: int = 1000, schedule_tag: str = "",
                 init_seed: int = 0):
        if data_dim < 1:
            raise ValueError("data_dim must be positive")
        self.data_dim = data_dim
        self.hidden = tuple(hidden)
        self.embed_dim = embed_dim
        self.T = T
        self.schedule_tag = schedule_tag
        self.init_seed = init_seed
        self.nfe = 0
        self._nfe_lock = threading.Lock()
        rng = stream(init_seed, "weights")
        dims = [data_dim + embed_dim, *self.hidden, data_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            w = np.zeros((fan_in, fan_out)) if last else \
                rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def reset_nfe(self) -> None:
        with self._nfe_lock:
            self.nfe = 0

    def _embed_rows(self, t) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(t))
        return np.stack([time_embedding(int(ti), self.embed_dim) for ti in ts])

    def forward_graph(self, x_emb: Tensor) -> Tensor:
        """Differentiable forward pass on pre-concatenated (n, d+emb) input."""
        h = x_emb
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = matmul(h, w) + b
            if i != last:
                h = silu(h)
        return h

    def _predict(self, x_emb: np.ndarray) -> np.ndarray:
        h = x_emb
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                s = np.empty_like(h)
                pos = h >= 0
                s[pos] = 1.0 / (1.0 + np.exp(-h[pos]))
                eh = np.exp(h[~pos])
                s[~pos] = eh / (1.0 + eh)
                h = h * s
        return h

    def score_forward(self, x, t: int) -> np.ndarray:
        """Predicted noise for one sample (1-d x) or a batch (2-d x)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        rows = x[None, :] if single else x
        if rows.shape[1] != self.data_dim:
            raise ValueError(f"input dim {rows.shape[1]} != model dim {self.data_dim}")
        emb = self._embed_rows(np.full(rows.shape[0], t))
        out = self._predict(np.concatenate([rows, emb], axis=1))
        with self._nfe_lock:
            self.nfe += rows.shape[0]
        return out[0] if single else out


def score_forward(model: ScoreModel, x_t, t: int) -> np.ndarray:
    return model.score_forward(x_t, t)


def sample_training_pair(x0, t: int, schedule: NoiseSchedule,
                         rng: np.random.Generator, sigma_mode: str = "marginal"):
    """Draw (x_t, eps) for one clean sample at level t >= 1.

    ``marginal`` uses the forward-marginal deviation sqrt(1 - alpha_bar_t).
    ``step-ratio`` instead scales the noise by
    sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)); it is not consistent
    with deterministic inversion and exists only for comparison.
    """
    if t < 1:
        raise ValueError("training levels start at t = 1")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    a = schedule.alpha_bar[t]
    if sigma_mode == "marginal":
        coeff = math.sqrt(1.0 - a)
    elif sigma_mode == "step-ratio":
        coeff = math.sqrt((1.0 - schedule.alpha_bar[t - 1]) / (1.0 - a))
    else:
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}")
    return math.sqrt(a) * x0 + coeff * eps, eps


def train(model: ScoreModel, data: np.ndarray, cfg: TrainConfig,
          schedule: NoiseSchedule) -> list[float]:
    """Denoising training; returns the per-epoch mean loss curve.

    Loss is the squared prediction error averaged over batch and
    coordinates. Fully determined by (cfg.seed, data, cfg): batching,
    level draws and noise all come from the config's training stream.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("data must be a nonempty (n, d) array")
    if data.shape[1] != model.data_dim:
        raise ValueError(f"data dim {data.shape[1]} != model dim {model.data_dim}")
    rng = stream(cfg.seed, "train")
    opt = Adam(model.params, lr=cfg.learning_rate)
    n = data.shape[0]
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            x0 = data[order[start:start + cfg.batch_size]]
            ts = rng.integers(1, schedule.T + 1, size=x0.shape[0])
            eps = rng.standard_normal(x0.shape)
            a = schedule.alpha_bar[ts][:, None]
            if cfg.sigma_mode == "marginal":
                coeff = np.sqrt(1.0 - a)
            else:
                coeff = np.sqrt((1.0 - schedule.alpha_bar[ts - 1][:, None]) / (1.0 - a))
            x_t = np.sqrt(a) * x0 + coeff * eps
            emb = model._embed_rows(ts)
            inp = Tensor(np.concatenate([x_t, emb], axis=1))
            pred = model.forward_graph(inp)
            loss = (pred - Tensor(eps)).square().mean()
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(epoch, bi, cfg.seed)
            zero_grads(model.params)
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
        curve.append(float(np.mean(losses)))
    return curve


MODEL_FORMAT = "score-mlp-v1"


def save_checkpoint(path, model: ScoreModel, train_seed: int | None = None,
                    extra: dict | None = None) -> None:
    """Write all parameters plus an architecture manifest as one container."""
    tensors = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        tensors[f"layer{i}/weight"] = w.data
        tensors[f"layer{i}/bias"] = b.data
    manifest = {
        "format": MODEL_FORMAT,
        "data_dim": model.data_dim,
        "hidden": list(model.hidden),
        "embed_dim": model.embed_dim,
        "T": model.T,
        "schedule_tag": model.schedule_tag,
        "init_seed": model.init_seed,
        "train_seed": train_seed,
    }
    if extra:
        manifest.update(extra)
    sbdt.save_tensors(path, tensors, json.dumps(manifest, sort_keys=True))


def load_checkpoint(path) -> ScoreModel:
    tensors, manifest_text = sbdt.load_tensors(path)
    manifest = json.loads(manifest_text)
    if manifest.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a score-model checkpoint: {manifest.get('format')!r}")
    model = ScoreModel(
        data_dim=int(manifest["data_dim"]),
        hidden=tuple(manifest["hidden"]),
        embed_dim=int(manifest["embed_dim"]),
        T=int(manifest["T"]),
        schedule_tag=manifest["schedule_tag"],
        init_seed=int(manifest["init_seed"]),
    )
    for i in range(len(model.weights)):
        model.weights[i].data = tensors[f"layer{i}/weight"]
        model.biases[i].data = tensors[f"layer{i}/bias"]
    return model


def schedule_for(model: ScoreModel) -> NoiseSchedule:
    """Rebuild the schedule a checkpoint was trained with (tag + T)."""
    if model.schedule_tag.startswith("cosine-T") or model.schedule_tag == "":
        return cosine_schedule(model.T)
    raise ValueError(f"unknown schedule tag {model.schedule_tag!r}")
