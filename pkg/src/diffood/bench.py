"""Canonical benchmarks and the end-to-end evaluation pipeline.

A benchmark is a plain-text key=value config naming a data construction
(generator, split protocol) plus training settings. The runner chains
generate -> train -> score -> evaluate with every random draw derived
from one run seed, so a (benchmark, seed) pair pins the outputs byte for
byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .baseline import reconstruction_baseline
from .datasets import (GENERATORS, BenchmarkSplit, Dataset, make_far_ood_split,
                       make_near_ood_split)
from .diffusion import NoiseSchedule, cosine_schedule, encode_trajectory
from .metrics import auroc, fpr_at_tpr
from .report import EvalReport, measure_latency_ms
from .rng import stream_seed
from .scorenet import ScoreModel, TrainConfig, save_checkpoint, train
from .scoring import (anomaly_score, decision_threshold, kde_fit, kde_logpdf,
                      ood_score)

BENCHMARK_IDS = ("B1", "B2", "B3", "B4", "B5")

_DEFAULTS = {
    "train_frac": 0.70, "val_frac": 0.15, "test_frac": 0.15,
    "epochs": 60, "learning_rate": 1e-4, "batch_size": 64, "T": 1000,
    "seed": 0,
}


@dataclass
class BenchmarkConfig:
    benchmark: str
    kind: str
    generator: str
    n_samples: int
    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        if key in self.values:
            return self.values[key]
        if default is not None:
            return default
        if key in _DEFAULTS:
            return _DEFAULTS[key]
        raise KeyError(f"benchmark config has no key {key!r}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (float(self.get("train_frac")), float(self.get("val_frac")),
                float(self.get("test_frac")))

    def generator_kwargs(self, name: str, prefix: str = "") -> dict:
        pre = f"{prefix}{name}_"
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}


def _parse_value(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> BenchmarkConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno} is not key = value: {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = _parse_value(val)
    for required in ("benchmark", "kind", "generator", "n_samples"):
        if required not in values:
            raise ValueError(f"config is missing required key {required!r}")
    if values["kind"] not in ("near", "far"):
        raise ValueError(f"kind must be near or far, got {values['kind']!r}")
    if values["generator"] not in GENERATORS:
        raise ValueError(f"unknown generator {values['generator']!r}")
    return BenchmarkConfig(benchmark=str(values["benchmark"]),
                           kind=str(values["kind"]),
                           generator=str(values["generator"]),
                           n_samples=int(values["n_samples"]),
                           values=values)


def load_config(source) -> BenchmarkConfig:
    """Load a shipped benchmark by id (e.g. "B1") or a config file path."""
    if isinstance(source, str) and source in BENCHMARK_IDS:
        text = (resources.files("diffood") / "configs" / f"{source}.cfg").read_text()
        return parse_config_text(text)
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"no such benchmark config: {source}")
    return parse_config_text(path.read_text())


def build_split(cfg: BenchmarkConfig, seed: int) -> BenchmarkSplit:
    """Materialize the benchmark's data split for one run seed."""
    data_stream = str(cfg.get("data_stream", cfg.benchmark))
    gen_seed = stream_seed(seed, f"{data_stream}/data")
    split_seed = stream_seed(seed, f"{data_stream}/split")
    # generators emit raw geometry here; the split constructors standardize
    # every member with train-only statistics, so OOD data keeps its raw
    # scale relative to the inlier family
    gen = GENERATORS[cfg.generator]
    id_ds: Dataset = gen(n=cfg.n_samples, seed=gen_seed, standardize=False,
                         **cfg.generator_kwargs(cfg.generator))
    if cfg.kind == "near":
        holdout = cfg.get("holdout")
        if isinstance(holdout, str):
            holdout = {int(h) for h in holdout.split(",")}
        else:
            holdout = {int(holdout)}
        return make_near_ood_split(id_ds, holdout, cfg.fractions, seed=split_seed)
    names = str(cfg.get("ood_generators")).split(",")
    ood_n = int(cfg.get("ood_n_samples", 600))
    ood_list = []
    for i, name in enumerate(n.strip() for n in names):
        ood_gen = GENERATORS[name]
        ood_seed = stream_seed(seed, f"{data_stream}/ood/{name}/{i}")
        ood_list.append(ood_gen(n=ood_n, seed=ood_seed, standardize=False,
                                **cfg.generator_kwargs(name, prefix="ood_")))
    return make_far_ood_split(id_ds, ood_list, cfg.fractions, seed=split_seed)


@dataclass
class ScoredSample:
    sample_id: str
    member: str
    value: float
    magnitude: float
    curvature: float
    mag_norm: float
    curv_norm: float


def score_dataset(model, samples: np.ndarray, member: str, schedule: NoiseSchedule,
                  n_steps: int = 5, p: int = 3, stride: int = 20,
                  threads: int = 1) -> list[ScoredSample]:
    """Trajectory-score every row; exactly n_steps model evaluations each."""

    def score_one(i: int) -> ScoredSample:
        traj = encode_trajectory(model, samples[i], n_steps, stride, schedule,
                                 sample_id=f"{member}-{i}")
        s = anomaly_score(traj, p)
        return ScoredSample(sample_id=s.sample_id, member=member, value=s.value,
                            magnitude=s.magnitude_term, curvature=s.curvature_term,
                            mag_norm=s.magnitude_term ** (1.0 / p),
                            curv_norm=s.curvature_term ** (1.0 / p))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(score_one, range(samples.shape[0])))
    return [score_one(i) for i in range(samples.shape[0])]


def _assert_power_rank_invariance(id_rows, ood_rows):
    """Raising non-negative norms to the p-th power must not move AUROC."""
    for attr_pow, attr_norm in (("magnitude", "mag_norm"), ("curvature", "curv_norm")):
        a_pow = auroc([getattr(r, attr_pow) for r in id_rows],
                      [getattr(r, attr_pow) for r in ood_rows])
        a_norm = auroc([getattr(r, attr_norm) for r in id_rows],
                       [getattr(r, attr_norm) for r in ood_rows])
        if a_pow != a_norm:
            raise RuntimeError(
                f"power transform moved {attr_pow} AUROC: {a_pow} != {a_norm}")


@dataclass
class BenchmarkRun:
    report: EvalReport
    split: BenchmarkSplit
    model: ScoreModel
    loss_curve: list[float]
    rows: list[ScoredSample]
    kde_threshold: float
    nfe_total: int


def run_benchmark(cfg: BenchmarkConfig, seed: int, n_steps: int = 5, p: int = 3,
                  stride: int = 20, alpha: float = 0.05,
                  pretrained: ScoreModel | None = None, untrained: bool = False,
                  epochs: int | None = None, threads: int = 1,
                  measure_time: bool = False, log=None) -> BenchmarkRun:
    """Full pipeline for one (benchmark, seed) pair.

    ``pretrained`` substitutes an already-trained model (zero training
    epochs); ``untrained`` keeps the fresh zero-output initialization.
    """
    def say(msg):
        if log is not None:
            log(msg)

    split = build_split(cfg, seed)
    T = int(cfg.get("T"))
    schedule = cosine_schedule(T)
    method = "trajectory"
    loss_curve: list[float] = []
    if pretrained is not None:
        model = pretrained
        if model.data_dim != split.train.dim:
            raise ValueError(
                f"pretrained model dim {model.data_dim} != data dim {split.train.dim}")
        schedule = cosine_schedule(model.T)
        method = "trajectory-pretrained"
        say(f"training skipped: 0 epochs, reusing pretrained model "
            f"(init_seed={model.init_seed})")
    else:
        model = ScoreModel(data_dim=split.train.dim, T=T,
                           schedule_tag=schedule.tag,
                           init_seed=stream_seed(seed, f"{cfg.benchmark}/init"))
        if untrained:
            method = "trajectory-untrained"
            say("training skipped: 0 epochs, frozen random initialization")
        else:
            train_cfg = TrainConfig(
                learning_rate=float(cfg.get("learning_rate")),
                batch_size=int(cfg.get("batch_size")),
                epochs=int(epochs if epochs is not None else cfg.get("epochs")),
                seed=stream_seed(seed, f"{cfg.benchmark}/train"), T=T)
            say(f"training: {train_cfg.epochs} epochs on {split.train.n} samples")
            loss_curve = train(model, split.train.samples, train_cfg, schedule)

    model.reset_nfe()
    kwargs = dict(schedule=schedule, n_steps=n_steps, p=p, stride=stride,
                  threads=threads)
    val_rows = score_dataset(model, split.val_id.samples, "val_id", **kwargs)
    id_rows = score_dataset(model, split.test_id.samples, "test_id", **kwargs)
    ood_rows = score_dataset(model, split.test_ood.samples, "test_ood", **kwargs)
    nfe_total = model.nfe
    n_scored = len(val_rows) + len(id_rows) + len(ood_rows)
    if nfe_total != n_steps * n_scored:
        raise RuntimeError(f"NFE ledger mismatch: {nfe_total} != {n_steps}*{n_scored}")

    kde = kde_fit([r.value for r in val_rows])
    threshold = decision_threshold(kde, alpha)
    id_scores = np.array([ood_score(kde, r.value) for r in id_rows])
    ood_scores = np.array([ood_score(kde, r.value) for r in ood_rows])
    _assert_power_rank_invariance(id_rows, ood_rows)

    per_source: dict[str, float] = {}
    if split.kind == "far":
        sources = [s["name"] for s in split.provenance["ood_sources"]]
        labels = split.test_ood.labels
        for i, name in enumerate(sources):
            mask = labels == i
            if mask.any():
                per_source[name] = auroc(id_scores, ood_scores[mask])

    wall_ms = None
    if measure_time:
        probe = split.test_id.samples[0]
        wall_ms = measure_latency_ms(
            lambda: anomaly_score(
                encode_trajectory(model, probe, n_steps, stride, schedule), p))

    config_echo = {
        "benchmark": cfg.benchmark, "seed": seed, "n_steps": n_steps, "p": p,
        "stride": stride, "T": T, "alpha": alpha, "method": method,
        "epochs": 0 if (pretrained is not None or untrained)
                  else int(epochs if epochs is not None else cfg.get("epochs")),
        "learning_rate": float(cfg.get("learning_rate")),
        "batch_size": int(cfg.get("batch_size")),
        "config_values": {k: v for k, v in sorted(cfg.values.items())},
    }
    report = EvalReport(
        benchmark_id=cfg.benchmark, method=method,
        auroc=auroc(id_scores, ood_scores),
        fpr_at_95_tpr=fpr_at_tpr(id_scores, ood_scores),
        per_source_auroc=per_source,
        auroc_raw_score=auroc([r.value for r in id_rows], [r.value for r in ood_rows]),
        nfe_per_sample=n_steps, wall_time_per_sample_ms=wall_ms,
        config_echo=config_echo)
    return BenchmarkRun(report=report, split=split, model=model,
                        loss_curve=loss_curve, rows=val_rows + id_rows + ood_rows,
                        kde_threshold=threshold, nfe_total=nfe_total)


def run_reconstruction_baseline(run: BenchmarkRun, cfg: BenchmarkConfig,
                                n_steps: int = 50, stride: int = 10,
                                measure_time: bool = False) -> EvalReport:
    """Score the same test sets with the round-trip reconstruction error."""
    model, split = run.model, run.split
    schedule = cosine_schedule(model.T)
    model.reset_nfe()
    id_scores = np.array([reconstruction_baseline(model, x, n_steps, schedule, stride)
                          for x in split.test_id.samples])
    ood_scores = np.array([reconstruction_baseline(model, x, n_steps, schedule, stride)
                           for x in split.test_ood.samples])
    n_scored = id_scores.size + ood_scores.size
    if model.nfe != 2 * n_steps * n_scored:
        raise RuntimeError(f"baseline NFE mismatch: {model.nfe} != "
                           f"2*{n_steps}*{n_scored}")
    wall_ms = None
    if measure_time:
        probe = split.test_id.samples[0]
        wall_ms = measure_latency_ms(
            lambda: reconstruction_baseline(model, probe, n_steps, schedule, stride))
    per_source: dict[str, float] = {}
    if split.kind == "far":
        sources = [s["name"] for s in split.provenance["ood_sources"]]
        for i, name in enumerate(sources):
            mask = split.test_ood.labels == i
            if mask.any():
                per_source[name] = auroc(id_scores, ood_scores[mask])
    echo = dict(run.report.config_echo)
    echo.update({"method": "reconstruction", "baseline_steps": n_steps,
                 "baseline_stride": stride})
    return EvalReport(
        benchmark_id=cfg.benchmark, method="reconstruction",
        auroc=auroc(id_scores, ood_scores),
        fpr_at_95_tpr=fpr_at_tpr(id_scores, ood_scores),
        per_source_auroc=per_source, auroc_raw_score=None,
        nfe_per_sample=2 * n_steps, wall_time_per_sample_ms=wall_ms,
        config_echo=echo)


def write_scores_csv(path, run: BenchmarkRun, alpha: float = 0.05) -> None:
    """Per-sample score table with the calibrated density and decision flag."""
    kde = kde_fit([r.value for r in run.rows if r.member == "val_id"])
    threshold = decision_threshold(kde, alpha)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "split", "anomaly_value", "magnitude_term",
                         "curvature_term", "kde_logpdf", "ood_flag"])
        for r in run.rows:
            logpdf = kde_logpdf(kde, r.value)
            writer.writerow([r.sample_id, r.member, repr(r.value), repr(r.magnitude),
                             repr(r.curvature), repr(logpdf),
                             int(logpdf < threshold)])


def save_run(out_dir, run: BenchmarkRun, cfg: BenchmarkConfig,
             alpha: float = 0.05) -> None:
    """Persist checkpoint, split, scores and loss curve under out_dir."""
    from . import datasets
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.sbdt", run.model,
                    train_seed=run.report.config_echo.get("seed"))
    datasets.save_split(out / "split.sbdt", run.split)
    write_scores_csv(out / "scores.csv", run, alpha)
    if run.loss_curve:
        with open(out / "loss_curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss"])
            for i, v in enumerate(run.loss_curve):
                writer.writerow([i, repr(v)])


def config_echo_json(cfg: BenchmarkConfig, **overrides) -> str:
    payload = {"benchmark": cfg.benchmark, "values": dict(sorted(cfg.values.items()))}
    payload.update(overrides)
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
