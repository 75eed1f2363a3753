"""Command-line front-end.

Subcommands: gen (write a benchmark split), train (fit a score network),
score (trajectory-score a saved split with a checkpoint), bench (the full
generate/train/score/evaluate chain), oracle (Gaussian KL verification
table). Every run writes its fully resolved configuration to the output
directory before doing anything else.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure,
4 acceptance gate failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_GATE = 4

OUT_ROOT_ENV = "DIFFOOD_OUT_ROOT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / default_name


def _write_config_echo(out: Path, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2, default=str) + "\n")


def _resolve_seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed"))


def build_parser() -> _Parser:
    parser = _Parser(prog="diffood",
                     description="OOD detection from forward diffusion trajectories")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (default: the benchmark config's seed)")
        p.add_argument("--out", type=str, default=None,
                       help=f"output directory (default under ${OUT_ROOT_ENV} or ./runs)")

    def add_benchmark(p):
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--benchmark", choices=["B1", "B2", "B3", "B4", "B5"])
        group.add_argument("--config", type=str, help="path to a key=value config")

    p_gen = sub.add_parser("gen", help="generate a benchmark split")
    add_benchmark(p_gen)
    add_common(p_gen)
    p_gen.add_argument("--csv", action="store_true", help="also export samples as CSV")

    p_train = sub.add_parser("train", help="train a score network on a benchmark")
    add_benchmark(p_train)
    add_common(p_train)
    p_train.add_argument("--epochs", type=int, default=None)

    p_score = sub.add_parser("score", help="trajectory-score a saved split")
    p_score.add_argument("--checkpoint", required=True)
    p_score.add_argument("--split", required=True)
    add_common(p_score)
    p_score.add_argument("--S", type=int, default=5, dest="n_steps")
    p_score.add_argument("--p", type=int, default=3, dest="norm_power")
    p_score.add_argument("--tau", type=int, default=20, dest="stride")
    p_score.add_argument("--alpha", type=float, default=0.05)
    p_score.add_argument("--threads", type=int, default=1)
    p_score.add_argument("--dump-trajectories", action="store_true")

    p_bench = sub.add_parser("bench", help="full generate/train/score/evaluate run")
    add_benchmark(p_bench)
    add_common(p_bench)
    p_bench.add_argument("--S", type=int, default=5, dest="n_steps")
    p_bench.add_argument("--p", type=int, default=3, dest="norm_power")
    p_bench.add_argument("--tau", type=int, default=20, dest="stride")
    p_bench.add_argument("--alpha", type=float, default=0.05)
    p_bench.add_argument("--epochs", type=int, default=None)
    p_bench.add_argument("--threads", type=int, default=1)
    p_bench.add_argument("--pretrained", type=str, default=None,
                         help="checkpoint path; skips training")
    p_bench.add_argument("--untrained", action="store_true",
                         help="keep the fresh zero-output network")
    p_bench.add_argument("--with-baseline", action="store_true",
                         help="also run the reconstruction baseline")
    p_bench.add_argument("--timing", action="store_true",
                         help="measure per-sample latency (timing.json)")
    p_bench.add_argument("--gate", action="store_true",
                         help="exit 4 unless the config's gate_auroc is met")

    p_oracle = sub.add_parser("oracle", help="Gaussian KL identity verification table")
    add_common(p_oracle)
    p_oracle.add_argument("--n", type=int, default=1000, help="quadrature steps")
    p_oracle.add_argument("--T", type=int, default=1000, help="schedule length")
    p_oracle.add_argument("--form", choices=["squared", "printed"], default="squared")
    return parser


def _cmd_gen(args) -> int:
    from . import bench, datasets
    cfg = bench.load_config(args.benchmark or args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, f"gen-{cfg.benchmark}-seed{seed}")
    _write_config_echo(out, {"command": "gen", "benchmark": cfg.benchmark,
                             "seed": seed, "values": cfg.values})
    split = bench.build_split(cfg, seed)
    datasets.save_split(out / "split.sbdt", split)
    if args.csv:
        datasets.export_csv(out / "samples.csv", split)
    print(f"wrote split ({split.train.n} train / {split.val_id.n} val / "
          f"{split.test_id.n} test-ID / {split.test_ood.n} test-OOD) to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from . import bench
    from .diffusion import cosine_schedule
    from .rng import stream_seed
    from .scorenet import ScoreModel, TrainConfig, save_checkpoint, train

    cfg = bench.load_config(args.benchmark or args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, f"train-{cfg.benchmark}-seed{seed}")
    epochs = args.epochs if args.epochs is not None else int(cfg.get("epochs"))
    _write_config_echo(out, {"command": "train", "benchmark": cfg.benchmark,
                             "seed": seed, "epochs": epochs, "values": cfg.values})
    split = bench.build_split(cfg, seed)
    T = int(cfg.get("T"))
    schedule = cosine_schedule(T)
    model = ScoreModel(data_dim=split.train.dim, T=T, schedule_tag=schedule.tag,
                       init_seed=stream_seed(seed, f"{cfg.benchmark}/init"))
    train_cfg = TrainConfig(learning_rate=float(cfg.get("learning_rate")),
                            batch_size=int(cfg.get("batch_size")),
                            epochs=epochs,
                            seed=stream_seed(seed, f"{cfg.benchmark}/train"), T=T)
    curve = train(model, split.train.samples, train_cfg, schedule)
    save_checkpoint(out / "checkpoint.sbdt", model, train_seed=train_cfg.seed)
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(curve):
            writer.writerow([i, repr(v)])
    print(f"trained {epochs} epochs, final loss {curve[-1]:.6f}, "
          f"checkpoint at {out / 'checkpoint.sbdt'}")
    return EXIT_OK


def _cmd_score(args) -> int:
    from . import bench, datasets
    from .scorenet import load_checkpoint, schedule_for

    out = _out_dir(args, "score")
    _write_config_echo(out, {"command": "score", "checkpoint": args.checkpoint,
                             "split": args.split, "n_steps": args.n_steps,
                             "norm_power": args.norm_power, "stride": args.stride,
                             "alpha": args.alpha})
    model = load_checkpoint(args.checkpoint)
    schedule = schedule_for(model)
    split = datasets.load_split(args.split)
    model.reset_nfe()
    rows = []
    for member in ("val_id", "test_id", "test_ood"):
        samples = getattr(split, member).samples
        rows.extend(bench.score_dataset(model, samples, member, schedule,
                                        n_steps=args.n_steps, p=args.norm_power,
                                        stride=args.stride, threads=args.threads))
    nfe = model.nfe
    run = bench.BenchmarkRun(report=None, split=split, model=model, loss_curve=[],
                             rows=rows, kde_threshold=0.0, nfe_total=nfe)
    bench.write_scores_csv(out / "scores.csv", run, alpha=args.alpha)
    meta = {"n_scored": len(rows), "nfe_total": nfe,
            "nfe_per_sample": args.n_steps}
    (out / "score_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2)
                                         + "\n")
    if args.dump_trajectories:
        _dump_trajectories(out / "trajectories.sbdt", model, split, schedule, args)
    print(f"scored {len(rows)} samples, NFE={nfe} "
          f"({args.n_steps} per sample), scores at {out / 'scores.csv'}")
    return EXIT_OK


def _dump_trajectories(path, model, split, schedule, args) -> None:
    from . import sbdt
    from .diffusion import encode_trajectory
    tensors = {}
    ids = []
    for member in ("val_id", "test_id", "test_ood"):
        samples = getattr(split, member).samples
        for i in range(samples.shape[0]):
            sid = f"{member}-{i}"
            traj = encode_trajectory(model, samples[i], args.n_steps, args.stride,
                                     schedule, sample_id=sid)
            tensors[f"{sid}/eps"] = np.stack(traj.eps)
            ids.append(sid)
    manifest = json.dumps({"samples": ids, "stride": args.stride,
                           "n_steps": args.n_steps, "schedule": schedule.tag},
                          sort_keys=True)
    sbdt.save_tensors(path, tensors, manifest)


def _cmd_bench(args) -> int:
    from . import bench
    from .report import emit_report
    from .scorenet import load_checkpoint

    cfg = bench.load_config(args.benchmark or args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, f"bench-{cfg.benchmark}-seed{seed}")
    _write_config_echo(out, {"command": "bench", "benchmark": cfg.benchmark,
                             "seed": seed, "n_steps": args.n_steps,
                             "norm_power": args.norm_power, "stride": args.stride,
                             "alpha": args.alpha, "epochs": args.epochs,
                             "pretrained": args.pretrained,
                             "untrained": args.untrained, "values": cfg.values})
    pretrained = load_checkpoint(args.pretrained) if args.pretrained else None
    run = bench.run_benchmark(cfg, seed, n_steps=args.n_steps, p=args.norm_power,
                              stride=args.stride, alpha=args.alpha,
                              pretrained=pretrained, untrained=args.untrained,
                              epochs=args.epochs, threads=args.threads,
                              measure_time=args.timing, log=print)
    bench.save_run(out, run, cfg, alpha=args.alpha)
    emit_report(run.report, out)
    if args.with_baseline:
        baseline_report = bench.run_reconstruction_baseline(
            run, cfg, measure_time=args.timing)
        baseline_dir = out / "baseline"
        emit_report(baseline_report, baseline_dir)
        print(f"reconstruction baseline AUROC={baseline_report.auroc:.4f} "
              f"NFE={baseline_report.nfe_per_sample}")
    print(f"{cfg.benchmark} method={run.report.method} "
          f"AUROC={run.report.auroc:.4f} FPR@95={run.report.fpr_at_95_tpr:.4f} "
          f"NFE/sample={run.report.nfe_per_sample}")
    if args.gate:
        gate = cfg.values.get("gate_auroc")
        if gate is not None and run.report.auroc < float(gate):
            print(f"gate FAILED: AUROC {run.report.auroc:.4f} < {gate}",
                  file=sys.stderr)
            return EXIT_GATE
        print(f"gate passed (AUROC {run.report.auroc:.4f} >= {gate})")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    from .diffusion import cosine_schedule
    from .gaussians import closed_form_gaussian_kl, kl_score_integral

    out = _out_dir(args, "oracle")
    _write_config_echo(out, {"command": "oracle", "n": args.n, "T": args.T,
                             "form": args.form})
    schedule = cosine_schedule(args.T)
    battery = _gaussian_battery()
    path = out / "kl_verification.csv"
    worst = 0.0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "closed_form_kl", "integral_kl", "relative_error"])
        for name, a, b in battery:
            closed = closed_form_gaussian_kl(a, b)
            integral = kl_score_integral(a, b, schedule, n=args.n, form=args.form)
            rel = abs(integral - closed) / max(closed, 0.01)
            worst = max(worst, rel)
            writer.writerow([name, repr(closed), repr(integral), repr(rel)])
            print(f"{name:32s} closed={closed:.6f} integral={integral:.6f} "
                  f"rel_err={rel:.4%}")
    print(f"worst relative error: {worst:.4%} (form={args.form}); table at {path}")
    return EXIT_OK


def _gaussian_battery():
    from .gaussians import GaussianSpec
    eye2 = np.eye(2)
    return [
        ("N(0,1) || N(1,1)", GaussianSpec([0.0], [[1.0]]), GaussianSpec([1.0], [[1.0]])),
        ("N(0,1) || N(0,4)", GaussianSpec([0.0], [[1.0]]), GaussianSpec([0.0], [[4.0]])),
        ("N(0,1) || N(2,1)", GaussianSpec([0.0], [[1.0]]), GaussianSpec([2.0], [[1.0]])),
        ("N(0,4) || N(0,1)", GaussianSpec([0.0], [[4.0]]), GaussianSpec([0.0], [[1.0]])),
        ("N(0,1) || N(0.5,1)", GaussianSpec([0.0], [[1.0]]),
         GaussianSpec([0.5], [[1.0]])),
        ("N(0,1) || N(3,1)", GaussianSpec([0.0], [[1.0]]), GaussianSpec([3.0], [[1.0]])),
        ("2d shifted mean", GaussianSpec([0.0, 0.0], eye2),
         GaussianSpec([1.0, 0.0], eye2)),
        ("2d widened", GaussianSpec([0.0, 0.0], eye2),
         GaussianSpec([0.0, 0.0], np.diag([4.0, 4.0]))),
        ("2d mean+aniso", GaussianSpec([0.0, 0.0], eye2),
         GaussianSpec([1.0, 1.0], np.diag([2.0, 0.5]))),
        ("2d correlated", GaussianSpec([0.0, 0.0], eye2),
         GaussianSpec([0.5, -0.5], [[2.0, 0.6], [0.6, 1.0]])),
    ]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    from . import sbdt
    from .scorenet import TrainingDivergedError
    handlers = {"gen": _cmd_gen, "train": _cmd_train, "score": _cmd_score,
                "bench": _cmd_bench, "oracle": _cmd_oracle}
    try:
        return handlers[args.command](args)
    except TrainingDivergedError as err:
        _dump_numeric_failure(args, err)
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, sbdt.SBDTError, ValueError, KeyError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


def _dump_numeric_failure(args, err) -> None:
    try:
        out = _out_dir(args, "failed-run")
        out.mkdir(parents=True, exist_ok=True)
        (out / "diagnostic.json").write_text(json.dumps(
            {"error": str(err), "epoch": err.epoch, "batch": err.batch,
             "train_seed": err.seed}, indent=2) + "\n")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
