"""Command-line surface: simulate, gen-dataset, featurize, train,
evaluate, predict, gradcheck."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from dampid import dataset as ds
from dampid import experiments, features, gradcheck, nn, sim, tensorio, training


class CliError(Exception):
    pass


def _parse_zeta(value: str) -> float:
    zeta = float(value)
    if not 0.0 < zeta < 1.0:
        raise CliError(
            f"zeta={zeta:g} is outside (0, 1): systems with zeta >= 1 are "
            "overdamped or critically damped, show no overshoot, and are "
            "excluded from identification"
        )
    return zeta


def cmd_simulate(args) -> int:
    zeta = _parse_zeta(args.zeta)
    signal = sim.parse_input_signal(args.input)
    traj = sim.simulate_trajectory(
        signal, zeta, fs=args.fs, duration_s=args.seconds,
        noise_sigma=args.noise_sigma, seed=args.seed,
    )
    out = Path(args.out)
    tensorio.save_tensor(out, np.stack([traj.u, traj.y]))
    print(f"wrote {traj.n}-sample trajectory to {out}")
    if args.csv:
        t = np.arange(traj.n) / traj.fs
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "u", "y"])
            for row in zip(t, traj.u, traj.y):
                writer.writerow([f"{v:.12g}" for v in row])
        print(f"wrote CSV to {args.csv}")
    return 0


def cmd_gen_dataset(args) -> int:
    manifest = ds.generate_dataset(
        args.out,
        extended=args.extended,
        noise_sigma=args.noise_sigma,
        master_seed=args.master_seed,
    )
    print(
        f"wrote {len(manifest.trajectories)} trajectories "
        f"({manifest.total_windows()} windows) to {args.out}"
    )
    return 0


def cmd_featurize(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    refs = ds.all_window_refs(manifest, args.stride)
    cache = experiments.FeatureCache(manifest, refs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.save_tensor(out / "features.dsid", cache.x)
    tensorio.save_tensor(out / "targets.dsid", cache.y.astype(np.float64))
    index = {
        "manifest": str(Path(args.manifest).resolve()),
        "stride": args.stride,
        "stft": manifest.stft.to_dict(),
        "windows": [[r.traj_index, r.start, r.length] for r in refs],
    }
    (out / "features_index.json").write_text(json.dumps(index))
    print(f"wrote {cache.x.shape[0]} feature tensors of shape "
          f"{cache.x.shape[1:]} to {out}")
    return 0


def _resolve_experiment(exp_id: str) -> experiments.ExperimentSpec:
    if exp_id not in experiments.EXPERIMENTS:
        raise CliError(
            f"unknown experiment {exp_id!r}; choose from "
            f"{sorted(experiments.EXPERIMENTS)}"
        )
    return experiments.EXPERIMENTS[exp_id]


def cmd_train(args) -> int:
    spec = _resolve_experiment(args.exp)
    manifest = ds.DatasetManifest.load(args.manifest)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["initial_lr"] = args.lr
    if overrides:
        spec = dataclasses.replace(
            spec, train_cfg=dataclasses.replace(spec.train_cfg, **overrides)
        )
    report = experiments.run_experiment(
        spec, manifest, stride=args.stride, out_dir=args.out,
        log_fn=print if args.verbose else None,
    )
    print(
        f"{spec.id}: train MAD {report.train_mad:.4f}, "
        f"test MAD {report.test_mad:.4f} "
        f"(folds {[round(f.test_mad, 4) for f in report.folds]})"
    )
    return 0


def cmd_evaluate(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    weights = nn.load_weights(args.model)
    header = nn.load_weights_header(args.model)
    normalizer = None
    if "normalizer" in header:
        normalizer = experiments.Normalizer.from_dict(header["normalizer"])
    evaluator = experiments.Evaluator(weights, manifest, normalizer)
    refs = ds.all_window_refs(manifest, args.stride)
    inputs = args.inputs.split(",") if args.inputs else None
    if args.interval:
        lo, hi = (float(v) for v in args.interval.split("-"))
        value = experiments.interval_eval(
            evaluator, refs, inputs=inputs, interval=(lo, hi),
            interval_mode=args.interval_mode,
        )
        print(f"MAD over interval [{lo:g}, {hi:g}] s"
              f"{' inputs ' + args.inputs if inputs else ''}: {value:.4f}")
    else:
        selected = experiments.filter_refs(manifest, refs, inputs=inputs)
        value = evaluator.mad_over(selected)
        print(f"MAD over {len(selected)} windows: {value:.4f}")
    if args.histograms:
        out = Path(args.histograms)
        out.mkdir(parents=True, exist_ok=True)
        for name, interval in experiments.INTERVAL_PRESETS.items():
            hist = experiments.error_histogram(
                evaluator, refs, interval, inputs=inputs, interval_label=name
            )
            hist.to_csv(out / f"hist_{name}_{'all' if not inputs else 'filtered'}.csv")
        print(f"wrote histograms to {out}")
    return 0


def cmd_predict(args) -> int:
    weights = nn.load_weights(args.model)
    header = nn.load_weights_header(args.model)
    path = Path(args.pair)
    if path.suffix == ".csv":
        rows = np.genfromtxt(path, delimiter=",", names=True)
        u = np.asarray(rows["u"], dtype=float)
        y = np.asarray(rows["y"], dtype=float)
    else:
        data = tensorio.load_tensor(path)
        if data.ndim != 2 or data.shape[0] != 2:
            raise CliError(f"{path}: expected a (2, n) input/output tensor")
        u, y = data[0], data[1]
    offset = int(round(args.offset * features.SAMPLE_RATE))
    if u.size < offset + features.WINDOW_SAMPLES:
        raise CliError(
            f"pair has {u.size} samples; need at least "
            f"{offset + features.WINDOW_SAMPLES} at 1 kHz for offset {args.offset:g} s"
        )
    feats = features.featurize_pair(
        u[offset : offset + features.WINDOW_SAMPLES],
        y[offset : offset + features.WINDOW_SAMPLES],
    )[None].astype(np.float32)
    if "normalizer" in header:
        feats = experiments.Normalizer.from_dict(header["normalizer"]).apply(feats)
    preds, _ = nn.forward(weights, feats, mode="eval")
    model_id = header.get("experiment_id", weights.spec.cell_kind)
    print(f"{model_id}: zeta_hat = {preds[0]:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for cell in args.cells:
        for trial in range(args.trials):
            err = gradcheck.check_cell(cell, seed=args.seed + trial)
            worst = max(worst, err)
        print(f"{cell}: max relative error over {args.trials} trials "
              f"<= {worst:.3e}")
    if worst >= args.tolerance:
        print(f"FAIL: {worst:.3e} >= tolerance {args.tolerance:g}", file=sys.stderr)
        return 1
    print(f"OK: max relative error {worst:.3e} < {args.tolerance:g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dampid",
        description="Damping-factor identification of second-order systems "
        "with gated recurrent networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one input/output trajectory")
    p.add_argument("--zeta", required=True)
    p.add_argument("--input", default="step:1", help="step:M, ramp:S or sine:A:F")
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--fs", type=float, default=1000.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="trajectory.dsid")
    p.add_argument("--csv", help="also write t,u,y columns")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-dataset", help="generate the benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--extended", action="store_true",
                   help="add step inputs of magnitude -1, +10, -10")
    p.add_argument("--noise-sigma", type=float, default=ds.DEFAULT_NOISE_SIGMA)
    p.add_argument("--master-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("featurize", help="precompute feature tensors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="run one benchmark experiment")
    p.add_argument("--exp", required=True, help="Exp1..Exp5, Exp6a or Exp7")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=50,
                   help="window subsampling stride (1 = full scale)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--stride", type=int, default=50)
    p.add_argument("--inputs", help="comma-separated input labels, e.g. step:1")
    p.add_argument("--interval", help="start-time interval in seconds, e.g. 3-6")
    p.add_argument("--interval-mode", choices=("contain", "start"), default="contain")
    p.add_argument("--histograms", help="directory for per-interval CSV histograms")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict zeta for one I/O pair")
    p.add_argument("--model", required=True)
    p.add_argument("--pair", required=True, help=".dsid tensor or t,u,y CSV")
    p.add_argument("--offset", type=float, default=0.0, help="window start (s)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="verify gradients by finite differences")
    p.add_argument("--cells", nargs="+", default=list(nn.CELL_KINDS),
                   choices=nn.CELL_KINDS)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, tensorio.ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
