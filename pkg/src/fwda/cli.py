"""Command-line front end.

Subcommands: ``fit``, ``predict``, ``synth``, ``eval``, ``converge`` and
``bench``. Exit status is 0 on success, 1 on a runtime or domain error
(message on stderr) and 2 on a usage error.

``FWDA_THREADS`` caps the number of threads used for ensemble sampling
(0 or unset: single-threaded).
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from fwda.classifier import (
    FitConfig,
    Variant,
    fit,
    load_model,
    predict,
    save_model,
)
from fwda.data_io import (
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    load_features,
    save_csv,
    train_test_split,
)
from fwda.errors import FwdaError, ShapeError
from fwda.evaluation import (
    ExperimentConfig,
    convergence_study,
    derive_seed,
    run_experiment,
    timing_comparison,
)


def _threads():
    try:
        return max(int(os.environ.get("FWDA_THREADS", "0")), 1)
    except ValueError:
        return 1


def _emit(obj, args):
    print(json.dumps(obj))


def _note(text, args):
    if not args.quiet:
        print(text, file=sys.stderr)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_fit(args):
    start = time.perf_counter()
    data = load_csv(args.input, args.label_column)
    config = FitConfig(args.lam, args.samples, args.seed, Variant(args.variant), args.tol, args.max_iter)
    model = fit(data, config)
    save_model(model, args.out)
    info = model.fit_info
    _emit({
        "n": info["n"], "p": info["p"],
        "dof_requested": info["dof_requested"], "dof": info["dof"],
        "kkt_residual": info.get("kkt_residual"), "converged": info.get("converged"),
        "seconds": time.perf_counter() - start,
        "model": args.out,
    }, args)
    return 0


def cmd_predict(args):
    model = load_model(args.model)
    xs = load_features(args.input, args.label_column)
    if xs.size and xs.shape[1] != model.dim:
        raise ShapeError(f"model has dimension {model.dim} but input has dimension {xs.shape[1]}")
    preds = predict(model, xs, threads=_threads()) if xs.size else []
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["row_index", "score", "label"])
        for i, p in enumerate(preds):
            writer.writerow([i, repr(p.score), p.label])
    finally:
        if args.out:
            out.close()
    return 0


def cmd_synth(args):
    spec = SyntheticSpec(args.dim, args.n_per_class, args.separation, args.seed, args.rho)
    task = generate_synthetic(spec)
    save_csv(task.data, args.out)
    truth_path = args.truth or f"{args.out}.truth.json"
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump({
            "dim": spec.dim, "n_per_class": spec.n_per_class, "separation": spec.mean_separation,
            "rho": spec.rho, "seed": spec.seed,
            "true_precision": task.true_precision.tolist(),
            "pos_mean": task.pos_mean.tolist(), "neg_mean": task.neg_mean.tolist(),
            "bayes_accuracy": task.bayes_accuracy(),
        }, fh)
        fh.write("\n")
    _emit({"rows": task.data.n, "dim": task.data.dim, "data": args.out, "truth": truth_path}, args)
    return 0


def cmd_eval(args):
    with open(args.config, encoding="utf-8") as fh:
        config = ExperimentConfig.from_dict(json.load(fh))
    start = time.perf_counter()
    report = run_experiment(config)
    if args.out_json:
        report.write_json(args.out_json)
    if args.out_csv:
        report.write_csv(args.out_csv)
    for row in report.summary:
        _note(f"{row['method']:>24s} n={row['train_size']:<5d} acc={row['accuracy_mean']:.4f}"
              f" +- {row['accuracy_std']:.4f}  f1={row['f1_mean']:.4f}", args)
    _emit({"rows": len(report.rows), "summary": report.summary, "seconds": time.perf_counter() - start}, args)
    return 0


def _synthetic_model(dim, n_per_class, n_test, separation, lam, samples, seed):
    task = generate_synthetic(SyntheticSpec(dim, n_per_class + n_test, separation, derive_seed(seed, 1)))
    train, test = train_test_split(task.data, n_per_class, n_test, derive_seed(seed, 2))
    return fit(train, FitConfig(lam, samples, seed)), test.features


def cmd_converge(args):
    if args.model:
        model = load_model(args.model)
        if not args.input:
            raise FwdaError("--input is required together with --model")
        points = load_features(args.input, args.label_column)[: args.points]
    else:
        model, points = _synthetic_model(args.dim, 50, args.points, 2.0, args.lam, args.samples, args.seed)
        points = points[: args.points]
    report = convergence_study(model, points, args.m_grid, args.reference_m, range(args.seeds),
                               clamp=args.clamp)
    out = report.to_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(out, fh)
            fh.write("\n")
    for m, e in zip(report.m_grid, report.errors):
        _note(f"m={m:<8d} mean error={e:.4e}", args)
    _note(f"fitted slope {report.fitted_slope:.3f}", args)
    _emit({k: out[k] for k in ("m_grid", "errors", "fitted_slope", "empirical_variance", "reference_m")}, args)
    return 0


def cmd_bench(args):
    if args.model:
        model = load_model(args.model)
        if not args.input:
            raise FwdaError("--input is required together with --model")
        xs = load_features(args.input, args.label_column)
    else:
        model, xs = _synthetic_model(args.dim, 40, args.points // 2, 3.0, args.lam, args.samples, args.seed)
    result = timing_comparison(model, xs, args.oracle_m)
    _note(f"{'method':<10s} {'points':>7s} {'seconds':>10s}", args)
    _note(f"{'lazy':<10s} {result['n_points']:>7d} {result['lazy_total_seconds']:>10.4f}", args)
    _note(f"{'adaptive':<10s} {result['n_points']:>7d} {result['adaptive_total_seconds']:>10.4f}", args)
    _note(f"ratio {result['ratio']:.1f}", args)
    _emit(result, args)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fwda", description="Ensemble LDA over Wishart-sampled precision matrices.")
    parser.add_argument("--quiet", action="store_true", help="no human-readable text on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_opts(p):
        p.add_argument("--lambda", dest="lam", type=float, default=1.0)
        p.add_argument("--samples", type=int, default=200, help="ensemble size")
        p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("fit", help="fit a model from a labelled CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", default="label")
    model_opts(p)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="fwda")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="score a feature CSV with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", default="label", help="column to ignore if present")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic two-class dataset")
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="ground-truth sidecar (default: <out>.truth.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="run a repeated experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("converge", help="Monte-Carlo convergence study of the ensemble score")
    p.add_argument("--model")
    p.add_argument("--input", help="test points CSV (used with --model)")
    p.add_argument("--label-column", default="label")
    p.add_argument("--dim", type=int, default=5)
    model_opts(p)
    p.add_argument("--m-grid", type=_int_list, default=[10, 40, 160, 640, 2560])
    p.add_argument("--reference-m", type=int)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--clamp", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("bench", help="time one-shot versus per-input ensemble sampling")
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--label-column", default="label")
    p.add_argument("--dim", type=int, default=50)
    model_opts(p)
    p.add_argument("--points", type=int, default=400)
    p.add_argument("--oracle-m", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FwdaError, OSError) as exc:
        print(f"fwda {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
