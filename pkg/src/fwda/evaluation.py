"""Metrics, the repeated-experiment harness, the Monte-Carlo convergence study,
and the per-input resampling reference used for sign and timing comparisons."""

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from fwda.classifier import (
    FitConfig,
    Variant,
    _Scorer,
    _sign,
    fit,
    labels_of,
    plain_lda_predict,
    predict,
)
from fwda.data_io import SyntheticSpec, generate_synthetic, load_csv, train_test_split
from fwda.errors import EmptyInput, FwdaError, InvalidParameter, ShapeError
from fwda.wishart import sample


def derive_seed(*keys):
    """64-bit seed derived deterministically from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def score_metrics(predicted, actual):
    """Accuracy and F1 with +1 as the positive class; F1 is 0 when its denominator is 0."""
    predicted = np.asarray(predicted).reshape(-1)
    actual = np.asarray(actual).reshape(-1)
    if predicted.shape != actual.shape:
        raise ShapeError(f"{predicted.size} predictions for {actual.size} labels")
    if predicted.size == 0:
        raise EmptyInput("cannot score an empty prediction list")
    tp = int(np.sum((predicted == 1) & (actual == 1)))
    fp = int(np.sum((predicted == 1) & (actual != 1)))
    tn = int(np.sum((predicted != 1) & (actual != 1)))
    fn = int(np.sum((predicted != 1) & (actual == 1)))
    denom = 2 * tp + fp + fn
    return Metrics((tp + tn) / (tp + fp + tn + fn), 2 * tp / denom if denom else 0.0, tp, fp, tn, fn)


def adaptive_reference_score(x, model, oracle_m=1000, seed=0):
    """Self-normalised importance estimate of the posterior-mean vote at ``x``.

    Draws a fresh ensemble of ``oracle_m`` precision matrices and returns
    ``sum_i sign(d_i) w_i / sum_i w_i``, a convex combination of +-1.
    """
    ensemble = sample(model.wishart, seed, oracle_m)
    # one query per ensemble, so skip the packed precomputation
    d, w = _Scorer(model, ensemble, packed=False).terms(x)
    w = np.exp(w - w.max())
    return float(np.sum(_sign(d) * w) / np.sum(w))


@dataclass
class ConvergenceReport:
    m_grid: list
    errors: list
    fitted_slope: float
    empirical_variance: float
    reference_m: int
    reference_seed: int
    seeds: list
    errors_by_seed: list = field(repr=False)
    median_errors: list = None
    sign_disagreement: list = None
    clamped: bool = False

    def to_dict(self):
        return asdict(self)


def _integrand(scorer, points, clamp):
    # rows: points, columns: members; sign(d) * likelihood
    out = np.empty((len(points), len(scorer.ensemble)))
    for r, x in enumerate(points):
        d, w = scorer.terms(x)
        out[r] = _sign(d) * np.exp(w)
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def convergence_study(model, test_points, m_grid=(10, 40, 160, 640, 2560), reference_m=None,
                      seeds=range(20), reference_seed=None, clamp=False):
    """Error of the m-member likelihood-weighted vote against a large reference ensemble.

    For every seed one ensemble of ``max(m_grid)`` draws is generated; the
    estimate for each ``m`` uses its first ``m`` draws. Errors are mean
    absolute differences of the unnormalised vote over test points.

    ``clamp`` bounds each member's contribution to ``[0, 1]``, which makes
    the Hoeffding bound applicable.
    """
    m_grid = [int(m) for m in m_grid]
    seeds = [int(s) for s in seeds]
    if len(m_grid) < 2 or m_grid[0] < 1 or any(b <= a for a, b in zip(m_grid, m_grid[1:])):
        raise InvalidParameter(f"m_grid must hold at least two strictly increasing positive sizes, got {m_grid}")
    if not seeds:
        raise InvalidParameter("at least one seed is required")
    points = np.atleast_2d(np.asarray(test_points, dtype=np.float64))
    if points.shape[1] != model.dim:
        raise ShapeError(f"test points have dimension {points.shape[1]}, model has {model.dim}")
    reference_m = int(reference_m or 20 * m_grid[-1])
    if reference_seed is None:
        reference_seed = derive_seed(model.seed, 0xC0FFEE)

    ref = _integrand(_Scorer(model, sample(model.wishart, reference_seed, reference_m)), points, clamp)
    g_ref = ref.mean(axis=1)
    empirical_variance = float(ref.var(axis=1, ddof=1).mean()) if reference_m > 1 else 0.0

    errors = np.empty((len(m_grid), len(seeds)))
    disagree = np.empty((len(m_grid), len(seeds)))
    for k, s in enumerate(seeds):
        if s == reference_seed and m_grid[-1] <= reference_m:
            vals = ref[:, : m_grid[-1]]
        else:
            vals = _integrand(_Scorer(model, sample(model.wishart, s, m_grid[-1])), points, clamp)
        for j, m in enumerate(m_grid):
            g = vals[:, :m].mean(axis=1)
            errors[j, k] = np.abs(g - g_ref).mean()
            disagree[j, k] = np.mean((g >= 0) != (g_ref >= 0))
    mean_errors = errors.mean(axis=1)
    if np.all(mean_errors > 0):
        slope = float(np.polyfit(np.log(m_grid), np.log(mean_errors), 1)[0])
    else:
        slope = float("nan")
    return ConvergenceReport(
        m_grid=m_grid,
        errors=mean_errors.tolist(),
        fitted_slope=slope,
        empirical_variance=empirical_variance,
        reference_m=reference_m,
        reference_seed=int(reference_seed),
        seeds=seeds,
        errors_by_seed=errors.tolist(),
        median_errors=np.median(errors, axis=1).tolist(),
        sign_disagreement=disagree.mean(axis=1).tolist(),
        clamped=bool(clamp),
    )


def hoeffding_bound(m, eta=0.05):
    return math.sqrt(-math.log(eta / 2) / (2 * m))


@dataclass(frozen=True)
class MethodSpec:
    """One classifier in an experiment. ``name`` picks the algorithm."""

    name: str
    lam: float = None
    ensemble_size: int = None
    gamma: float = 0.1
    label: str = None

    @property
    def display(self):
        if self.label:
            return self.label
        if self.name in ("lda_pinv", "lda_shrinkage"):
            return self.name if self.name == "lda_pinv" else f"lda_shrinkage({self.gamma:g})"
        return f"{self.name}({self.ensemble_size},{self.lam:g})"


METHOD_NAMES = ("fwda", "discrete_fwda", "sample_fwda", "lda_pinv", "lda_shrinkage")


@dataclass
class ExperimentConfig:
    train_sizes: list = field(default_factory=lambda: [50, 100, 200, 300, 400, 500])
    test_per_class: int = 200
    methods: list = field(default_factory=lambda: ["fwda", "lda_pinv"])
    lam: float = 1.0
    ensemble_size: int = 200
    repeats: int = 30
    master_seed: int = 42
    # synthetic source
    dim: int = 50
    separation: float = 3.0
    rho: float = 0.4
    # csv source; when set the generator is not used
    csv: str = None
    label_column: str = "label"
    tol: float = 1e-4
    max_iter: int = 100

    @classmethod
    def from_dict(cls, obj):
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise InvalidParameter(f"unknown experiment config fields: {sorted(unknown)}")
        return cls(**obj)

    def method_specs(self):
        specs = []
        for m in self.methods:
            spec = MethodSpec(m) if isinstance(m, str) else MethodSpec(**m)
            if spec.name not in METHOD_NAMES:
                raise InvalidParameter(f"unknown method {spec.name!r}; expected one of {METHOD_NAMES}")
            if spec.lam is None:
                spec = MethodSpec(spec.name, self.lam, spec.ensemble_size, spec.gamma, spec.label)
            if spec.ensemble_size is None:
                spec = MethodSpec(spec.name, spec.lam, self.ensemble_size, spec.gamma, spec.label)
            specs.append(spec)
        labels = [s.display for s in specs]
        if len(set(labels)) != len(labels):
            raise InvalidParameter(f"methods must have distinct labels, got {labels}")
        return specs


@dataclass
class ExperimentReport:
    config: dict
    rows: list
    summary: list

    def to_dict(self):
        return {"config": self.config, "rows": self.rows, "summary": self.summary}

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def write_csv(self, path):
        columns = ["repeat", "train_size", "method", "accuracy", "f1", "tp", "fp", "tn", "fn"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, columns, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({c: row[c] for c in columns})

    def mean_accuracy(self, method, train_size=None):
        accs = [r["accuracy"] for r in self.rows
                if r["method"] == method and (train_size is None or r["train_size"] == train_size)]
        return float(np.mean(accs))


def _run_method(spec, train, test, seed, config):
    if spec.name in ("lda_pinv", "lda_shrinkage"):
        mode = "pinv" if spec.name == "lda_pinv" else "shrinkage"
        preds = plain_lda_predict(train, test.features, mode, gamma=spec.gamma)
    else:
        model = fit(train, FitConfig(spec.lam, spec.ensemble_size, seed, Variant(spec.name),
                                     config.tol, config.max_iter))
        preds = predict(model, test.features)
    return score_metrics(labels_of(preds), test.labels)


def run_experiment(config):
    """Repeat split / fit / score for every train size and method.

    Every random choice derives from ``config.master_seed``, so two runs
    with the same config produce identical reports.
    """
    specs = config.method_specs()
    if config.repeats < 1 or not config.train_sizes:
        raise InvalidParameter("repeats must be positive and train_sizes non-empty")
    source = load_csv(config.csv, config.label_column) if config.csv else None
    pool_size = max(config.train_sizes) + config.test_per_class
    rows = []
    for r in range(config.repeats):
        if source is None:
            spec = SyntheticSpec(config.dim, pool_size, config.separation,
                                 seed=derive_seed(config.master_seed, r, 0), rho=config.rho)
            pool = generate_synthetic(spec).data
        else:
            pool = source
        for size in config.train_sizes:
            split_seed = derive_seed(config.master_seed, r, 1, size)
            try:
                train, test = train_test_split(pool, size, config.test_per_class, split_seed)
                for spec in specs:
                    metrics = _run_method(spec, train, test, derive_seed(config.master_seed, r, 2, size), config)
                    rows.append({"repeat": r, "train_size": size, "method": spec.display, **asdict(metrics)})
            except FwdaError as exc:
                detail = exc.args[0] if exc.args else ""
                exc.args = (f"repeat {r}, train size {size}: {detail}",)
                raise
    summary = []
    for size in config.train_sizes:
        for spec in specs:
            sel = [row for row in rows if row["train_size"] == size and row["method"] == spec.display]
            acc = np.array([row["accuracy"] for row in sel])
            f1 = np.array([row["f1"] for row in sel])
            summary.append({
                "train_size": size, "method": spec.display,
                "accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std(ddof=1)) if acc.size > 1 else 0.0,
                "f1_mean": float(f1.mean()), "f1_std": float(f1.std(ddof=1)) if f1.size > 1 else 0.0,
            })
    return ExperimentReport(asdict(config), rows, summary)


def timing_comparison(model, xs, oracle_m=None, seed=None):
    """Wall-clock of one-shot ensemble prediction versus per-input resampling.

    Returns a dict with ``lazy_total_seconds``, ``adaptive_total_seconds``,
    ``ratio`` (adaptive / lazy) and the fraction of points on which the two
    labels agree.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    oracle_m = int(oracle_m or model.ensemble_size)
    seed = model.seed if seed is None else seed
    start = time.perf_counter()
    lazy = labels_of(predict(model, xs))
    lazy_seconds = time.perf_counter() - start
    start = time.perf_counter()
    adaptive = np.array([
        1 if adaptive_reference_score(x, model, oracle_m, derive_seed(seed, i)) >= 0 else -1
        for i, x in enumerate(xs)
    ])
    adaptive_seconds = time.perf_counter() - start
    return {
        "n_points": int(xs.shape[0]),
        "ensemble_size": model.ensemble_size,
        "oracle_m": oracle_m,
        "lazy_total_seconds": lazy_seconds,
        "adaptive_total_seconds": adaptive_seconds,
        "ratio": adaptive_seconds / lazy_seconds if lazy_seconds > 0 else float("inf"),
        "label_agreement": float(np.mean(lazy == adaptive)),
    }
