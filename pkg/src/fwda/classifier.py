"""Ensemble discriminant analysis over Wishart-sampled precision matrices.

A fitted :class:`FwdaModel` stores only the class means, the Wishart
parameters and the sampling seed. The ensemble of precision matrices is
regenerated from ``(wishart, seed, ensemble_size)`` whenever predictions are
needed, and one ensemble serves every query point.

Each member ``theta_i`` votes with the sign of the LDA discriminant
``(x - xbar)' theta_i (xbar_pos - xbar_neg)`` and is weighted by the Gaussian
likelihood of ``x`` under mean ``xbar`` and precision ``theta_i``. Weights
are combined in the log domain and shifted by their maximum before
exponentiation; the shift is a positive rescaling, so labels are unaffected.
"""

import enum
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from fwda.covariance import (
    RIDGE,
    RIDGE_THRESHOLD,
    desparsify,
    graphical_lasso,
    project_pd,
    pseudo_inverse,
    sample_covariance,
    shrinkage_covariance,
)
from fwda.errors import (
    InsufficientSamples,
    InvalidModel,
    InvalidParameter,
    MissingClass,
    ModelFormatError,
    ShapeError,
)
from fwda.wishart import PrecisionEnsemble, WishartModel, as_ensemble, ensemble_log_density, sample

FORMAT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


class Variant(str, enum.Enum):
    FWDA = "fwda"
    DISCRETE_FWDA = "discrete_fwda"
    SAMPLE_FWDA = "sample_fwda"


@dataclass(frozen=True)
class FitConfig:
    lam: float = 1.0
    ensemble_size: int = 200
    seed: int = 42
    variant: Variant = Variant.FWDA
    tol: float = 1e-4
    max_iter: int = 100
    floor_ratio: float = 1e-6


@dataclass(frozen=True)
class FwdaModel:
    dim: int
    global_mean: np.ndarray
    pos_mean: np.ndarray
    neg_mean: np.ndarray
    wishart: WishartModel
    lam: float
    ensemble_size: int
    seed: int
    variant: Variant = Variant.FWDA
    fit_info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name in ("global_mean", "pos_mean", "neg_mean"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.shape != (self.dim,):
                raise InvalidModel(f"{name} has shape {vec.shape}, expected ({self.dim},)")
            object.__setattr__(self, name, vec)
        if self.wishart.dim != self.dim:
            raise InvalidModel(f"Wishart scale has dimension {self.wishart.dim}, model has {self.dim}")
        if self.ensemble_size < 1:
            raise InvalidModel(f"ensemble_size must be at least 1, got {self.ensemble_size}")
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def mean_difference(self):
        return self.pos_mean - self.neg_mean

    def ensemble(self, threads=1):
        """Regenerate the model's precision ensemble."""
        return sample(self.wishart, self.seed, self.ensemble_size, threads=threads)


@dataclass(frozen=True)
class Prediction:
    label: int
    score: float
    per_member_scores: tuple = None


def _sign(values):
    # sign(0) counts as +1
    return np.where(values >= 0, 1.0, -1.0)


def _check_vector(x, dim, what="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ShapeError(f"{what} has shape {x.shape}, expected ({dim},)")
    return x


def lda_discriminant(x, theta, global_mean, pos_mean, neg_mean):
    """``(x - xbar)' theta (xbar_pos - xbar_neg)``; the caller takes the sign."""
    theta = np.asarray(theta, dtype=np.float64)
    p = theta.shape[0]
    if theta.shape != (p, p):
        raise ShapeError(f"theta must be square, got {theta.shape}")
    x = _check_vector(x, p)
    xbar = _check_vector(global_mean, p, "global_mean")
    diff = _check_vector(pos_mean, p, "pos_mean") - _check_vector(neg_mean, p, "neg_mean")
    return float((x - xbar) @ theta @ diff)


def gaussian_log_weight(x, sample, global_mean):
    """Log-density of ``x`` under ``N(global_mean, theta^-1)`` for one ensemble member.

    Uses the member's cached log-determinant.
    """
    p = sample.theta.shape[0]
    xc = _check_vector(x, p) - _check_vector(global_mean, p, "global_mean")
    return float(-0.5 * p * _LOG_2PI + 0.5 * sample.log_det_theta - 0.5 * (xc @ sample.theta @ xc))


class _Scorer:
    """Per-ensemble precomputation shared by every query point."""

    def __init__(self, model, samples, log_weight=None, packed=True):
        self.model = model
        if not isinstance(samples, PrecisionEnsemble):
            samples = list(samples)
            if not samples:
                raise InvalidModel("ensemble is empty")
        self.ensemble = as_ensemble(samples)
        if len(self.ensemble) == 0:
            raise InvalidModel("ensemble is empty")
        if self.ensemble.thetas.shape[1:] != (model.dim, model.dim):
            raise ShapeError(
                f"ensemble members are {self.ensemble.thetas.shape[1:]}, model dimension is {model.dim}"
            )
        self.directions = self.ensemble.thetas @ model.mean_difference
        # upper triangles with doubled off-diagonals: x' theta x = packed @ (x_j x_k)_{j<=k}
        self._rows, self._cols = np.triu_indices(model.dim)
        self._packed = None
        if packed:
            factor = np.where(self._rows == self._cols, 1.0, 2.0)
            self._packed = self.ensemble.thetas[:, self._rows, self._cols] * factor
        self.log_weight = log_weight
        self._wishart_logpdf = None

    @property
    def wishart_logpdf(self):
        if self._wishart_logpdf is None:
            self._wishart_logpdf = ensemble_log_density(self.ensemble, self.model.wishart)
        return self._wishart_logpdf

    def terms(self, x):
        x = _check_vector(x, self.model.dim)
        xc = x - self.model.global_mean
        d = self.directions @ xc
        if self.log_weight is not None:
            w = np.asarray(self.log_weight(x, self.ensemble, self.model.global_mean), dtype=np.float64)
        else:
            if self._packed is not None:
                quad = self._packed @ (xc[self._rows] * xc[self._cols])
            else:
                quad = np.einsum("mj,j->m", self.ensemble.thetas @ xc, xc)
            w = -0.5 * self.model.dim * _LOG_2PI + 0.5 * self.ensemble.log_dets - 0.5 * quad
        return d, w

    def fwda(self, x, diagnostics=False):
        d, w = self.terms(x)
        score = float(np.sum(_sign(d) * np.exp(w - w.max())) / d.size)
        return _prediction(score, d, w, diagnostics)

    def discrete(self, x, diagnostics=False, log_prior=None):
        d, w = self.terms(x)
        prior = self.wishart_logpdf if log_prior is None else np.asarray(log_prior(self.ensemble), dtype=np.float64)
        combined = w + prior
        score = float(np.sum(_sign(d) * np.exp(combined - combined.max())))
        return _prediction(score, d, combined, diagnostics)

    def score(self, x, diagnostics=False):
        if self.model.variant is Variant.DISCRETE_FWDA:
            return self.discrete(x, diagnostics)
        return self.fwda(x, diagnostics)


def _prediction(score, d, w, diagnostics):
    members = tuple(zip(d.tolist(), w.tolist())) if diagnostics else None
    return Prediction(1 if score >= 0 else -1, score, members)


def fwda_score(x, model, samples, diagnostics=False, log_weight=None):
    """Likelihood-weighted vote ``(1/m) sum_i sign(d_i) exp(w_i - max w)``.

    ``log_weight`` replaces the Gaussian log weight; it is called as
    ``log_weight(x, ensemble, global_mean)`` and must return one value per
    member.
    """
    return _Scorer(model, samples, log_weight).fwda(x, diagnostics)


def discrete_fwda_score(x, model, samples, diagnostics=False, log_weight=None, log_prior=None):
    """Vote additionally weighted by each member's Wishart density (not averaged).

    ``log_weight`` is as in :func:`fwda_score`; ``log_prior(ensemble)``
    replaces the per-member Wishart log-density.
    """
    return _Scorer(model, samples, log_weight).discrete(x, diagnostics, log_prior)


def _class_statistics(data):
    if data.n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {data.n}")
    for label in (1, -1):
        if not np.any(data.labels == label):
            raise MissingClass(f"no samples with label {label:+d}")
    # canonical row order makes every statistic independent of input order
    order = np.lexsort(np.column_stack([data.features, data.labels]).T[::-1])
    x = data.features[order]
    labels = data.labels[order]
    return x.mean(axis=0), x[labels == 1].mean(axis=0), x[labels == -1].mean(axis=0), sample_covariance(x)


def _ridged(sigma_bar):
    if np.any(np.diag(sigma_bar) < RIDGE_THRESHOLD):
        sigma_bar = sigma_bar + RIDGE * np.eye(sigma_bar.shape[0])
    return sigma_bar


def fit(data, config=None, **overrides):
    """Fit an FWDA model to a labelled dataset.

    Parameters
    ----------
    data : LabeledDataset
    config : FitConfig, optional
        Defaults to lambda 1.0, 200 members, seed 42. Keyword arguments
        override individual fields.

    Returns
    -------
    FwdaModel
        The Wishart component has ``dof = max(n - 1, p)`` and a scale chosen
        so that its mean equals the estimated precision ``T``, i.e.
        ``scale = T / dof``.
    """
    config = config or FitConfig()
    if overrides:
        config = FitConfig(**{**config.__dict__, **overrides})
    variant = Variant(config.variant)
    if config.ensemble_size < 1:
        raise InvalidParameter(f"ensemble_size must be at least 1, got {config.ensemble_size}")
    start = time.perf_counter()
    global_mean, pos_mean, neg_mean, sigma_bar = _class_statistics(data)
    sigma_bar = _ridged(sigma_bar)
    info = {"n": int(data.n), "p": int(data.dim)}
    if variant is Variant.SAMPLE_FWDA:
        t_hat = project_pd(pseudo_inverse(sigma_bar), config.floor_ratio)
    else:
        est = graphical_lasso(sigma_bar, config.lam, tol=config.tol, max_iter=config.max_iter)
        t_hat = project_pd(desparsify(est.theta, sigma_bar), config.floor_ratio)
        info.update(kkt_residual=est.kkt_residual, converged=est.converged, outer_iterations=est.outer_iterations)
    dof = max(data.n - 1, data.dim)
    wishart = WishartModel.create(t_hat / dof, data.n - 1)
    info.update(dof=wishart.dof, dof_requested=wishart.dof_requested, seconds=time.perf_counter() - start)
    return FwdaModel(
        dim=data.dim,
        global_mean=global_mean,
        pos_mean=pos_mean,
        neg_mean=neg_mean,
        wishart=wishart,
        lam=float(config.lam),
        ensemble_size=int(config.ensemble_size),
        seed=int(config.seed),
        variant=variant,
        fit_info=info,
    )


def predict(model, xs, samples=None, diagnostics=False, threads=1):
    """Score every row of ``xs`` against one regenerated ensemble.

    Each point is scored independently with identical array shapes, so the
    batch result equals point-by-point prediction bit for bit.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return []
    xs = xs.reshape(-1, xs.shape[-1]) if xs.ndim > 1 else xs.reshape(1, -1)
    if xs.shape[1] != model.dim:
        raise ShapeError(f"inputs have dimension {xs.shape[1]}, model has dimension {model.dim}")
    scorer = _Scorer(model, samples if samples is not None else model.ensemble(threads))
    return [scorer.score(x, diagnostics) for x in xs]


def labels_of(predictions):
    return np.array([p.label for p in predictions], dtype=np.int64)


def plain_lda_predict(data, xs, covariance_mode="pinv", gamma=0.1, rank_tol=1e-10):
    """Single-matrix LDA baseline.

    ``covariance_mode`` is ``"pinv"`` (Moore-Penrose inverse of the sample
    covariance) or ``"shrinkage"`` (inverse of the covariance shrunk towards
    a scaled identity with weight ``gamma``).
    """
    global_mean, pos_mean, neg_mean, sigma_bar = _class_statistics(data)
    if covariance_mode == "pinv":
        theta = pseudo_inverse(sigma_bar, rank_tol)
    elif covariance_mode == "shrinkage":
        theta = np.linalg.inv(shrinkage_covariance(sigma_bar, gamma))
    else:
        raise InvalidParameter(f"unknown covariance mode {covariance_mode!r}")
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return []
    xs = xs.reshape(-1, xs.shape[-1]) if xs.ndim > 1 else xs.reshape(1, -1)
    if xs.shape[1] != data.dim:
        raise ShapeError(f"inputs have dimension {xs.shape[1]}, data has dimension {data.dim}")
    scores = (xs - global_mean) @ (theta @ (pos_mean - neg_mean))
    return [Prediction(1 if s >= 0 else -1, float(s)) for s in scores]


def model_to_dict(model):
    return {
        "format_version": FORMAT_VERSION,
        "variant": model.variant.value,
        "dim": model.dim,
        "lambda": model.lam,
        "ensemble_size": model.ensemble_size,
        "seed": model.seed,
        "dof": model.wishart.dof,
        "dof_requested": model.wishart.dof_requested,
        "global_mean": model.global_mean.tolist(),
        "pos_mean": model.pos_mean.tolist(),
        "neg_mean": model.neg_mean.tolist(),
        "scale": model.wishart.scale.reshape(-1).tolist(),
    }


def _field(obj, name, kind):
    if name not in obj:
        raise ModelFormatError(name, "missing")
    value = obj[name]
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ModelFormatError(name, f"expected an integer, got {value!r}")
    elif kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ModelFormatError(name, f"expected a number, got {value!r}")
        value = float(value)
    elif kind == "str":
        if not isinstance(value, str):
            raise ModelFormatError(name, f"expected a string, got {value!r}")
    elif kind == "vector":
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ModelFormatError(name, "expected a list of numbers")
        value = np.array(value, dtype=np.float64)
    return value


def model_from_dict(obj):
    if not isinstance(obj, dict):
        raise ModelFormatError("<root>", "expected a JSON object")
    version = _field(obj, "format_version", "int")
    if version != FORMAT_VERSION:
        raise ModelFormatError("format_version", f"unsupported version {version}")
    variant = _field(obj, "variant", "str")
    try:
        variant = Variant(variant)
    except ValueError:
        raise ModelFormatError("variant", f"unknown variant {variant!r}") from None
    dim = _field(obj, "dim", "int")
    if dim < 1:
        raise ModelFormatError("dim", "must be positive")
    lam = _field(obj, "lambda", "float")
    ensemble_size = _field(obj, "ensemble_size", "int")
    seed = _field(obj, "seed", "int")
    dof = _field(obj, "dof", "float")
    dof_requested = _field(obj, "dof_requested", "float")
    means = {}
    for name in ("global_mean", "pos_mean", "neg_mean"):
        means[name] = _field(obj, name, "vector")
        if means[name].shape != (dim,):
            raise ModelFormatError(name, f"expected {dim} entries, got {means[name].size}")
    scale = _field(obj, "scale", "vector")
    if scale.size != dim * dim:
        raise ModelFormatError("scale", f"expected {dim * dim} entries, got {scale.size}")
    try:
        wishart = WishartModel.create(scale.reshape(dim, dim), dof_requested)
    except Exception as exc:
        raise ModelFormatError("scale", str(exc)) from None
    if wishart.dof != dof:
        raise ModelFormatError("dof", f"inconsistent with dof_requested and dim (expected {wishart.dof})")
    try:
        return FwdaModel(dim, wishart=wishart, lam=lam, ensemble_size=ensemble_size, seed=seed,
                         variant=variant, **means)
    except InvalidModel as exc:
        raise ModelFormatError("ensemble_size", str(exc)) from None


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError("<root>", f"not valid JSON: {exc}") from None
    return model_from_dict(obj)
