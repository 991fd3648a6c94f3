"""Wishart distribution over precision matrices.

Log-density, the log multivariate gamma function, and a reproducible
Bartlett-decomposition sampler. Draws come in fixed-size blocks, each from
its own Philox stream keyed by ``(seed, block index)``, so any draw can be
reproduced without generating the blocks before it, and a run of ``m`` draws
is a prefix of a run of ``m' > m`` draws with the same seed.

Normal variates come from numpy's ziggurat sampler
(``Generator.standard_normal``) and chi-square variates from
``Generator.chisquare``; neither inverts a CDF.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from fwda.covariance import as_symmetric
from fwda.errors import DomainError, InvalidParameter, NotPositiveDefinite

_SEED_MASK = (1 << 64) - 1
BLOCK = 64


def log_multivariate_gamma(p, a):
    """``log Gamma_p(a) = p(p-1)/4 log(pi) + sum_{j=1..p} log Gamma(a + (1-j)/2)``."""
    p = int(p)
    if p < 1:
        raise DomainError(f"dimension must be positive, got {p}")
    if not a > (p - 1) / 2:
        raise DomainError(f"log multivariate gamma needs a > (p-1)/2 = {(p - 1) / 2}, got {a}")
    j = np.arange(1, p + 1)
    return float(p * (p - 1) / 4 * math.log(math.pi) + gammaln(a + (1 - j) / 2).sum())


def _cholesky(m, what="matrix"):
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{what} is not positive definite") from None


@dataclass(frozen=True)
class WishartModel:
    """``W(scale, dof)`` with ``E[theta] = dof * scale``.

    ``dof_requested`` records what the caller asked for; ``dof`` is raised to
    the dimension when the request is smaller, because below that the
    distribution is singular.
    """

    scale: np.ndarray
    dof: float
    dof_requested: float
    scale_chol: np.ndarray = field(repr=False)

    @classmethod
    def create(cls, scale, dof):
        scale = as_symmetric(scale)
        p = scale.shape[0]
        dof_requested = float(dof)
        eff = max(dof_requested, float(p))
        return cls(scale, eff, dof_requested, _cholesky(scale, "Wishart scale"))

    @property
    def dim(self):
        return self.scale.shape[0]

    @property
    def mean(self):
        return self.dof * self.scale


@dataclass(frozen=True)
class PrecisionSample:
    theta: np.ndarray
    log_det_theta: float
    chol: np.ndarray


class PrecisionEnsemble:
    """Stacked Wishart draws, indexable as a sequence of :class:`PrecisionSample`."""

    def __init__(self, thetas, chols):
        self.thetas = thetas
        self.chols = chols
        self.log_dets = 2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)

    def __len__(self):
        return self.thetas.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PrecisionEnsemble(self.thetas[i], self.chols[i])
        return PrecisionSample(self.thetas[i], float(self.log_dets[i]), self.chols[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        return cls(np.stack([s.theta for s in samples]), np.stack([s.chol for s in samples]))


def as_ensemble(samples):
    if isinstance(samples, PrecisionEnsemble):
        return samples
    return PrecisionEnsemble.from_samples(samples)


def log_density(theta, model):
    """Log of the Wishart density of ``theta`` under ``model``, evaluated via Cholesky factors."""
    theta = as_symmetric(theta)
    p = model.dim
    v = model.dof
    if theta.shape != (p, p):
        raise InvalidParameter(f"theta has shape {theta.shape}, model dimension is {p}")
    if not v > p - 1:
        raise DomainError(f"dof must exceed p - 1 = {p - 1}, got {v}")
    chol = _cholesky(theta, "theta")
    return _log_density_from_chol(chol, model)


def _log_density_from_chol(chol, model):
    p = model.dim
    v = model.dof
    log_det_theta = 2.0 * np.log(np.diag(chol)).sum()
    log_det_scale = 2.0 * np.log(np.diag(model.scale_chol)).sum()
    # tr(T^-1 theta) = ||L^-1 C||_F^2 with T = L L', theta = C C'
    half = solve_triangular(model.scale_chol, chol, lower=True)
    trace = float(np.sum(half * half))
    return float(
        0.5 * (v - p - 1) * log_det_theta
        - 0.5 * trace
        - 0.5 * v * p * math.log(2.0)
        - 0.5 * v * log_det_scale
        - log_multivariate_gamma(p, 0.5 * v)
    )


def ensemble_log_density(ensemble, model):
    """Wishart log-density of every member of an ensemble."""
    return np.array([_log_density_from_chol(c, model) for c in as_ensemble(ensemble).chols])


def block_generator(seed, block):
    """Independent Philox stream for draw block ``block`` under ``seed``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & _SEED_MASK, int(block) & _SEED_MASK]))


def _bartlett_block(model, seed, block):
    # Bartlett factors for draws block * BLOCK .. (block + 1) * BLOCK - 1
    rng = block_generator(seed, block)
    p = model.dim
    rows, cols = np.tril_indices(p, -1)
    diag = np.arange(p)
    a = np.zeros((BLOCK, p, p))
    a[:, diag, diag] = np.sqrt(rng.chisquare(np.broadcast_to(model.dof - diag, (BLOCK, p))))
    a[:, rows, cols] = rng.standard_normal((BLOCK, rows.size))
    return a


def sample(model, seed, count, threads=1):
    """Draw ``count`` precision matrices from ``W(scale, dof)``.

    Bartlett decomposition: ``A`` lower triangular with
    ``A_jj = sqrt(chi2(dof - j + 1))`` and standard normal entries below the
    diagonal; the draw is ``(L A)(L A)^T`` where ``scale = L L^T``. ``L A``
    is itself the Cholesky factor of the draw, so log-determinants come for
    free.

    Draws are produced in blocks of ``BLOCK``; block ``b`` comes from a
    Philox stream keyed by ``(seed, b)``, so draw ``i`` depends only on
    ``(model, seed, i)``.

    Parameters
    ----------
    model : WishartModel
    seed : int
        64-bit seed.
    count : int
    threads : int
        Blocks may be generated on a thread pool; output order is by draw
        index regardless.

    Returns
    -------
    PrecisionEnsemble
    """
    count = int(count)
    if count < 1:
        raise InvalidParameter(f"count must be at least 1, got {count}")
    n_blocks = -(-count // BLOCK)

    def factors(blocks):
        return [_bartlett_block(model, seed, b) for b in blocks]

    if threads > 1 and n_blocks > 1:
        chunks = np.array_split(np.arange(n_blocks), min(threads, n_blocks))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(factors, chunks))
        a = np.concatenate([f for part in parts for f in part])[:count]
    else:
        a = np.concatenate(factors(range(n_blocks)))[:count]
    chols = np.matmul(model.scale_chol, a)
    thetas = np.matmul(chols, np.swapaxes(chols, 1, 2))
    thetas = 0.5 * (thetas + np.swapaxes(thetas, 1, 2))
    return PrecisionEnsemble(thetas, chols)
