"""Covariance and precision-matrix estimation.

Sample covariance, an L1-penalised precision estimator (graphical lasso,
block coordinate descent on the covariance), the de-sparsified correction,
eigenvalue repair, and the two covariance estimators used by the plain LDA
baselines.

Matrices are plain ``numpy`` arrays. Functions that promise a symmetric
result return ``0.5 * (a + a.T)`` so that symmetry holds exactly.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from fwda.errors import (
    DegenerateCovariance,
    InsufficientSamples,
    InvalidParameter,
    ShapeError,
)

RIDGE_THRESHOLD = 1e-12
RIDGE = 1e-8


def as_symmetric(a):
    """Return ``a`` as a float64 square matrix, symmetrised by averaging with its transpose."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ShapeError(f"expected a non-empty square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def sample_covariance(x):
    """Unbiased sample covariance ``(1/(n-1)) sum (x_j - xbar)(x_j - xbar)^T``.

    Parameters
    ----------
    x : array_like, shape (n, p), or a LabeledDataset
        Observations in rows.

    Returns
    -------
    ndarray, shape (p, p)
    """
    x = getattr(x, "features", x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an n x p matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise InsufficientSamples(f"sample covariance needs at least 2 rows, got {n}")
    centered = x - x.mean(axis=0)
    return as_symmetric(centered.T @ centered / (n - 1))


@dataclass(frozen=True)
class PrecisionEstimate:
    theta: np.ndarray
    lam: float
    outer_iterations: int
    kkt_residual: float
    converged: bool

    @property
    def covariance(self):
        return np.linalg.inv(self.theta)


def glasso_objective(theta, sigma_bar, lam):
    """``tr(S theta) - log|theta| + lam * sum_{j != k} |theta_jk|``; ``inf`` outside the PD cone."""
    try:
        chol = np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        return np.inf
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    off = np.abs(theta).sum() - np.abs(np.diag(theta)).sum()
    return float(np.sum(sigma_bar * theta) - logdet + lam * off)


def kkt_residual(theta, sigma_bar, lam):
    """Largest violation of the subgradient optimality conditions of the penalised objective."""
    grad = sigma_bar - np.linalg.inv(theta)
    p = theta.shape[0]
    off = ~np.eye(p, dtype=bool)
    nz = off & (theta != 0)
    zero = off & (theta == 0)
    worst = np.abs(np.diag(grad)).max()
    if nz.any():
        worst = max(worst, np.abs(grad[nz] + lam * np.sign(theta[nz])).max())
    if zero.any():
        worst = max(worst, np.maximum(np.abs(grad[zero]) - lam, 0.0).max())
    return float(worst)


@njit(cache=True)
def _lasso_cd(w11, s12, lam, beta, tol, max_sweeps):
    # min_b 0.5 b'W11 b - s12'b + lam |b|_1, warm-started from beta (updated in place)
    q = s12.shape[0]
    grad_part = w11 @ beta
    for _ in range(max_sweeps):
        max_step = 0.0
        for k in range(q):
            old = beta[k]
            r = s12[k] - grad_part[k] + w11[k, k] * old
            if r > lam:
                new = (r - lam) / w11[k, k]
            elif r < -lam:
                new = (r + lam) / w11[k, k]
            else:
                new = 0.0
            if new != old:
                delta = new - old
                for i in range(q):
                    grad_part[i] += w11[i, k] * delta
                beta[k] = new
                if abs(delta) > max_step:
                    max_step = abs(delta)
        if max_step < tol:
            break
    return beta


@njit(cache=True)
def _glasso_sweep(s, w, theta, betas, lam, inner_tol, inner_max):
    # One pass of block coordinate descent over all columns; returns the
    # total absolute change of W's off-diagonal entries.
    p = s.shape[0]
    change = 0.0
    idx = np.empty(p - 1, dtype=np.int64)
    for j in range(p):
        c = 0
        for i in range(p):
            if i != j:
                idx[c] = i
                c += 1
        w11 = np.empty((p - 1, p - 1))
        s12 = np.empty(p - 1)
        for a in range(p - 1):
            s12[a] = s[idx[a], j]
            for b in range(p - 1):
                w11[a, b] = w[idx[a], idx[b]]
        beta = betas[j]
        _lasso_cd(w11, s12, lam, beta, inner_tol, inner_max)
        w12 = w11 @ beta
        for a in range(p - 1):
            change += 2.0 * abs(w12[a] - w[idx[a], j])
            w[idx[a], j] = w12[a]
            w[j, idx[a]] = w12[a]
        theta_jj = 1.0 / (w[j, j] - w12 @ beta)
        theta[j, j] = theta_jj
        for a in range(p - 1):
            theta[idx[a], j] = -theta_jj * beta[a]
            theta[j, idx[a]] = -theta_jj * beta[a]
    return change


def graphical_lasso(sigma_bar, lam, tol=1e-4, max_iter=100):
    """Penalised maximum-likelihood precision matrix.

    Minimises ``tr(S theta) - log|theta| + lam * sum_{j != k} |theta_jk|``
    with an unpenalised diagonal, by block coordinate descent on the
    covariance ``W = theta^-1`` with a cyclic coordinate-descent lasso for
    each column.

    Parameters
    ----------
    sigma_bar : array_like, shape (p, p)
        Sample covariance; its diagonal must be strictly positive.
    lam : float
        Absolute (unscaled) off-diagonal penalty, ``lam >= 0``.
    tol : float
        Outer stopping tolerance. Iteration stops once the mean absolute
        change of W's off-diagonals drops below ``tol * mean|offdiag S|``
        and the KKT residual is at most ``tol``.
    max_iter : int
        Maximum number of outer sweeps.

    Returns
    -------
    PrecisionEstimate
        ``converged`` is False when ``max_iter`` ran out; this is not an error.
    """
    s = as_symmetric(sigma_bar)
    lam = float(lam)
    if not lam >= 0:
        raise InvalidParameter(f"lambda must be nonnegative, got {lam}")
    if tol <= 0 or max_iter < 1:
        raise InvalidParameter("tol must be positive and max_iter at least 1")
    diag = np.diag(s)
    if not np.all(diag > 0) or not np.all(np.isfinite(s)):
        raise DegenerateCovariance("sample covariance has a nonpositive or non-finite diagonal entry")
    p = s.shape[0]
    if p == 1:
        theta = np.array([[1.0 / s[0, 0]]])
        return PrecisionEstimate(theta, lam, 0, kkt_residual(theta, s, lam), True)

    off = ~np.eye(p, dtype=bool)
    scale = np.abs(s[off]).mean()
    threshold = tol * scale if scale > 0 else tol
    w = s.copy()
    theta = np.diag(1.0 / diag)
    betas = np.zeros((p, p - 1))
    inner_tol = tol * 1e-3 * (scale if scale > 0 else 1.0)
    kkt = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        change = _glasso_sweep(s, w, theta, betas, lam, inner_tol, 1000)
        mean_change = change / (p * (p - 1))
        if mean_change <= threshold:
            kkt = kkt_residual(theta, s, lam)
            if kkt <= tol:
                break
            inner_tol *= 0.1
    else:
        kkt = kkt_residual(theta, s, lam)
    theta = 0.5 * (theta + theta.T)
    theta[theta == 0] = 0.0  # drop negative zeros
    if np.linalg.eigvalsh(theta)[0] <= 0:
        raise DegenerateCovariance("solver produced a precision matrix that is not positive definite")
    return PrecisionEstimate(theta, lam, iterations, kkt, bool(kkt <= tol))


def desparsify(theta_hat, sigma_bar):
    """Bias-corrected precision ``2 theta - theta S theta`` (symmetrised)."""
    theta_hat = as_symmetric(theta_hat)
    sigma_bar = as_symmetric(sigma_bar)
    if theta_hat.shape != sigma_bar.shape:
        raise ShapeError(f"dimension mismatch: {theta_hat.shape} vs {sigma_bar.shape}")
    return as_symmetric(2.0 * theta_hat - theta_hat @ sigma_bar @ theta_hat)


def project_pd(m, floor_ratio=1e-6):
    """Clip eigenvalues from below so the result is positive definite.

    The floor is ``floor_ratio * max(largest eigenvalue, 1)``. Eigenvalues
    already above the floor are kept, so a PD input with a well-separated
    spectrum comes back unchanged up to reconstruction rounding.
    """
    if floor_ratio <= 0:
        raise InvalidParameter(f"floor_ratio must be positive, got {floor_ratio}")
    m = as_symmetric(m)
    vals, vecs = np.linalg.eigh(m)
    floor = floor_ratio * max(vals[-1], 1.0)
    if vals[0] >= floor:
        return m
    vals = np.maximum(vals, floor)
    return as_symmetric((vecs * vals) @ vecs.T)


def shrinkage_covariance(sigma_bar, gamma):
    """Linear shrinkage towards the scaled identity: ``(1-g) S + g (tr S / p) I``."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameter(f"gamma must lie in [0, 1], got {gamma}")
    s = as_symmetric(sigma_bar)
    p = s.shape[0]
    target = np.trace(s) / p
    out = (1.0 - gamma) * s
    out[np.diag_indices(p)] += gamma * target
    return out


def pseudo_inverse(m, rank_tol=1e-10):
    """Moore-Penrose inverse of a symmetric matrix through its eigendecomposition.

    Eigenvalues whose magnitude does not exceed ``rank_tol`` times the
    largest magnitude are treated as zero.
    """
    m = as_symmetric(m)
    vals, vecs = np.linalg.eigh(m)
    top = np.abs(vals).max()
    if top == 0:
        return np.zeros_like(m)
    keep = np.abs(vals) > rank_tol * top
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / vals[keep]
    return as_symmetric((vecs * inv) @ vecs.T)
