"""Probability density and score models.

Analytic families used for ground truth (Gaussian mixtures, generalized
Gaussian, Student-t) plus the classical estimators evaluated against them
(Gaussian-kernel KDE and the nearest-neighbor power law). Every model
exposes ``dim``, ``log_density`` and ``score``; ``score`` is the gradient
of ``log_density`` wherever both are defined, which the test suite checks
by central differences.
"""

from __future__ import annotations

import json
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial import cKDTree
from scipy.special import gammaln

from . import kernels
from .numerics import Rng

_LOG_2PI = float(np.log(2.0 * np.pi))


@runtime_checkable
class DensityModel(Protocol):
    """Capability bundle: ambient dimension, log density, and score."""

    dim: int

    def log_density(self, x): ...

    def score(self, x): ...


def _as_batch(x, dim):
    """Coerce a point or batch of points to (m, dim); report if input was 1-D."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"expected dimension {dim}, got {arr.shape[0]}")
        return arr.reshape(1, dim), True
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr, False


class UniformDensity:
    """Constant density stub: log p(x) = log_value everywhere, zero score."""

    def __init__(self, dim: int, log_value: float = 0.0):
        self.dim = int(dim)
        self.log_value = float(log_value)

    def log_density(self, x):
        pts, single = _as_batch(x, self.dim)
        out = np.full(pts.shape[0], self.log_value)
        return float(out[0]) if single else out

    def score(self, x):
        pts, single = _as_batch(x, self.dim)
        out = np.zeros_like(pts)
        return out[0] if single else out


class GaussianMixture:
    """Gaussian mixture with cached Cholesky factorizations.

    Parameters
    ----------
    weights : (K,) array_like
        Nonnegative, summing to 1 within 1e-12.
    means : (K, D) array_like
    covariances : (K, D, D) array_like
        Symmetric positive definite; covariance solves go through the
        cached triangular factors, never an explicit inverse.
    """

    def __init__(self, weights, means, covariances):
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.covariances = np.asarray(covariances, dtype=float)
        if self.covariances.ndim == 2:
            self.covariances = self.covariances[None, :, :]
        K, D = self.means.shape
        if self.weights.shape != (K,):
            raise ValueError("weights/means component counts disagree")
        if self.covariances.shape != (K, D, D):
            raise ValueError("covariances must have shape (K, D, D)")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")

        self._chol = np.empty_like(self.covariances)
        self._prec_chol = np.empty_like(self.covariances)
        self._log_det_chol = np.empty(K)
        eye = np.eye(D)
        for k in range(K):
            cov = self.covariances[k]
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-10):
                raise ValueError(f"covariance of component {k} is not symmetric")
            try:
                L = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError(
                    f"covariance of component {k} is not positive definite"
                ) from None
            self._chol[k] = L
            self._prec_chol[k] = solve_triangular(L, eye, lower=True).T
            self._log_det_chol[k] = -np.sum(np.log(np.diag(L)))
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def kernel_arrays(self):
        """Flat arrays consumed by the jitted kernels."""
        return (self._log_weights, self.means, self._prec_chol, self._log_det_chol)

    def log_density(self, x):
        pts, single = _as_batch(x, self.dim)
        out = kernels.gmm_logpdf_batch(np.ascontiguousarray(pts), *self.kernel_arrays())
        return float(out[0]) if single else out

    def score(self, x):
        pts, single = _as_batch(x, self.dim)
        out = kernels.gmm_score_batch(np.ascontiguousarray(pts), *self.kernel_arrays())
        return out[0] if single else out

    def log_responsibilities(self, x):
        """Per-component log posterior weights at x, shape (K,) or (m, K)."""
        pts, single = _as_batch(x, self.dim)
        terms, _ = kernels._gmm_log_terms_numpy(pts, *self.kernel_arrays())
        mx = terms.max(axis=0)
        lse = mx + np.log(np.sum(np.exp(terms - mx[None, :]), axis=0))
        out = (terms - lse[None, :]).T
        return out[0] if single else out

    def sample(self, n: int, rng: Rng):
        """Draw n iid points; deterministic for a given Rng state."""
        gen = rng.generator
        counts = gen.multinomial(n, self.weights)
        parts = []
        for k, c in enumerate(counts):
            if c == 0:
                continue
            z = gen.standard_normal((c, self.dim))
            parts.append(self.means[k] + z @ self._chol[k].T)
        X = np.concatenate(parts, axis=0) if parts else np.empty((0, self.dim))
        return X[gen.permutation(n)]

    # -- serialization (weights, means, row-major covariances) --

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        return cls(d["weights"], d["means"], d["covariances"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "GaussianMixture":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __repr__(self):
        return f"GaussianMixture(K={self.n_components}, D={self.dim})"


def standard_normal(dim: int) -> GaussianMixture:
    """The D-dimensional standard normal as a one-component mixture."""
    return GaussianMixture(
        np.ones(1), np.zeros((1, dim)), np.eye(dim)[None, :, :]
    )


def gmm_fit_em(
    data,
    n_components: int,
    *,
    max_iters: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
    reg: float = 1e-6,
    return_trace: bool = False,
):
    """Fit a Gaussian mixture by EM with k-means++-style seeding.

    Stops when the per-sample log-likelihood improves by less than ``tol``
    or after ``max_iters`` iterations. The log-likelihood trace is
    non-decreasing (EM monotonicity). ``reg`` is added to covariance
    diagonals every M-step.

    Returns the fitted mixture, or ``(mixture, trace)`` with
    ``return_trace=True``.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be a 2-D array of shape (n, D)")
    n, D = X.shape
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    K = int(n_components)
    if n <= K:
        raise ValueError(f"need more samples than components: n={n}, K={K}")

    rng = Rng(seed)
    centers = _kmeanspp_centers(X, K, rng)

    # hard assignment to the seed centers -> initial responsibilities
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((n, K))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0

    weights = np.full(K, 1.0 / K)
    means = centers.copy()
    eye = np.eye(D)
    covs = np.tile(eye, (K, 1, 1))
    trace = []
    prev_ll = -np.inf
    for _ in range(max_iters):
        # M-step
        nk = resp.sum(axis=0)
        for k in range(K):
            if nk[k] < 1e-12:
                # starved component keeps its previous parameters
                continue
            means[k] = resp[:, k] @ X / nk[k]
            Xc = X - means[k]
            covs[k] = (resp[:, k, None] * Xc).T @ Xc / nk[k] + reg * eye
        weights = nk / n

        # refresh factorizations
        log_dets = np.empty(K)
        prec = np.empty((K, D, D))
        for k in range(K):
            try:
                L = np.linalg.cholesky(covs[k])
            except np.linalg.LinAlgError:
                raise ValueError(
                    f"degenerate component {k}: covariance not positive definite "
                    f"after regularization {reg}"
                ) from None
            prec[k] = solve_triangular(L, eye, lower=True).T
            log_dets[k] = -np.sum(np.log(np.diag(L)))
        with np.errstate(divide="ignore"):
            log_w = np.log(np.maximum(weights, 0.0))

        # E-step (log space)
        terms, _ = kernels._gmm_log_terms_numpy(X, log_w, means, prec, log_dets)
        mx = terms.max(axis=0)
        lse = mx + np.log(np.sum(np.exp(terms - mx[None, :]), axis=0))
        resp = np.exp(terms - lse[None, :]).T
        ll = float(np.mean(lse))
        trace.append(ll)
        if ll - prev_ll < tol:
            break
        prev_ll = ll

    weights = weights / weights.sum()
    gmm = GaussianMixture(weights, means, covs)
    if return_trace:
        return gmm, np.asarray(trace)
    return gmm


def _kmeanspp_centers(X, K, rng: Rng):
    n = X.shape[0]
    gen = rng.generator
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[gen.integers(n)]
    min_d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = min_d2.sum()
        if total <= 0:
            centers[k:] = X[gen.integers(n, size=K - k)]
            break
        probs = min_d2 / total
        centers[k] = X[gen.choice(n, p=probs)]
        min_d2 = np.minimum(min_d2, ((X - centers[k]) ** 2).sum(axis=1))
    return centers


class KdeModel:
    """Gaussian-kernel density estimate with isotropic bandwidth."""

    def __init__(self, samples, bandwidth: float):
        s = np.asarray(samples, dtype=float)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        if s.shape[0] < 1:
            raise ValueError("need at least one sample")
        if bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        self.samples = s
        self.bandwidth = float(bandwidth)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def _log_kernel_terms(self, pts):
        # (m, n) matrix of -||x - x_i||^2 / (2 sigma^2)
        d2 = (
            (pts ** 2).sum(axis=1)[:, None]
            - 2.0 * pts @ self.samples.T
            + (self.samples ** 2).sum(axis=1)[None, :]
        )
        np.maximum(d2, 0.0, out=d2)
        return -d2 / (2.0 * self.bandwidth ** 2)

    def log_density(self, x):
        pts, single = _as_batch(x, self.dim)
        t = self._log_kernel_terms(pts)
        mx = t.max(axis=1)
        norm = -np.log(self.n_samples) - 0.5 * self.dim * (
            _LOG_2PI + 2.0 * np.log(self.bandwidth)
        )
        out = norm + mx + np.log(np.sum(np.exp(t - mx[:, None]), axis=1))
        return float(out[0]) if single else out

    def score(self, x):
        pts, single = _as_batch(x, self.dim)
        t = self._log_kernel_terms(pts)
        mx = t.max(axis=1, keepdims=True)
        w = np.exp(t - mx)
        w /= w.sum(axis=1, keepdims=True)
        weighted_mean = w @ self.samples
        out = -(pts - weighted_mean) / self.bandwidth ** 2
        return out[0] if single else out

    def kernel_arrays(self):
        """Mixture-array view (one isotropic component per sample).

        Returns None when materializing per-sample factors would be
        wasteful; callers then fall back to the generic score path.
        """
        n, D = self.samples.shape
        if n * D * D > 20_000_000:
            return None
        log_w = np.full(n, -np.log(n))
        prec = np.tile(np.eye(D) / self.bandwidth, (n, 1, 1))
        log_det = np.full(n, -D * np.log(self.bandwidth))
        return (log_w, self.samples, prec, log_det)


class NnDensityField:
    """Unnormalized nearest-neighbor density over a fixed sample.

    log p(X_l) = -d * log(min_{m != l} ||X_l - X_m||) up to an additive
    constant (the proportionality constant is omitted; shortest-path
    weighting never needs it).
    """

    def __init__(self, data, intrinsic_dim: int):
        X = np.asarray(data, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("need at least two points of shape (n, D)")
        if intrinsic_dim < 1:
            raise ValueError("intrinsic_dim must be >= 1")
        self.data = X
        self.intrinsic_dim = int(intrinsic_dim)
        tree = cKDTree(X)
        dd, _ = tree.query(X, k=2, workers=-1)
        self._nn_dist = dd[:, 1]

    @property
    def n_points(self) -> int:
        return self.data.shape[0]

    def log_density_at(self, index: int) -> float:
        d = self._nn_dist[index]
        if d <= 0:
            raise ValueError(f"degenerate nearest neighbor at index {int(index)}")
        return -self.intrinsic_dim * float(np.log(d))

    def node_log_densities(self):
        if np.any(self._nn_dist <= 0):
            bad = int(np.argmin(self._nn_dist))
            raise ValueError(f"degenerate nearest neighbor at index {bad}")
        return -self.intrinsic_dim * np.log(self._nn_dist)


def generalized_gaussian_score(x, alpha: float):
    """Score of p(x) proportional to exp(-||x||^alpha / alpha): -||x||^(a-2) x."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = arr.reshape(1, -1) if single else arr
    r = np.linalg.norm(pts, axis=1)
    if alpha < 2 and np.any(r == 0):
        raise ValueError("score singular at origin")
    with np.errstate(divide="ignore"):
        factor = np.where(r > 0, r ** (alpha - 2.0), 1.0 if alpha == 2 else 0.0)
    out = -factor[:, None] * pts
    return out[0] if single else out


class GeneralizedGaussian:
    """Density proportional to exp(-||x||^alpha / alpha), normalized."""

    def __init__(self, alpha: float, dim: int):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = float(alpha)
        self.dim = int(dim)
        D, a = self.dim, self.alpha
        log_surface = np.log(2.0) + 0.5 * D * np.log(np.pi) - gammaln(0.5 * D)
        self._log_norm = log_surface + (D / a - 1.0) * np.log(a) + gammaln(D / a)

    def log_density(self, x):
        pts, single = _as_batch(x, self.dim)
        r = np.linalg.norm(pts, axis=1)
        out = -(r ** self.alpha) / self.alpha - self._log_norm
        return float(out[0]) if single else out

    def score(self, x):
        return generalized_gaussian_score(x, self.alpha)

    def sample(self, n: int, rng: Rng):
        """Radial law: ||x||^alpha / alpha ~ Gamma(D / alpha, 1)."""
        gen = rng.generator
        g = gen.gamma(self.dim / self.alpha, 1.0, size=n)
        r = (self.alpha * g) ** (1.0 / self.alpha)
        dirs = gen.standard_normal((n, self.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return r[:, None] * dirs


def student_t_score(x, nu: float, dim: int):
    """Score of the multivariate Student-t: -(nu + D) / (nu + ||x||^2) x."""
    pts, single = _as_batch(x, dim)
    r2 = (pts ** 2).sum(axis=1)
    out = -((nu + dim) / (nu + r2))[:, None] * pts
    return out[0] if single else out


class StudentT:
    """Multivariate Student-t with identity scale, nu > 2 degrees of freedom."""

    def __init__(self, nu: float, dim: int):
        if nu <= 2:
            raise ValueError("nu must exceed 2")
        self.nu = float(nu)
        self.dim = int(dim)
        D, nu_ = self.dim, self.nu
        self._log_norm = (
            gammaln(0.5 * (nu_ + D))
            - gammaln(0.5 * nu_)
            - 0.5 * D * np.log(nu_ * np.pi)
        )

    def log_density(self, x):
        pts, single = _as_batch(x, self.dim)
        r2 = (pts ** 2).sum(axis=1)
        out = self._log_norm - 0.5 * (self.nu + self.dim) * np.log1p(r2 / self.nu)
        return float(out[0]) if single else out

    def score(self, x):
        return student_t_score(x, self.nu, self.dim)
