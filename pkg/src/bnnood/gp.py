"""Exact Gaussian-process regression with a zero mean function."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .kernels import KernelSpec, cross, diag, gram, load_matrix, save_matrix


class CholeskyError(np.linalg.LinAlgError):
    def __init__(self, min_eig):
        super().__init__(
            f"Cholesky factorisation of K + noise*I failed (smallest eigenvalue {min_eig:.3e})")
        self.min_eig = min_eig


@dataclass(frozen=True)
class GPPosterior:
    """Fitted posterior: training data, noise variance and the factor of K + noise*I.

    ``L`` is lower triangular and ``alpha = (K + noise*I)^{-1} y``.
    """

    spec: KernelSpec
    X: np.ndarray
    y: np.ndarray
    noise_var: float
    K: np.ndarray
    L: np.ndarray
    alpha: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def solve(self, B):
        """Apply ``(K + noise*I)^{-1}`` to B."""
        return linalg.cho_solve((self.L, True), B)

    def save_cholesky(self, path):
        save_matrix(path, self.L)


@dataclass
class PredictiveSummary:
    mean: np.ndarray
    std: np.ndarray
    cov: np.ndarray | None = None

    @property
    def var(self):
        return self.std ** 2

    def to_csv(self, path, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{j}" for j in range(X.shape[1])] + ["mean", "sigma"])
            for xi, m, s in zip(X, self.mean, self.std):
                w.writerow([repr(float(v)) for v in xi] + [repr(float(m)), repr(float(s))])


def fit(spec: KernelSpec, X, y, noise_var: float = 0.02, K=None) -> GPPosterior:
    """Condition a zero-mean GP prior on noisy observations.

    ``K`` may be a precomputed Gram matrix on X (e.g. a cached MC estimate).
    """
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on the number of points")
    n = y.shape[0]
    if K is None:
        K = gram(spec, X).values if n else np.zeros((0, 0))
    K = np.asarray(K, dtype=np.float64)
    A = K + noise_var * np.eye(n)
    try:
        L = linalg.cholesky(A, lower=True) if n else np.zeros((0, 0))
    except linalg.LinAlgError:
        raise CholeskyError(float(np.linalg.eigvalsh(A)[0])) from None
    alpha = linalg.cho_solve((L, True), y) if n else np.zeros(0)
    for a in (X, y, K, L, alpha):
        a.setflags(write=False)
    return GPPosterior(spec, X, y, float(noise_var), K, L, alpha)


def prior(spec: KernelSpec, d: int) -> GPPosterior:
    """The degenerate posterior with no observations."""
    return fit(spec, np.zeros((0, d)), np.zeros(0))


def predict(post: GPPosterior, Xs, full_cov: bool = False, batch: int = 4096) -> PredictiveSummary:
    """Posterior mean and standard deviation of f at the rows of Xs."""
    Xs = np.asarray(Xs, dtype=np.float64)
    if Xs.ndim == 1:
        Xs = Xs[:, None] if post.X.shape[1] == 1 else Xs[None, :]
    if Xs.shape[1] != post.X.shape[1]:
        raise ValueError(f"test inputs have dimension {Xs.shape[1]}, expected {post.X.shape[1]}")
    if full_cov:
        Ks = cross(post.spec, Xs, post.X)
        Kss = gram(post.spec, Xs).values
        mean = Ks @ post.alpha
        if post.n:
            V = linalg.solve_triangular(post.L, Ks.T, lower=True)
            C = Kss - V.T @ V
        else:
            C = Kss.copy()
        C = 0.5 * (C + C.T)
        return PredictiveSummary(mean, np.sqrt(np.clip(np.diag(C), 0.0, None)), C)
    means, vars_ = [], []
    for s in range(0, Xs.shape[0], batch):
        Xb = Xs[s:s + batch]
        kss = diag(post.spec, Xb)
        if post.n:
            Ks = cross(post.spec, Xb, post.X)
            V = linalg.solve_triangular(post.L, Ks.T, lower=True)
            means.append(Ks @ post.alpha)
            vars_.append(kss - np.sum(V * V, axis=0))
        else:
            means.append(np.zeros(Xb.shape[0]))
            vars_.append(kss)
    mean = np.concatenate(means) if means else np.zeros(0)
    var = np.concatenate(vars_) if vars_ else np.zeros(0)
    return PredictiveSummary(mean, np.sqrt(np.clip(var, 0.0, None)))


def log_marginal_likelihood(post: GPPosterior) -> float:
    n = post.n
    return float(-0.5 * post.y @ post.alpha - np.sum(np.log(np.diag(post.L)))
                 - 0.5 * n * np.log(2.0 * np.pi))


def kl_posterior_prior(post: GPPosterior) -> float:
    """KL divergence of the posterior over f at the training inputs from the prior N(0, K).

    With ``A = K + s2*I`` the posterior covariance is ``s2 * K A^{-1}`` and
    the mean ``K alpha``, so the divergence reduces to
    ``0.5 * [s2 tr(A^{-1}) + alpha' K alpha - n + log|A| - n log s2]``
    without ever inverting K.
    """
    n = post.n
    if n == 0:
        return 0.0
    s2 = post.noise_var
    Linv = linalg.solve_triangular(post.L, np.eye(n), lower=True)
    tr_Ainv = np.sum(Linv * Linv)
    logdet_A = 2.0 * np.sum(np.log(np.diag(post.L)))
    quad = post.alpha @ post.K @ post.alpha
    kl = 0.5 * (s2 * tr_Ainv + quad - n + logdet_A - n * np.log(s2))
    return float(max(kl, 0.0))


def variance_decomposition(post: GPPosterior, x_star):
    """Split the predictive variance at one input into prior and data terms.

    Returns ``(k(x*,x*), sum_i beta_i k(x*,x_i), beta)`` where
    ``beta = (K + s2*I)^{-1} k(X, x*)``.
    """
    xs = np.asarray(x_star, dtype=np.float64).reshape(1, -1)
    prior_term = float(diag(post.spec, xs)[0])
    if post.n == 0:
        return prior_term, 0.0, np.zeros(0)
    ks = cross(post.spec, post.X, xs)[:, 0]
    beta = post.solve(ks)
    return prior_term, float(beta @ ks), beta


def load_cholesky(path) -> np.ndarray:
    return load_matrix(path)
