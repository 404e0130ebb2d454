"""Finite-width fully connected networks: forward pass, priors and likelihoods.

A weight vector is flat. For an MLP with widths ``[d, H_1, ..., H_L, 1]``
each layer contributes its weight matrix (``fan_out x fan_in``, row-major)
followed by its bias vector. For the RBF-unit network
``f(x) = sum_j w_j exp(-|x - mu_j|^2 / (2 sigma_g2)) + b`` the layout is
``[mu (H x d), w (H), b]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ._backend import core
from ._core_py import ACT_COS, ACT_ERF, ACT_LINEAR, ACT_RELU, ACT_TANH, LIK_GAUSSIAN, LIK_LOGISTIC
from .datasets import RegressionDataset

ACTIVATIONS = {"relu": ACT_RELU, "tanh": ACT_TANH, "erf": ACT_ERF, "cos": ACT_COS,
               "linear": ACT_LINEAR, "rbf-unit": -1}
PRIOR_MODES = ("width-aware", "standard")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple = (2, 100, 1)
    activation: str = "relu"
    prior: str = "width-aware"
    sigma_w2: float = 1.0
    sigma_b2: float = 1.0
    sigma_g2: float = 1.0
    sigma_mu2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"invalid widths {self.widths}")
        if self.widths[-1] != 1:
            raise ValueError("networks have a single output unit")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.activation == "rbf-unit" and len(self.widths) != 3:
            raise ValueError("RBF-unit networks have exactly one hidden layer")
        if self.prior not in PRIOR_MODES:
            raise ValueError(f"prior must be one of {PRIOR_MODES}")
        if not (self.sigma_w2 > 0 and self.sigma_b2 > 0 and self.sigma_g2 > 0 and self.sigma_mu2 > 0):
            raise ValueError("prior variances must be positive")

    @classmethod
    def mlp(cls, d: int, hidden, activation: str = "relu", **kw) -> "MlpSpec":
        hidden = [hidden] if np.isscalar(hidden) else list(hidden)
        return cls(widths=(d, *hidden, 1), activation=activation, **kw)

    @property
    def is_rbf(self) -> bool:
        return self.activation == "rbf-unit"

    @property
    def d(self) -> int:
        return self.widths[0]

    @property
    def n_params(self) -> int:
        if self.is_rbf:
            H, d = self.widths[1], self.widths[0]
            return H * d + H + 1
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["widths"] = list(self.widths)
        return out


@dataclass(frozen=True)
class Likelihood:
    """Gaussian (``noise_var``) or logistic likelihood.

    The logistic mass is ``s(sign * y * f)`` with labels in {-1, +1};
    ``sign=-1`` is the literal ``s(-y f)`` form, ``sign=+1`` the
    conventional one.
    """

    kind: str = "gaussian"
    noise_var: float = 0.02
    sign: float = -1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "logistic"):
            raise ValueError(f"unknown likelihood {self.kind!r}")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if self.sign not in (-1.0, 1.0):
            raise ValueError("sign must be -1 or +1")

    @property
    def code(self) -> int:
        return LIK_GAUSSIAN if self.kind == "gaussian" else LIK_LOGISTIC


def prior_variances(spec: MlpSpec) -> np.ndarray:
    """Per-parameter prior variance, laid out like the weight vector."""
    if spec.is_rbf:
        H, d = spec.widths[1], spec.widths[0]
        wv = spec.sigma_w2 / H if spec.prior == "width-aware" else spec.sigma_w2
        return np.concatenate([np.full(H * d, spec.sigma_mu2), np.full(H, wv), [spec.sigma_b2]])
    parts = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        wv = spec.sigma_w2 / fan_in if spec.prior == "width-aware" else spec.sigma_w2
        parts += [np.full(fan_in * fan_out, wv), np.full(fan_out, spec.sigma_b2)]
    return np.concatenate(parts)


def sample_prior(spec: MlpSpec, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    sd = np.sqrt(prior_variances(spec))
    shape = sd.shape if size is None else (size, sd.size)
    return rng.standard_normal(shape) * sd


def _widths(spec):
    return np.asarray(spec.widths, dtype=np.int64)


def _check(spec, w):
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.shape != (spec.n_params,):
        raise ValueError(f"weight vector has length {w.size}, expected {spec.n_params}")
    return w


def _inputs(spec, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None] if spec.d == 1 else X[None, :]
    if X.shape[1] != spec.d:
        raise ValueError(f"inputs have dimension {X.shape[1]}, network expects {spec.d}")
    return X


def forward(spec: MlpSpec, w, X) -> np.ndarray:
    """Network outputs f(X; w), one scalar per row of X."""
    w, X = _check(spec, w), _inputs(spec, X)
    if spec.is_rbf:
        return np.asarray(core.rbfnet_forward(w, spec.widths[1], spec.sigma_g2, X))
    return np.asarray(core.mlp_forward(w, _widths(spec), ACTIVATIONS[spec.activation], X))


def log_prior(spec: MlpSpec, w) -> float:
    w = _check(spec, w)
    v = prior_variances(spec)
    return float(-0.5 * np.sum(w * w / v) - 0.5 * np.sum(np.log(2.0 * np.pi * v)))


def _labels_ok(lik, y):
    if lik.kind == "logistic" and not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("logistic likelihood requires labels in {-1, +1}")


def _loglik_grad(spec, w, X, y, lik):
    g = np.empty(spec.n_params)
    if spec.is_rbf:
        ll = core.rbfnet_loglik_grad(w, spec.widths[1], spec.sigma_g2, X, y, lik.code,
                                     lik.noise_var, lik.sign, g)
    else:
        ll = core.mlp_loglik_grad(w, _widths(spec), ACTIVATIONS[spec.activation], X, y,
                                  lik.code, lik.noise_var, lik.sign, g)
    return float(ll), g


def log_likelihood(spec: MlpSpec, w, data: RegressionDataset, lik: Likelihood = Likelihood()) -> float:
    w = _check(spec, w)
    if data.n == 0:
        return 0.0
    _labels_ok(lik, data.y)
    f = forward(spec, w, data.X)
    if lik.kind == "gaussian":
        r = data.y - f
        return float(-0.5 * np.sum(r * r) / lik.noise_var
                     - 0.5 * data.n * np.log(2.0 * np.pi * lik.noise_var))
    return float(-np.sum(np.logaddexp(0.0, -lik.sign * data.y * f)))


def grad_log_posterior(spec: MlpSpec, w, data: RegressionDataset | None,
                       lik: Likelihood = Likelihood()) -> np.ndarray:
    return log_posterior_and_grad(spec, w, data, lik)[1]


def log_posterior_and_grad(spec: MlpSpec, w, data: RegressionDataset | None,
                           lik: Likelihood = Likelihood()):
    """Unnormalised log posterior and its exact gradient."""
    w = _check(spec, w)
    v = prior_variances(spec)
    lp = -0.5 * np.sum(w * w / v) - 0.5 * np.sum(np.log(2.0 * np.pi * v))
    grad = -w / v
    if data is not None and data.n:
        _labels_ok(lik, data.y)
        X = _inputs(spec, data.X)
        ll, g = _loglik_grad(spec, w, X, np.ascontiguousarray(data.y), lik)
        lp += ll
        grad += g
    return float(lp), grad


class Posterior:
    """Callable ``w -> (log posterior, gradient)`` bound to one dataset.

    Inputs are converted once so the HMC inner loop only calls the core.
    """

    def __init__(self, spec: MlpSpec, data: RegressionDataset | None, lik: Likelihood = Likelihood()):
        self.spec, self.lik = spec, lik
        self.var = prior_variances(spec)
        self._norm = -0.5 * np.sum(np.log(2.0 * np.pi * self.var))
        self._widths = _widths(spec)
        self._act = ACTIVATIONS[spec.activation]
        if data is not None and data.n:
            _labels_ok(lik, data.y)
            self.X = _inputs(spec, data.X)
            self.y = np.ascontiguousarray(data.y, dtype=np.float64)
        else:
            self.X = None
        self._g = np.empty(spec.n_params)

    def __call__(self, w):
        lp = self._norm - 0.5 * np.dot(w * w, 1.0 / self.var)
        grad = -w / self.var
        if self.X is not None:
            lik, g = self.lik, self._g
            if self.spec.is_rbf:
                ll = core.rbfnet_loglik_grad(w, self.spec.widths[1], self.spec.sigma_g2, self.X,
                                             self.y, lik.code, lik.noise_var, lik.sign, g)
            else:
                ll = core.mlp_loglik_grad(w, self._widths, self._act, self.X, self.y, lik.code,
                                          lik.noise_var, lik.sign, g)
            lp += ll
            grad += g
        return lp, grad


# --------------------------------------------------------------------------
# weight snapshots: little-endian float64 rows plus a JSON sidecar

def save_weights(path, W, spec: MlpSpec, extra: dict | None = None):
    W = np.atleast_2d(np.asarray(W, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(W).tobytes())
    meta = {"mlp_spec": spec.to_dict(), "count": W.shape[0], "n_params": W.shape[1]}
    meta.update(extra or {})
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_weights(path):
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    spec = MlpSpec(**meta["mlp_spec"])
    raw = np.fromfile(path, dtype="<f8")
    return raw.reshape(meta["count"], meta["n_params"]).astype(np.float64), spec, meta
