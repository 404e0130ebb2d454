"""Covariance functions: classic kernels, NNGP kernels and Gram assembly.

NNGP kernels follow the layer recursion of a fully connected network whose
weights have variance ``sigma_w2 / fan_in`` and biases ``sigma_b2``. The
input layer gives ``k0(x, x') = sigma_b2 + sigma_w2 * x.x' / d`` and each of
the ``depth`` hidden layers maps the 2x2 covariance of the previous
pre-activations through the activation's expectation. Where that expectation
has no closed form, :func:`k_nngp_mc` estimates it by sampling.
"""

from __future__ import annotations

import functools
import logging
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import special

from .rng import array_digest, make_rng

log = logging.getLogger(__name__)

FAMILIES = (
    "rbf",
    "ess",
    "nngp-relu",
    "nngp-erf",
    "nngp-cosine-1l",
    "nngp-rbfnet-1l",
    "nngp-mc",
)
MC_ACTIVATIONS = ("relu", "erf", "tanh", "cos", "linear")

# Rounding at theta ~ 0 routinely pushes arccos/arcsin arguments just past 1.
CLAMP_TOL = 1e-9


class KernelError(ArithmeticError):
    """A kernel evaluation produced an invalid intermediate."""


class KernelEvaluationError(KernelError):
    def __init__(self, i, j, cause):
        super().__init__(f"kernel evaluation failed at pair ({i}, {j}): {cause}")
        self.pair = (i, j)
        self.cause = cause


@dataclass(frozen=True)
class KernelSpec:
    """Description of a covariance function.

    ``depth`` counts hidden layers of the corresponding network;
    ``sigma_g2``/``sigma_mu2`` parametrise the RBF-network kernel and
    ``activation``/``n_mc``/``mc_seed`` the Monte-Carlo estimator.
    """

    family: str = "rbf"
    depth: int = 1
    sigma_w2: float = 1.0
    sigma_b2: float = 1.0
    length_scale: float = 1.0
    period: float = 2.0 * np.pi
    sigma_g2: float = 1.0
    sigma_mu2: float = 1.0
    activation: str = "relu"
    n_mc: int = 10_000
    mc_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if not self.sigma_w2 > 0:
            raise ValueError("sigma_w2 must be positive")
        if not self.sigma_b2 >= 0:
            raise ValueError("sigma_b2 must be non-negative")
        if not (self.length_scale > 0 and self.period > 0):
            raise ValueError("length_scale and period must be positive")
        if not (self.sigma_g2 > 0 and self.sigma_mu2 > 0):
            raise ValueError("sigma_g2 and sigma_mu2 must be positive")
        if self.depth < 1 or self.n_mc < 1:
            raise ValueError("depth and n_mc must be at least 1")
        if self.family in ("nngp-cosine-1l", "nngp-rbfnet-1l") and self.depth != 1:
            raise ValueError(f"{self.family} only has a single-hidden-layer closed form")
        if self.activation not in MC_ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def make(cls, family: str, **kw) -> "KernelSpec":
        """Build a spec with family-specific defaults (``sigma_w2=200`` for RBF networks)."""
        if family == "nngp-rbfnet-1l":
            kw.setdefault("sigma_w2", 200.0)
        return cls(family=family, **kw)

    def replace(self, **kw) -> "KernelSpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# scalar kernels

def _vec(x):
    return np.atleast_1d(np.asarray(x, dtype=np.float64))


def k_rbf(x, x2, length_scale: float = 1.0) -> float:
    x, x2 = _vec(x), _vec(x2)
    return float(np.exp(-np.sum((x - x2) ** 2) / (2.0 * length_scale ** 2)))


def k_ess(x, x2, length_scale: float = 1.0, period: float = 2.0 * np.pi) -> float:
    """Exp-sine-squared kernel ``exp(-2 sum_j sin^2(pi (x_j-x'_j) / p) / l^2)``.

    In one dimension this is the usual ``exp(-2 sin^2(pi |x-x'| / p) / l^2)``.
    Applying the sine to the Euclidean distance instead is not positive
    definite for d >= 2, so higher dimensions use the per-axis product.
    """
    s = np.sum(np.sin(np.pi * (_vec(x) - _vec(x2)) / period) ** 2)
    return float(np.exp(-2.0 * s / length_scale ** 2))


def k_base(x, x2, sigma_w2: float = 1.0, sigma_b2: float = 1.0, d: int | None = None) -> float:
    x, x2 = _vec(x), _vec(x2)
    d = x.size if d is None else d
    return float(sigma_b2 + sigma_w2 * np.dot(x, x2) / d)


def k_nngp_relu(x, x2, spec: KernelSpec) -> float:
    return _pair(spec.replace(family="nngp-relu"), x, x2)


def k_nngp_erf(x, x2, spec: KernelSpec) -> float:
    return _pair(spec.replace(family="nngp-erf"), x, x2)


def k_nngp_cosine_1l(x, x2, spec: KernelSpec) -> float:
    return _pair(spec.replace(family="nngp-cosine-1l"), x, x2)


def k_nngp_rbfnet_1l(x, x2, spec: KernelSpec) -> float:
    return _pair(spec.replace(family="nngp-rbfnet-1l"), x, x2)


def k_nngp_mc(x, x2, spec: KernelSpec, return_se: bool = False):
    """Monte-Carlo NNGP kernel value for one input pair.

    Every pair reuses the same standard-normal draws for a given layer
    (common random numbers seeded by ``spec.mc_seed``), mapped through the
    Cholesky factor of the pair's 2x2 covariance. Independent draws per pair
    leave O(1/sqrt(N)) noise in every Gram entry, which makes the Gram
    indefinite well beyond any small noise jitter; shared draws keep the
    errors smooth in the inputs. Each value stays an unbiased estimate of
    the layer expectation. With ``return_se`` the standard error of the
    final layer's sample mean is returned as well.
    """
    x, x2 = _vec(x), _vec(x2)
    if tuple(x2) < tuple(x):
        x, x2 = x2, x
    d = x.size
    k11 = spec.sigma_b2 + spec.sigma_w2 * np.dot(x, x) / d
    k22 = spec.sigma_b2 + spec.sigma_w2 * np.dot(x2, x2) / d
    k12 = spec.sigma_b2 + spec.sigma_w2 * np.dot(x, x2) / d
    se = 0.0
    for layer in range(spec.depth):
        Z = mc_draws(spec.mc_seed, layer, spec.n_mc)
        m12, m11, m22, s12 = mc_layer_moments(k11, k12, k22, spec.activation, Z)
        k11 = spec.sigma_b2 + spec.sigma_w2 * m11
        k22 = spec.sigma_b2 + spec.sigma_w2 * m22
        k12 = spec.sigma_b2 + spec.sigma_w2 * m12
        se = spec.sigma_w2 * s12
    return (float(k12), float(se)) if return_se else float(k12)


@functools.lru_cache(maxsize=8)
def mc_draws(seed: int, layer: int, n: int) -> np.ndarray:
    """Read-only (n, 2) standard normals shared by all pairs at one layer."""
    Z = make_rng(seed, layer).standard_normal((n, 2))
    Z.flags.writeable = False
    return Z


def activation_fn(name: str):
    if name == "relu":
        return lambda u: np.maximum(u, 0.0)
    if name == "erf":
        return special.erf
    if name == "tanh":
        return np.tanh
    if name == "cos":
        return np.cos
    if name == "linear":
        return lambda u: u
    raise ValueError(f"unknown activation {name!r}")


def mc_layer_moments(k11, k12, k22, activation: str, Z: np.ndarray):
    """Sample-average ``E[h(u)h(v)], E[h(u)^2], E[h(v)^2]`` for (u, v) ~ N(0, K).

    ``Z`` holds standard-normal pairs, mapped by the Cholesky factor of K.
    Returns the three means plus the standard error of the cross moment.
    """
    C = np.array([k11, k12, k22], dtype=np.float64)
    if not np.all(np.isfinite(C)):
        raise KernelError("non-finite layer covariance")
    if k11 < 0 or k22 < 0 or k12 * k12 > k11 * k22 * (1 + CLAMP_TOL) + CLAMP_TOL:
        lam = np.linalg.eigvalsh(np.array([[k11, k12], [k12, k22]]))
        raise KernelError(f"layer covariance not PSD (eigenvalue {lam[0]:.3e})")
    s1, s2 = np.sqrt(k11), np.sqrt(k22)
    r = float(np.clip(k12 / (s1 * s2), -1.0, 1.0)) if s1 > 0 and s2 > 0 else 0.0
    u = s1 * Z[:, 0]
    v = s2 * (r * Z[:, 0] + np.sqrt(1.0 - r * r) * Z[:, 1])
    h = activation_fn(activation)
    hu, hv = h(u), h(v)
    prod = hu * hv
    n = Z.shape[0]
    se = prod.std(ddof=1) / np.sqrt(n) if n > 1 else np.inf
    return prod.mean(), np.mean(hu * hu), np.mean(hv * hv), se


# --------------------------------------------------------------------------
# vectorised evaluation

def _clamp_unit(c, what):
    if not np.all(np.isfinite(c)):
        raise KernelError(f"non-finite {what} argument")
    if np.any(np.abs(c) > 1.0 + CLAMP_TOL):
        raise KernelError(f"{what} argument outside [-1, 1] by {np.abs(c).max() - 1.0:.3e}")
    return np.clip(c, -1.0, 1.0)


def _relu_step(spec, K, d1, d2):
    norms = np.sqrt(np.multiply.outer(d1, d2))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(norms > 0, K / np.where(norms > 0, norms, 1.0), 1.0)
    theta = np.arccos(_clamp_unit(c, "arccos"))
    J = np.sin(theta) + (np.pi - theta) * np.cos(theta)
    K = spec.sigma_b2 + spec.sigma_w2 / (2.0 * np.pi) * norms * J
    return K, spec.sigma_b2 + 0.5 * spec.sigma_w2 * d1, spec.sigma_b2 + 0.5 * spec.sigma_w2 * d2


def _erf_step(spec, K, d1, d2):
    den = np.sqrt(np.multiply.outer(1.0 + 2.0 * d1, 1.0 + 2.0 * d2))
    arg = _clamp_unit(2.0 * K / den, "arcsin")
    K = spec.sigma_b2 + spec.sigma_w2 * (2.0 / np.pi) * np.arcsin(arg)

    def diag(dd):
        return spec.sigma_b2 + spec.sigma_w2 * (2.0 / np.pi) * np.arcsin(2.0 * dd / (1.0 + 2.0 * dd))
    return K, diag(d1), diag(d2)


def _sqdist(X1, X2):
    d = (np.sum(X1 ** 2, 1)[:, None] + np.sum(X2 ** 2, 1)[None, :] - 2.0 * X1 @ X2.T)
    return np.maximum(d, 0.0)


def _as_matrix(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def cross(spec: KernelSpec, X1, X2) -> np.ndarray:
    """Kernel matrix ``K[i, j] = k(X1[i], X2[j])``."""
    X1, X2 = _as_matrix(X1), _as_matrix(X2)
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    d = X1.shape[1]
    f = spec.family
    if f == "rbf":
        return np.exp(-_sqdist(X1, X2) / (2.0 * spec.length_scale ** 2))
    if f == "ess":
        s = np.zeros((X1.shape[0], X2.shape[0]))
        for j in range(d):
            s += np.sin(np.pi * (X1[:, j, None] - X2[None, :, j]) / spec.period) ** 2
        return np.exp(-2.0 * s / spec.length_scale ** 2)
    if f == "nngp-cosine-1l":
        sw, sb = spec.sigma_w2, spec.sigma_b2
        minus = _sqdist(X1, X2)
        plus = _sqdist(X1, -X2)
        return sb + 0.5 * sw * (np.exp(-sw * minus / (2.0 * d)) + np.exp(-sw * plus / (2.0 * d) - 2.0 * sb))
    if f == "nngp-rbfnet-1l":
        g2, m2 = spec.sigma_g2, spec.sigma_mu2
        e2 = 1.0 / (2.0 / g2 + 1.0 / m2)
        s2 = 2.0 * g2 + g2 ** 2 / m2
        mm2 = 2.0 * m2 + g2
        scale = spec.sigma_w2 * (np.sqrt(e2 / m2)) ** d
        n1 = np.sum(X1 ** 2, 1)[:, None]
        n2 = np.sum(X2 ** 2, 1)[None, :]
        return spec.sigma_b2 + scale * np.exp(-n1 / (2 * mm2) - _sqdist(X1, X2) / (2 * s2) - n2 / (2 * mm2))
    if f == "nngp-mc":
        K = np.empty((X1.shape[0], X2.shape[0]))
        for i in range(X1.shape[0]):
            for j in range(X2.shape[0]):
                try:
                    K[i, j] = k_nngp_mc(X1[i], X2[j], spec)
                except KernelError as e:
                    raise KernelEvaluationError(i, j, e) from e
        return K
    step = _relu_step if f == "nngp-relu" else _erf_step
    K = spec.sigma_b2 + spec.sigma_w2 * (X1 @ X2.T) / d
    d1 = spec.sigma_b2 + spec.sigma_w2 * np.sum(X1 ** 2, 1) / d
    d2 = spec.sigma_b2 + spec.sigma_w2 * np.sum(X2 ** 2, 1) / d
    for _ in range(spec.depth):
        K, d1, d2 = step(spec, K, d1, d2)
    if not np.all(np.isfinite(K)):
        raise KernelError("non-finite kernel value")
    return K


def diag(spec: KernelSpec, X) -> np.ndarray:
    """Prior variances ``k(x, x)`` for each row of X."""
    X = _as_matrix(X)
    f = spec.family
    if f in ("rbf", "ess"):
        return np.ones(X.shape[0])
    if f == "nngp-mc":
        return np.array([k_nngp_mc(x, x, spec) for x in X])
    if f in ("nngp-relu", "nngp-erf"):
        d = X.shape[1]
        dd = spec.sigma_b2 + spec.sigma_w2 * np.sum(X ** 2, 1) / d
        for _ in range(spec.depth):
            if f == "nngp-relu":
                dd = spec.sigma_b2 + 0.5 * spec.sigma_w2 * dd
            else:
                dd = spec.sigma_b2 + spec.sigma_w2 * (2.0 / np.pi) * np.arcsin(2.0 * dd / (1.0 + 2.0 * dd))
        return dd
    d = X.shape[1]
    sq = np.sum(X ** 2, 1)
    if f == "nngp-cosine-1l":
        sw, sb = spec.sigma_w2, spec.sigma_b2
        return sb + 0.5 * sw * (1.0 + np.exp(-sw * 4.0 * sq / (2.0 * d) - 2.0 * sb))
    if f == "nngp-rbfnet-1l":
        g2, m2 = spec.sigma_g2, spec.sigma_mu2
        e2 = 1.0 / (2.0 / g2 + 1.0 / m2)
        scale = spec.sigma_w2 * (np.sqrt(e2 / m2)) ** d
        return spec.sigma_b2 + scale * np.exp(-sq / (2.0 * m2 + g2))
    return np.array([cross(spec, x[None], x[None])[0, 0] for x in X])


def _pair(spec, x, x2):
    x, x2 = _vec(x), _vec(x2)
    return float(cross(spec, x[None], x2[None])[0, 0])


def evaluate(spec: KernelSpec, x, x2) -> float:
    """Kernel value for a single pair, dispatching on ``spec.family``."""
    if spec.family == "nngp-mc":
        return k_nngp_mc(x, x2, spec)
    return _pair(spec, x, x2)


# --------------------------------------------------------------------------
# Gram matrices

@dataclass
class GramMatrix:
    values: np.ndarray
    spec: KernelSpec | None = None
    provenance: dict = field(default_factory=dict)
    clamp: float = 0.0

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path):
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")

    def save(self, path):
        save_matrix(path, self.values)

    @classmethod
    def load(cls, path) -> "GramMatrix":
        return cls(load_matrix(path))


def _locate_failure(spec, X1, X2, err):
    for i in range(X1.shape[0]):
        for j in range(X2.shape[0]):
            try:
                v = evaluate(spec, X1[i], X2[j])
            except KernelError as e:
                return KernelEvaluationError(i, j, e)
            if not np.isfinite(v):
                return KernelEvaluationError(i, j, KernelError("non-finite value"))
    return err


def gram(spec: KernelSpec, X, X2=None, psd_repair: bool = False) -> GramMatrix:
    """Pairwise kernel values on X (square) or between X and X2 (cross).

    Square matrices are symmetrised. With ``psd_repair`` negative
    eigenvalues are clamped to zero and the largest clamp recorded.
    """
    X = _as_matrix(X)
    square = X2 is None
    X2m = X if square else _as_matrix(X2)
    try:
        K = cross(spec, X, X2m)
    except KernelEvaluationError:
        raise
    except KernelError as e:
        raise _locate_failure(spec, X, X2m, e) from e
    clamp = 0.0
    if square:
        K = 0.5 * (K + K.T)
        if psd_repair and K.size:
            lam, V = np.linalg.eigh(K)
            if lam[0] < 0:
                clamp = float(-lam[0])
                log.info("PSD repair clamped eigenvalues down to %.3e", lam[0])
                K = (V * np.clip(lam, 0.0, None)) @ V.T
                K = 0.5 * (K + K.T)
    prov = {"X": array_digest(X)} if square else {"X": array_digest(X), "X2": array_digest(X2m)}
    return GramMatrix(K, spec, prov, clamp)


# --------------------------------------------------------------------------
# binary matrix blocks: little-endian uint64 row count, then row-major float64

def save_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", M.shape[0]))
        fh.write(np.ascontiguousarray(M).tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: missing count header")
    rows = struct.unpack("<Q", raw[:8])[0]
    data = np.frombuffer(raw, dtype="<f8", offset=8)
    if rows == 0:
        return data.reshape(0, 0)
    if data.size % rows:
        raise ValueError(f"{path}: payload of {data.size} doubles is not divisible into {rows} rows")
    return data.reshape(rows, -1).astype(np.float64)
