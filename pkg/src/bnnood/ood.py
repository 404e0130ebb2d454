"""OOD scores, uncertainty fields, image-plane probes, Boltzmann sampling and replay."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.interpolate import RegularGridInterpolator

from . import gp, hmc
from .datasets import CL_DOMAIN, RegressionDataset
from .kernels import KernelSpec
from .rng import make_rng

_SAMPLE_STREAM = 11
_REPLAY_STREAM = 12
RINGS_BOUNDS = ((-20.0, 20.0), (-20.0, 20.0))
RINGS_RESOLUTION = (200, 200)
SIGMA2_CLIP = 1.0 - 1e-9


class RejectionError(RuntimeError):
    pass


class CollinearAnchorsError(ValueError):
    pass


# --------------------------------------------------------------------------
# scores

def auroc(scores_in, scores_out) -> float:
    """Probability that an OOD score exceeds an in-distribution score, ties counting one half."""
    a = np.asarray(scores_in, dtype=np.float64).ravel()
    b = np.asarray(scores_out, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("auroc needs nonempty score sets")
    ranks = stats.rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


def accuracy(means, labels) -> float:
    """Fraction of points where sign(mean) equals the +-1 label; a zero mean is wrong."""
    m = np.asarray(means, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    return float(np.mean(np.sign(m) == y))


# --------------------------------------------------------------------------
# fields

def axis_nodes(lo: float, hi: float, n: int) -> np.ndarray:
    # lo + span * i/(n-1): coincident nodes of nested grids come out bit-identical
    if n == 1:
        return np.array([float(lo)])
    return lo + (hi - lo) * (np.arange(n) / (n - 1))


@dataclass
class UncertaintyField:
    """sigma(f_*) on a regular 2D grid, stored row-major with y as the slow axis."""

    bounds: tuple
    resolution: tuple
    sigma: np.ndarray
    mean: np.ndarray | None = None

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(self.resolution[1], self.resolution[0])
        if self.mean is not None:
            self.mean = np.asarray(self.mean, dtype=np.float64).reshape(self.sigma.shape)
        if np.any(self.sigma < 0):
            raise ValueError("standard deviations must be nonnegative")

    @property
    def xs(self):
        return axis_nodes(*self.bounds[0], self.resolution[0])

    @property
    def ys(self):
        return axis_nodes(*self.bounds[1], self.resolution[1])

    def points(self) -> np.ndarray:
        return grid_points(self.bounds, self.resolution)

    def argmin_point(self) -> np.ndarray:
        iy, ix = np.unravel_index(np.argmin(self.sigma), self.sigma.shape)
        return np.array([self.xs[ix], self.ys[iy]])

    def interpolator(self):
        return RegularGridInterpolator((self.ys, self.xs), self.sigma, bounds_error=False, fill_value=None)

    def to_csv(self, path):
        P = self.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "sigma"] + (["mean"] if self.mean is not None else []))
            s, m = self.sigma.ravel(), None if self.mean is None else self.mean.ravel()
            for i, (px, py) in enumerate(P):
                row = [repr(float(px)), repr(float(py)), repr(float(s[i]))]
                if m is not None:
                    row.append(repr(float(m[i])))
                w.writerow(row)

    def to_png(self, path, cmap: str = "gray"):
        """Heatmap normalised to the field's own min/max (recorded in ``path.json``).

        Image row 0 is the top (largest y).
        """
        from PIL import Image
        lo, hi = float(self.sigma.min()), float(self.sigma.max())
        z = (self.sigma - lo) / (hi - lo) if hi > lo else np.zeros_like(self.sigma)
        z = np.flipud(z)
        if cmap == "gray":
            img = Image.fromarray(np.round(255 * z).astype(np.uint8), mode="L")
        else:
            from matplotlib import colormaps
            rgba = colormaps[cmap](z, bytes=True)
            img = Image.fromarray(np.ascontiguousarray(rgba[..., :3]), mode="RGB")
        img.save(path, format="PNG")
        with open(str(path) + ".json", "w") as fh:
            json.dump({"min": lo, "max": hi, "cmap": cmap, "bounds": [list(b) for b in self.bounds],
                       "resolution": list(self.resolution)}, fh, indent=2)


def grid_points(bounds, resolution) -> np.ndarray:
    xs = axis_nodes(*bounds[0], resolution[0])
    ys = axis_nodes(*bounds[1], resolution[1])
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def default_bounds(X, factor: float = 3.0):
    """Bounding box of X scaled by ``factor`` about its centre, per axis."""
    X = np.asarray(X, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    c, h = (lo + hi) / 2, (hi - lo) / 2
    return tuple((float(c[j] - factor * h[j]), float(c[j] + factor * h[j])) for j in range(X.shape[1]))


def model_sigma(model, X, transform: str = "identity"):
    """Predictive (mean, sigma(f_*)) of a GP posterior or an HMC trace at X."""
    if isinstance(model, gp.GPPosterior):
        p = gp.predict(model, X)
        return p.mean, p.std
    if isinstance(model, hmc.HmcTrace):
        return hmc.disagreement(model, X, transform)
    raise TypeError(f"cannot score with {type(model).__name__}")


def uncertainty_grid(model, bounds, resolution=(51, 51), transform: str = "identity") -> UncertaintyField:
    P = grid_points(bounds, resolution)
    mean, sigma = model_sigma(model, P, transform)
    return UncertaintyField(tuple(tuple(map(float, b)) for b in bounds), tuple(resolution), sigma, mean)


# --------------------------------------------------------------------------
# 2D planes through image space

@dataclass
class PlaneEmbedding:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    def coords(self, X) -> np.ndarray:
        D = np.atleast_2d(X) - self.alpha
        return np.column_stack([D @ self.e1, D @ self.e2])

    def to_space(self, UV) -> np.ndarray:
        UV = np.atleast_2d(UV)
        return self.alpha + UV[:, :1] * self.e1 + UV[:, 1:2] * self.e2


def plane_embed(alpha, beta, gamma, tol: float = 1e-10) -> PlaneEmbedding:
    """Orthonormal frame of the plane through three images, origin at ``alpha``."""
    a, b, c = (np.asarray(v, dtype=np.float64).ravel() for v in (alpha, beta, gamma))
    u = b - a
    nu = np.linalg.norm(u)
    if nu <= tol:
        raise CollinearAnchorsError("alpha and beta coincide")
    e1 = u / nu
    v = c - a
    v = v - (v @ e1) * e1
    nv = np.linalg.norm(v)
    if nv <= tol * max(1.0, np.linalg.norm(c - a)):
        raise CollinearAnchorsError("anchors are collinear")
    return PlaneEmbedding(a, b, c, e1, v / nv)


def plane_grid(emb: PlaneEmbedding, model, half_widths, resolution=(51, 51), center=None) -> UncertaintyField:
    """Score the plane on a grid in embedding coordinates (default centre: anchor centroid)."""
    if center is None:
        center = emb.coords(np.vstack([emb.alpha, emb.beta, emb.gamma])).mean(axis=0)
    hw = np.broadcast_to(np.asarray(half_widths, dtype=np.float64), (2,))
    bounds = tuple((float(center[j] - hw[j]), float(center[j] + hw[j])) for j in range(2))
    P = grid_points(bounds, resolution)
    mean, sigma = model_sigma(model, emb.to_space(P))
    return UncertaintyField(bounds, tuple(resolution), sigma, mean)


def most_uncertain(sigma) -> int:
    """Index of the highest-uncertainty sample (anchor selector)."""
    return int(np.argmax(np.asarray(sigma)))


def nearest_pair(train, gamma) -> tuple[int, int]:
    """Indices of the two training rows closest to ``gamma`` in Euclidean distance."""
    d = np.linalg.norm(np.asarray(train, dtype=np.float64) - np.ravel(gamma), axis=1)
    i, j = np.argsort(d, kind="stable")[:2]
    return int(i), int(j)


# --------------------------------------------------------------------------
# Boltzmann rejection sampling

def energy_from_sigma(sigma, kind: str = "sigma"):
    """``sigma`` itself, or ``-log(1 - sigma^2)`` with sigma^2 clipped below 1."""
    s = np.asarray(sigma, dtype=np.float64)
    if kind == "sigma":
        return s
    if kind == "neglog":
        return -np.log1p(-np.minimum(s * s, SIGMA2_CLIP))
    raise ValueError(f"unknown energy kind {kind!r}")


def make_energy(source, kind: str = "sigma"):
    """Turn a model, an UncertaintyField or a callable into a vectorised energy ``X -> E``."""
    if callable(source) and not isinstance(source, (gp.GPPosterior, hmc.HmcTrace)):
        return source
    if isinstance(source, UncertaintyField):
        interp = source.interpolator()
        return lambda X: energy_from_sigma(np.maximum(interp(np.asarray(X)[:, ::-1]), 0.0), kind)
    return lambda X: energy_from_sigma(model_sigma(source, X)[1], kind)


@dataclass
class SampleSet:
    points: np.ndarray
    proposals: int
    e_min: float
    temperature: float

    @property
    def acceptance_rate(self) -> float:
        return self.points.shape[0] / self.proposals

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{j}" for j in range(self.points.shape[1])])
            for p in self.points:
                w.writerow([repr(float(v)) for v in p])


def rejection_sample(source, bounds, n: int, temperature: float = 1.0, seed: int = 0,
                     kind: str = "sigma", probe_resolution: int = 101, batch: int = 65536,
                     min_rate: float = 1e-4, probe_cap: int = 1_000_000) -> SampleSet:
    """Draw ``n`` points from ``exp(-E(x)/T)`` restricted to a box.

    Proposals are uniform on the box and accepted with probability
    ``exp(-(E(x) - E_min)/T)``, where E_min is the minimum over a probe grid.
    Once ``probe_cap`` proposals have been spent, an acceptance rate below
    ``min_rate`` raises ``RejectionError``.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if n < 0:
        raise ValueError("n must be nonnegative")
    energy = make_energy(source, kind)
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    d = lo.size
    if d <= 2:
        axes = [axis_nodes(lo[j], hi[j], probe_resolution) for j in range(d)]
        probe = np.column_stack([g.ravel() for g in np.meshgrid(*axes)])
    else:
        probe = lo + (hi - lo) * make_rng(seed, _SAMPLE_STREAM, 1).uniform(size=(probe_resolution ** 2, d))
    e_min = float(np.min(energy(probe)))
    rng = make_rng(seed, _SAMPLE_STREAM)
    out, got, proposals = [], 0, 0
    while got < n:
        U = lo + (hi - lo) * rng.uniform(size=(batch, d))
        u = rng.uniform(size=batch)
        E = energy(U)
        keep = np.log(u) < -(E - e_min) / temperature
        acc = U[keep][: n - got]
        out.append(acc)
        got += acc.shape[0]
        proposals += batch
        if got < n and proposals >= probe_cap and got / proposals < min_rate:
            raise RejectionError(
                f"acceptance rate {got / proposals:.2e} after {proposals} proposals; "
                "try a larger temperature")
    pts = np.vstack(out) if out else np.zeros((0, d))
    return SampleSet(pts, max(proposals, 1), e_min, float(temperature))


# --------------------------------------------------------------------------
# continual learning with uncertainty-based replay

@dataclass
class ReplayResult:
    task1: gp.GPPosterior
    combined: gp.GPPosterior
    joint: gp.GPPosterior
    replay: RegressionDataset


CL_KERNEL = KernelSpec("nngp-cosine-1l", sigma_w2=10.0)
CL_REPLAY_FACTOR = 2


def cl_replay(task1: RegressionDataset, task2: RegressionDataset, spec: KernelSpec = CL_KERNEL,
              n_replay: int | None = None, noise_var: float = 0.02, temperature: float = 1.0,
              seed: int = 0, bounds=(CL_DOMAIN,), kind: str = "neglog") -> ReplayResult:
    """Fit task 1, replay from its low-uncertainty region, then fit replay plus task 2.

    Replay inputs come from rejection sampling on task 1's sigma(f_*); their
    targets are one joint draw from task 1's posterior predictive (noise
    included). ``joint`` is the reference fit on both tasks' real data.
    By default ``CL_REPLAY_FACTOR`` times as many replay points as task 1 holds.
    """
    post1 = gp.fit(spec, task1.X, task1.y, noise_var)
    n_replay = CL_REPLAY_FACTOR * task1.n if n_replay is None else n_replay
    if n_replay:
        Xr = rejection_sample(post1, bounds, n_replay, temperature, seed, kind).points
        pred = gp.predict(post1, Xr, full_cov=True)
        rng = make_rng(seed, _REPLAY_STREAM)
        C = pred.cov + noise_var * np.eye(n_replay)
        yr = rng.multivariate_normal(pred.mean, C, method="eigh")
    else:
        Xr, yr = np.zeros((0, task1.d)), np.zeros(0)
    replay = RegressionDataset(Xr, yr, {"name": "replay", "seed": seed})
    X = np.vstack([Xr, task2.X])
    y = np.concatenate([yr, task2.y])
    combined = gp.fit(spec, X, y, noise_var)
    joint = gp.fit(spec, np.vstack([task1.X, task2.X]), np.concatenate([task1.y, task2.y]), noise_var)
    return ReplayResult(post1, combined, joint, replay)


def replay_agreement(res: ReplayResult, n_grid: int = 200, bounds=CL_DOMAIN, k: float = 3.0) -> float:
    """Fraction of grid points where the combined mean is within k joint std of the joint mean."""
    xs = axis_nodes(*bounds, n_grid)[:, None]
    pj = gp.predict(res.joint, xs)
    pc = gp.predict(res.combined, xs)
    return float(np.mean(np.abs(pc.mean - pj.mean) <= k * pj.std))


# --------------------------------------------------------------------------
# SplitMNIST regression protocol

@dataclass
class SplitMnistResult:
    task: int
    acc_train: float
    acc_test: float
    auroc_split: float
    auroc_fashion: float | None


def splitmnist_eval(spec: KernelSpec, train, test, task: int, fashion=None,
                    n_train: int = 1000, noise_var: float = 0.02) -> SplitMnistResult:
    """GP regression on one digit pair, scored by accuracy and sigma(f_*)-based AUROC.

    In-distribution scores come from the task's test images; OOD scores from
    the test images of all other digits and, if given, FashionMNIST test images.
    """
    from .datasets import make_splitmnist_task, splitmnist_rest
    tr = make_splitmnist_task(train, task, n_train)
    te = make_splitmnist_task(test, task, None)
    post = gp.fit(spec, tr.X, tr.y, noise_var)
    p_tr = gp.predict(post, tr.X)
    p_te = gp.predict(post, te.X)
    s_rest = gp.predict(post, splitmnist_rest(test, task)).std
    au_f = None
    if fashion is not None:
        au_f = auroc(p_te.std, gp.predict(post, fashion.images).std)
    return SplitMnistResult(task, accuracy(p_tr.mean, tr.y), accuracy(p_te.mean, te.y),
                            auroc(p_te.std, s_rest), au_f)
