"""Bounded surrogate loss, empirical risks and the Catoni PAC-Bayes bound."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import bnn, gp, hmc
from .datasets import RegressionDataset, gen_periodic_1d
from .kernels import KernelSpec

# GP likelihood variance used by the periodic bound protocol
PERIODIC_GP_NOISE_VAR = 0.3
PERIODIC_N_TEST = 200


@dataclass(frozen=True)
class PacConfig:
    delta: float = 0.05
    beta: float = 2.0
    sigma_l2: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.sigma_l2 > 0:
            raise ValueError("sigma_l2 must be positive")

    @property
    def bound_max(self) -> float:
        return 1.0 / (1.0 - math.exp(-self.beta))


@dataclass
class PacReport:
    kernel: str
    seed: int
    r_d: float
    r_bd: float
    kl: float
    bound: float
    log_ml: float
    test_mse: float

    COLUMNS = ("kernel", "seed", "r_d", "r_bd", "kl", "bound", "log_ml", "test_mse")

    def row(self):
        return [self.kernel, self.seed] + [repr(float(getattr(self, c))) for c in self.COLUMNS[2:]]


def l_exp(mean, y, sigma_l2: float = 1.0):
    """Surrogate loss ``1 - exp(-(mean - y)^2 / sigma_l2)``, bounded in [0, 1)."""
    if not sigma_l2 > 0:
        raise ValueError("sigma_l2 must be positive")
    r = np.asarray(mean, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return -np.expm1(-r * r / sigma_l2)


def expected_l_exp(mu, s, y, sigma_l2: float = 1.0):
    """E[l_exp(f, y)] for f ~ N(mu, s^2), in closed form."""
    mu, s, y = (np.asarray(a, dtype=np.float64) for a in (mu, s, y))
    denom = sigma_l2 + 2.0 * s * s
    return 1.0 - np.sqrt(sigma_l2 / denom) * np.exp(-(mu - y) ** 2 / denom)


def _marginals(post: gp.GPPosterior, X):
    p = gp.predict(post, X)
    return p.mean, p.std


def _sample_outputs(model, X):
    if isinstance(model, hmc.HmcTrace):
        return np.stack([bnn.forward(model.spec, w, X) for w in model.samples])
    F = np.asarray(model, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != np.asarray(X).shape[0]:
        raise ValueError("function samples must have shape (n_samples, n_points)")
    return F


def empirical_risk(model, data: RegressionDataset, cfg: PacConfig = PacConfig()) -> float:
    """Average expected surrogate loss under q.

    ``model`` is a ``GPPosterior`` (closed form over Gaussian marginals), an
    ``HmcTrace`` or an array of function values with one row per sample.
    """
    if isinstance(model, gp.GPPosterior):
        mu, s = _marginals(model, data.X)
        return float(np.mean(expected_l_exp(mu, s, data.y, cfg.sigma_l2)))
    F = _sample_outputs(model, data.X)
    return float(np.mean(l_exp(F, data.y[None, :], cfg.sigma_l2)))


def empirical_bayes_risk(model, data: RegressionDataset, cfg: PacConfig = PacConfig()) -> float:
    """Surrogate loss of the predictive-posterior mean, averaged over the data."""
    if isinstance(model, gp.GPPosterior):
        mu = _marginals(model, data.X)[0]
    else:
        mu = _sample_outputs(model, data.X).mean(axis=0)
    return float(np.mean(l_exp(mu, data.y, cfg.sigma_l2)))


def catoni_bound(r_d: float, kl: float, n: int, cfg: PacConfig = PacConfig()) -> float:
    if not 0.0 <= r_d <= 1.0:
        raise ValueError("empirical risk must lie in [0, 1]")
    if kl < 0 or n < 1:
        raise ValueError("need KL >= 0 and N >= 1")
    if math.isinf(kl):
        return cfg.bound_max
    return cfg.bound_max * -math.expm1(-cfg.beta * r_d - (kl + math.log(1.0 / cfg.delta)) / n)


def report(post: gp.GPPosterior, data: RegressionDataset, test: RegressionDataset | None = None,
           cfg: PacConfig = PacConfig(), kernel: str = "", seed: int = 0) -> PacReport:
    r_d = empirical_risk(post, data, cfg)
    kl = gp.kl_posterior_prior(post)
    mse = float("nan")
    if test is not None:
        mse = float(np.mean((gp.predict(post, test.X).mean - test.y) ** 2))
    return PacReport(kernel or post.spec.family, seed, r_d, empirical_bayes_risk(post, data, cfg), kl,
                     catoni_bound(r_d, kl, data.n, cfg), gp.log_marginal_likelihood(post), mse)


def periodic_run(spec: KernelSpec, seed: int, cfg: PacConfig = PacConfig(),
                 noise_var: float = PERIODIC_GP_NOISE_VAR, n: int = 35,
                 n_test: int = PERIODIC_N_TEST, noise_std: float | None = None) -> PacReport:
    """One seed of the periodic bound comparison.

    The withheld test set is an independent draw from the same inputs, scored
    against the noiseless target.
    """
    kw = {} if noise_std is None else {"noise_std": noise_std}
    data = gen_periodic_1d(seed, n, **kw)
    test = gen_periodic_1d(seed, n_test, noise_std=0.0, stream=1)
    post = gp.fit(spec, data.X, data.y, noise_var)
    return report(post, data, test, cfg, spec.family, seed)


def write_reports(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PacReport.COLUMNS)
        for r in reports:
            w.writerow(r.row())


def read_reports(path) -> list[PacReport]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [PacReport(r["kernel"], int(r["seed"]), *(float(r[c]) for c in PacReport.COLUMNS[2:]))
            for r in rows]


def summarize(reports) -> dict:
    """Mean and sample std of every numeric column, grouped by kernel."""
    out = {}
    for k in dict.fromkeys(r.kernel for r in reports):
        rows = [r for r in reports if r.kernel == k]
        stats = {}
        for c in PacReport.COLUMNS[2:]:
            v = np.array([getattr(r, c) for r in rows])
            stats[c] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0)
        out[k] = stats
    return out


def format_summary(summary: dict) -> str:
    cols = PacReport.COLUMNS[2:]
    lines = ["kernel," + ",".join(cols)]
    for k, stats in summary.items():
        lines.append(k + "," + ",".join(f"{stats[c][0]:.3f}+-{stats[c][1]:.3f}" for c in cols))
    return "\n".join(lines)
