"""Hamiltonian Monte Carlo over network weights.

Identity mass matrix, fresh standard-normal momenta per proposal and a fixed
step size. Each chain starts from its own prior draw and owns an RNG stream
keyed by ``(seed, chain index)``, so results do not depend on scheduling.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from . import bnn
from .rng import make_rng

log = logging.getLogger(__name__)

_HMC_STREAM = 7
LOW_ACCEPTANCE = 0.05


class HmcError(FloatingPointError):
    """The integrator reached a non-finite state."""


class LowAcceptanceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class HmcConfig:
    chains: int = 5
    steps: int = 5000
    leapfrog_steps: int = 50
    step_size: float = 1e-3
    burn_in: int = 1000
    n_retained: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.leapfrog_steps < 1 or self.chains < 1:
            raise ValueError("leapfrog_steps and chains must be at least 1")
        if not 0 <= self.burn_in < self.steps:
            raise ValueError("burn_in must lie in [0, steps)")
        if self.n_retained < self.chains:
            raise ValueError("n_retained must be at least the number of chains")
        if max(self.per_chain) > self.steps - self.burn_in:
            raise ValueError("not enough post-burn-in steps to retain the requested samples")

    @classmethod
    def for_width(cls, width: int, **kw) -> "HmcConfig":
        """Reference schedule: step size 1e-3 for narrow (<=5) and 1e-4 for wide nets."""
        kw.setdefault("step_size", 1e-3 if width <= 5 else 1e-4)
        return cls(**kw)

    @property
    def per_chain(self) -> list[int]:
        base, extra = divmod(self.n_retained, self.chains)
        return [base + (c < extra) for c in range(self.chains)]

    def thinning(self, chain: int = 0) -> int:
        return (self.steps - self.burn_in) // self.per_chain[chain]

    def retained_indices(self, chain: int) -> np.ndarray:
        """Step indices (0-based) kept for one chain: every ``thin``-th step after burn-in."""
        t = self.thinning(chain)
        return self.burn_in + t * np.arange(1, self.per_chain[chain] + 1) - 1


@dataclass
class HmcTrace:
    samples: np.ndarray
    acceptance: np.ndarray
    delta_h: np.ndarray
    init: np.ndarray
    config: HmcConfig
    spec: bnn.MlpSpec | None = None
    warnings: list = field(default_factory=list)

    @property
    def mean_acceptance(self) -> float:
        return float(np.mean(self.acceptance))

    def save(self, path):
        """Weight snapshot at ``path`` plus ``path + '.json'`` manifest."""
        if self.spec is None:
            raise ValueError("only network traces can be saved")
        bnn.save_weights(path, self.samples, self.spec, {
            "hmc_config": asdict(self.config),
            "acceptance": self.acceptance.tolist(),
            "warnings": list(self.warnings),
            "init": "independent prior draw per chain",
        })

    @classmethod
    def load(cls, path) -> "HmcTrace":
        W, spec, meta = bnn.load_weights(path)
        cfg = HmcConfig(**meta["hmc_config"])
        return cls(W, np.asarray(meta["acceptance"]), np.zeros((cfg.chains, 0)),
                   np.zeros((cfg.chains, 0)), cfg, spec, meta.get("warnings", []))


def leapfrog(w, p, step_size: float, n_steps: int, grad):
    """Integrate Hamilton's equations for ``H = -log pi(w) + |p|^2 / 2``.

    ``grad`` returns the gradient of ``log pi``. Half momentum kick, then
    alternating full drifts and kicks, closing with a half kick.
    """
    w = np.array(w, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    p += 0.5 * step_size * grad(w)
    for i in range(n_steps):
        w += step_size * p
        g = grad(w)
        p += (step_size if i < n_steps - 1 else 0.5 * step_size) * g
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(p))):
            raise HmcError(f"non-finite state after {i + 1} leapfrog steps")
    return w, p


def _trajectory(w, p, eps, n_steps, target, g0):
    # target returns (logp, grad); g0 is the gradient at the start point
    p = p + 0.5 * eps * g0
    for i in range(n_steps):
        w = w + eps * p
        lp, g = target(w)
        if i < n_steps - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    return w, p, lp, g


def run_chain(target, w0, config: HmcConfig, chain: int):
    """One chain on ``target: w -> (log pi, grad)``; returns (kept, acceptance, delta_h)."""
    rng = make_rng(config.seed, _HMC_STREAM, chain)
    keep_at = set(config.retained_indices(chain).tolist())
    w = np.array(w0, dtype=np.float64)
    lp, g = target(w)
    kept, dh = [], np.empty(config.steps)
    accepted = 0
    for step in range(config.steps):
        p0 = rng.standard_normal(w.shape)
        u = rng.uniform()
        with np.errstate(over="ignore", invalid="ignore"):
            w1, p1, lp1, g1 = _trajectory(w, p0, config.step_size, config.leapfrog_steps, target, g)
            h0 = -lp + 0.5 * np.dot(p0, p0)
            h1 = -lp1 + 0.5 * np.dot(p1, p1)
        delta = h1 - h0
        if not (np.isfinite(delta) and np.all(np.isfinite(w1))):
            delta = np.inf
        dh[step] = delta
        if np.log(u) < -delta:
            w, lp, g = w1, lp1, g1
            accepted += 1
        if step in keep_at:
            kept.append(w.copy())
    return np.array(kept), accepted / config.steps, dh


def _chain_job(args):
    spec, data, lik, config, chain = args
    rng = make_rng(config.seed, _HMC_STREAM, chain, 1)
    w0 = bnn.sample_prior(spec, rng)
    kept, acc, dh = run_chain(bnn.Posterior(spec, data, lik), w0, config, chain)
    return w0, kept, acc, dh


def run_hmc(spec: bnn.MlpSpec, data, lik: bnn.Likelihood = bnn.Likelihood(),
            config: HmcConfig = HmcConfig(), n_jobs: int = 1) -> HmcTrace:
    """Sample network weights from the posterior given ``data`` (``None`` samples the prior)."""
    jobs = [(spec, data, lik, config, c) for c in range(config.chains)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    trace = HmcTrace(
        samples=np.vstack([r[1] for r in results]),
        acceptance=np.array([r[2] for r in results]),
        delta_h=np.vstack([r[3] for r in results]),
        init=np.vstack([r[0] for r in results]),
        config=config,
        spec=spec,
    )
    if trace.mean_acceptance < LOW_ACCEPTANCE:
        msg = f"mean acceptance {trace.mean_acceptance:.3f} below {LOW_ACCEPTANCE}"
        trace.warnings.append(msg)
        warnings.warn(msg, LowAcceptanceWarning, stacklevel=2)
    log.info("HMC done: acceptance per chain %s", np.round(trace.acceptance, 3).tolist())
    return trace


def sample_target(target, init, config: HmcConfig) -> HmcTrace:
    """Run HMC on an arbitrary differentiable log density (one init row per chain)."""
    init = np.atleast_2d(np.asarray(init, dtype=np.float64))
    if init.shape[0] != config.chains:
        raise ValueError("need one initial point per chain")
    res = [run_chain(target, init[c], config, c) for c in range(config.chains)]
    return HmcTrace(np.vstack([r[0] for r in res]), np.array([r[1] for r in res]),
                    np.vstack([r[2] for r in res]), init, config)


def disagreement(trace: HmcTrace, Xs, transform: str = "identity", spec: bnn.MlpSpec | None = None):
    """Mean and standard deviation of network outputs across retained samples.

    ``transform="sigmoid"`` applies the logistic function before summarising,
    giving the spread of predicted probabilities.
    """
    spec = spec or trace.spec
    if trace.samples.shape[0] == 0:
        raise ValueError("empty trace")
    if transform not in ("identity", "sigmoid"):
        raise ValueError(f"unknown transform {transform!r}")
    Xs = np.ascontiguousarray(Xs, dtype=np.float64)
    if Xs.ndim == 1:
        Xs = Xs[:, None]
    # Welford updates: no cancellation when samples agree
    mean = np.zeros(Xs.shape[0])
    m2 = np.zeros(Xs.shape[0])
    for k, w in enumerate(trace.samples, start=1):
        f = bnn.forward(spec, w, Xs)
        if transform == "sigmoid":
            f = special.expit(f)
        delta = f - mean
        mean += delta / k
        m2 += delta * (f - mean)
    return mean, np.sqrt(np.maximum(m2, 0.0) / trace.samples.shape[0])


def manifest(trace: HmcTrace) -> str:
    return json.dumps({"hmc_config": asdict(trace.config), "acceptance": trace.acceptance.tolist(),
                       "warnings": trace.warnings}, indent=2)
