import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bnnood import bnn, datasets, gp, hmc, pac_bayes
from bnnood.datasets import RegressionDataset
from bnnood.kernels import KernelSpec
from bnnood.pac_bayes import PacConfig, PacReport

reals = st.floats(-1e3, 1e3, allow_nan=False)


def test_l_exp_values():
    assert pac_bayes.l_exp(0.3, 0.3) == 0.0
    assert pac_bayes.l_exp(1.0, 0.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert pac_bayes.l_exp(0.0, 2.0, 4.0) == pytest.approx(0.63212055882, abs=1e-11)
    with pytest.raises(ValueError):
        pac_bayes.l_exp(0.0, 0.0, 0.0)


@given(reals, reals, st.floats(1e-3, 1e3))
def test_l_exp_range(m, y, s):
    v = pac_bayes.l_exp(m, y, s)
    assert 0.0 <= v <= 1.0
    if (m - y) ** 2 / s < 30:  # beyond that 1 - exp(-x) rounds to 1
        assert v < 1.0


@given(st.floats(-0.2, 0.2))
def test_l_exp_taylor(r):
    if abs(r) < 1e-6:
        return
    assert pac_bayes.l_exp(r, 0.0) == pytest.approx(r * r, rel=0.05)


def test_expected_loss_vs_monte_carlo():
    r = np.random.default_rng(0)
    for _ in range(5):
        mu, s, y = r.normal(), abs(r.normal()) + 0.05, r.normal()
        f = mu + s * r.standard_normal(1_000_000)
        losses = pac_bayes.l_exp(f, y)
        se = losses.std(ddof=1) / 1000.0
        assert abs(losses.mean() - pac_bayes.expected_l_exp(mu, s, y)) < 3 * se


def test_degenerate_q():
    mu = np.array([0.1, -0.4, 2.0])
    y = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(pac_bayes.expected_l_exp(mu, 0.0, y), pac_bayes.l_exp(mu, y), atol=1e-16)
    F = np.tile(mu, (4, 1))
    ds = RegressionDataset(np.zeros((3, 1)), y, {})
    assert pac_bayes.empirical_risk(F, ds) == pytest.approx(np.mean(pac_bayes.l_exp(mu, y)), rel=1e-15)
    assert pac_bayes.empirical_bayes_risk(F, ds) == pytest.approx(pac_bayes.empirical_risk(F, ds), rel=1e-15)


def test_perfect_interpolation_bayes_risk():
    ds = RegressionDataset(np.zeros((3, 1)), np.array([0.5, 0.5, 0.5]), {})
    assert pac_bayes.empirical_bayes_risk(np.full((2, 3), 0.5), ds) == 0.0


def test_catoni_reference_value():
    mpmath.mp.dps = 40
    want = (1 - mpmath.exp(-mpmath.log(20) / 35)) / (1 - mpmath.exp(-2))
    got = pac_bayes.catoni_bound(0.0, 0.0, 35)
    assert got == pytest.approx(float(want), rel=1e-14)
    assert got == pytest.approx(0.09487, abs=5e-6)


def test_catoni_limits_and_validation():
    cfg = PacConfig()
    assert pac_bayes.catoni_bound(0.3, math.inf, 35) == cfg.bound_max
    assert pac_bayes.catoni_bound(0.3, 1e6, 35) == pytest.approx(cfg.bound_max, rel=1e-12)
    for bad in [(-0.1, 0, 1), (1.1, 0, 1), (0.1, -1, 1), (0.1, 0, 0)]:
        with pytest.raises(ValueError):
            pac_bayes.catoni_bound(*bad)
    for bad in [dict(delta=0), dict(delta=1.5), dict(beta=0), dict(sigma_l2=-1)]:
        with pytest.raises(ValueError):
            PacConfig(**bad)


def test_catoni_monotone_grid():
    rs = np.linspace(0, 1, 21)
    kls = np.concatenate([[0], np.logspace(-3, 3, 25)])
    B = np.array([[pac_bayes.catoni_bound(r, k, 35) for k in kls] for r in rs])
    assert np.all(np.diff(B, axis=0) >= 0)
    assert np.all(np.diff(B, axis=1) >= 0)
    assert np.all((B >= 0) & (B <= PacConfig().bound_max))


def test_gp_risk_vs_function_samples():
    ds = datasets.gen_periodic_1d(0)
    post = gp.fit(KernelSpec("ess"), ds.X, ds.y, 0.3)
    p = gp.predict(post, ds.X, full_cov=True)
    L = np.linalg.cholesky(p.cov + 1e-10 * np.eye(ds.n))
    F = p.mean + np.random.default_rng(0).standard_normal((100_000, ds.n)) @ L.T
    per_sample = pac_bayes.l_exp(F, ds.y[None, :]).mean(axis=1)
    se = per_sample.std(ddof=1) / np.sqrt(per_sample.size)
    assert abs(per_sample.mean() - pac_bayes.empirical_risk(post, ds)) < 3 * se


def test_hmc_trace_risk():
    s = bnn.MlpSpec.mlp(1, 3, "tanh")
    W = bnn.sample_prior(s, np.random.default_rng(0), size=6)
    cfg = hmc.HmcConfig(chains=1, steps=6, burn_in=0, n_retained=6)
    tr = hmc.HmcTrace(W, np.ones(1), np.zeros((1, 0)), W[:1], cfg, s)
    ds = datasets.gen_1d_regression(0)
    F = np.stack([bnn.forward(s, w, ds.X) for w in W])
    assert pac_bayes.empirical_risk(tr, ds) == pytest.approx(pac_bayes.empirical_risk(F, ds), rel=1e-15)
    with pytest.raises(ValueError):
        pac_bayes.empirical_risk(F[:, :3], ds)


def test_periodic_report_fields():
    rep = pac_bayes.periodic_run(KernelSpec("ess"), 0)
    assert 0 <= rep.r_d <= 1 and 0 <= rep.r_bd <= 1 and rep.kl >= 0
    assert 0 <= rep.bound <= PacConfig().bound_max
    assert rep.bound == pytest.approx(pac_bayes.catoni_bound(rep.r_d, rep.kl, 35), rel=1e-15)
    assert np.isfinite(rep.test_mse)


def test_periodic_reference_means():
    reps = {k: [pac_bayes.periodic_run(KernelSpec(k), s) for s in range(10)] for k in ("rbf", "ess")}
    mean = {k: {c: np.mean([getattr(r, c) for r in v]) for c in PacReport.COLUMNS[2:]} for k, v in reps.items()}
    assert mean["ess"]["r_d"] == pytest.approx(0.094, abs=0.02)
    assert mean["rbf"]["r_bd"] == pytest.approx(0.048, abs=0.02)
    assert mean["rbf"]["bound"] == pytest.approx(0.496, abs=0.03)
    assert mean["ess"]["bound"] == pytest.approx(0.419, abs=0.03)


def test_ordering_over_20_seeds():
    wins = sum(pac_bayes.periodic_run(KernelSpec("ess"), s).bound < pac_bayes.periodic_run(KernelSpec("rbf"), s).bound
               for s in range(20))
    assert wins >= 18


def test_report_io_and_summary(tmp_path):
    reps = [pac_bayes.periodic_run(KernelSpec(k), s) for k in ("rbf", "ess") for s in range(3)]
    pac_bayes.write_reports(tmp_path / "r.csv", reps)
    back = pac_bayes.read_reports(tmp_path / "r.csv")
    assert back == reps
    summ = pac_bayes.summarize(back)
    assert set(summ) == {"rbf", "ess"}
    b = [r.bound for r in reps if r.kernel == "rbf"]
    assert summ["rbf"]["bound"] == pytest.approx((np.mean(b), np.std(b, ddof=1)))
    text = pac_bayes.format_summary(summ)
    assert text.splitlines()[0].startswith("kernel,r_d") and len(text.splitlines()) == 3
