"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (outside pytest's
capture) with the measured numbers, then asserts. The HMC criteria (4, 7)
take a few minutes; run just this file with ``pytest tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest
from scipy import stats

from bnnood import bnn, datasets, gp, hmc, kernels, ood, pac_bayes
from bnnood.bnn import Likelihood, MlpSpec
from bnnood.datasets import RegressionDataset
from bnnood.kernels import KernelSpec

from conftest import data_dir, have_mnist
from oracles import brute_auroc, central_diff, dense_conditioning

ALL_KERNELS = ["rbf", "ess", "nngp-relu", "nngp-erf", "nngp-cosine-1l", "nngp-rbfnet-1l"]


@pytest.fixture
def report(capsys):
    t0 = time.perf_counter()

    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({time.perf_counter() - t0:.0f}s)")
        assert ok, detail
    return emit


# --------------------------------------------------------------------------
# 1: PAC-Bayes bound table on the periodic data


def test_c1_periodic_bound_table(report):
    reps = {k: [pac_bayes.periodic_run(KernelSpec(k), s) for s in range(10)] for k in ("rbf", "ess")}
    mean = {k: {c: float(np.mean([getattr(r, c) for r in v])) for c in ("bound", "kl")} for k, v in reps.items()}
    wins = {
        "bound": sum(e.bound < r.bound for r, e in zip(reps["rbf"], reps["ess"])),
        "log_ml": sum(e.log_ml > r.log_ml for r, e in zip(reps["rbf"], reps["ess"])),
        "test_mse": sum(e.test_mse < r.test_mse for r, e in zip(reps["rbf"], reps["ess"])),
    }
    ok = (abs(mean["rbf"]["bound"] - 0.496) <= 0.05 and abs(mean["ess"]["bound"] - 0.419) <= 0.05
          and abs(mean["rbf"]["kl"] - 8.849) <= 1.0 and abs(mean["ess"]["kl"] - 6.143) <= 1.0
          and all(w >= 8 for w in wins.values()))
    report("C1 periodic bound table", ok,
           f"bound rbf {mean['rbf']['bound']:.3f} ess {mean['ess']['bound']:.3f}; "
           f"KL rbf {mean['rbf']['kl']:.3f} ess {mean['ess']['kl']:.3f}; ESS wins {wins}")


# --------------------------------------------------------------------------
# 2: SplitMNIST spot checks


@pytest.mark.skipif(not have_mnist(), reason="MNIST IDX files not present (see scripts/npm_json_to_idx.py)")
def test_c2_splitmnist_spot_checks(report):
    root = data_dir()
    train = datasets.load_idx_dir(f"{root}/mnist", "train")
    test = datasets.load_idx_dir(f"{root}/mnist", "test")
    fashion = datasets.load_idx_dir(f"{root}/fashion", "test")

    def mean_over_tasks(spec, fields):
        rs = [ood.splitmnist_eval(spec, train, test, t, fashion, 1000, 0.02) for t in range(5)]
        return [float(np.mean([getattr(r, f) for r in rs])) for f in fields]

    acc, au_rbf = mean_over_tasks(KernelSpec("rbf", length_scale=5.0), ("acc_test", "auroc_fashion"))
    (au_erf,) = mean_over_tasks(KernelSpec("nngp-erf"), ("auroc_fashion",))
    (au_cos,) = mean_over_tasks(KernelSpec("nngp-cosine-1l", sigma_w2=100.0), ("auroc_split",))
    ok = acc >= 0.985 and abs(au_rbf - 0.979) <= 0.03 and au_erf >= 0.98 and abs(au_cos - 0.895) <= 0.04
    report("C2 SplitMNIST spot checks (mean of 5 tasks)", ok,
           f"rbf l=5 test acc {acc:.4f}, fashion AUROC {au_rbf:.4f}; erf fashion AUROC {au_erf:.4f}; "
           f"cos sw2=100 rest AUROC {au_cos:.4f}")


# --------------------------------------------------------------------------
# 3: Monte-Carlo NNGP consistency


def test_c3_mc_nngp_consistency(report):
    r = np.random.default_rng(2024)
    pairs = [(r.normal(size=2) * 1.5, r.normal(size=2) * 1.5) for _ in range(100)]
    lines, ok = [], True
    for act in ("relu", "erf"):
        exact = KernelSpec.make(f"nngp-{act}")
        ref = np.array([kernels.evaluate(exact, a, b) for a, b in pairs])
        medians = []
        for n in (100, 1_000, 10_000, 100_000):
            est = []
            for i, (a, b) in enumerate(pairs):
                mc = KernelSpec.make("nngp-mc", activation=act, n_mc=n, mc_seed=i)
                est.append(kernels.k_nngp_mc(a, b, mc, return_se=True))
            k, se = np.array(est).T
            err = np.abs(k - ref)
            medians.append(float(np.median(err)))
            if n == 100_000:
                within = int(np.sum(err <= 3 * se))
                ok &= within == len(pairs)
        ok &= all(a > b for a, b in zip(medians, medians[1:]))
        lines.append(f"{act}: {within}/100 within 3 SE at N=1e5, median err "
                     + " > ".join(f"{m:.1e}" for m in medians))
    report("C3 MC-NNGP consistency", ok, "; ".join(lines))


# --------------------------------------------------------------------------
# 4: finite-width HMC vs infinite-width GP disagreement fields


def test_c4_hmc_vs_nngp_field(report):
    data = datasets.gen_gmm(0)
    bounds = ood.default_bounds(data.X)
    trace = hmc.run_hmc(MlpSpec.mlp(2, 100, "cos"), data, Likelihood(noise_var=0.02),
                        hmc.HmcConfig.for_width(100), n_jobs=5)
    f_hmc = ood.uncertainty_grid(trace, bounds, (51, 51))
    f_gp = ood.uncertainty_grid(gp.fit(KernelSpec("nngp-cosine-1l"), data.X, data.y, 0.02), bounds, (51, 51))
    rho = stats.spearmanr(f_hmc.sigma.ravel(), f_gp.sigma.ravel()).statistic
    report("C4 HMC cos-100 vs NNGP-Cosine1L field", rho > 0.5,
           f"Spearman {rho:.3f}; HMC acceptance {np.round(trace.acceptance, 3).tolist()}")


# --------------------------------------------------------------------------
# 5: property suites


def _prop_dense_oracle():
    worst = 0.0
    for family in ALL_KERNELS:
        s = KernelSpec.make(family)
        for n in range(1, 7):
            r = np.random.default_rng(50 + n)
            X, y, Xs = r.normal(size=(n, 2)) * 1.5, r.normal(size=n), r.normal(size=(4, 2)) * 2
            m_ref, C_ref = dense_conditioning(kernels.gram(s, np.vstack([X, Xs])).values, n, y, 0.02)
            p = gp.predict(gp.fit(s, X, y, 0.02), Xs, full_cov=True)
            worst = max(worst, np.max(np.abs(p.mean - m_ref)), np.max(np.abs(p.cov - C_ref)))
    return worst < 1e-8, f"a) dense oracle {worst:.1e}"


def _prop_variance_decomposition():
    worst = 0.0
    r = np.random.default_rng(7)
    X, y = r.normal(size=(7, 2)), r.normal(size=7)
    for family in ALL_KERNELS + ["nngp-mc"]:
        s = KernelSpec.make(family, n_mc=500) if family == "nngp-mc" else KernelSpec.make(family)
        post = gp.fit(s, X, y)
        for xs in r.normal(size=(5, 2)) * 2:
            prior_t, data_t, _ = gp.variance_decomposition(post, xs)
            worst = max(worst, abs(prior_t - data_t - gp.predict(post, xs[None]).var[0]))
    return worst < 1e-10, f"b) variance decomposition {worst:.1e}"


def _prop_gradients():
    worst = 0.0
    acts = ["relu", "tanh", "erf", "cos", "rbf-unit"]
    for i in range(50):
        r = np.random.default_rng(1000 + i)
        act, d = acts[i % 5], int(r.integers(1, 4))
        s = MlpSpec((d, 4, 1), "rbf-unit", sigma_w2=3.0) if act == "rbf-unit" else MlpSpec((d, 4, 3, 1), act)
        kind = "logistic" if i % 2 else "gaussian"
        X = r.normal(size=(7, d)) * 1.5
        y = np.sign(r.normal(size=7)) if kind == "logistic" else r.normal(size=7)
        ds, lik = RegressionDataset(X, y, {}), Likelihood(kind, noise_var=0.3)
        w = r.normal(size=s.n_params)
        fd = central_diff(lambda v: bnn.log_posterior_and_grad(s, v, ds, lik)[0], w)
        g = bnn.grad_log_posterior(s, w, ds, lik)
        worst = max(worst, np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))))
    return worst < 1e-5, f"c) gradient vs FD {worst:.1e} on 50 cases"


def _prop_leapfrog():
    s, data = MlpSpec((2, 4, 1), "tanh"), datasets.gen_gmm(0)
    worst = 0.0
    for seed in range(10):
        r = np.random.default_rng(seed)
        w0, p0 = bnn.sample_prior(s, r), r.normal(size=s.n_params)
        grad = lambda v: bnn.grad_log_posterior(s, v, data)  # noqa: E731
        w1, p1 = hmc.leapfrog(w0, p0, 1e-3, 50, grad)
        w2, p2 = hmc.leapfrog(w1, -p1, 1e-3, 50, grad)
        worst = max(worst, np.max(np.abs(w2 - w0)), np.max(np.abs(p2 + p0)))
    P = np.array([[2.0, 0.3], [0.3, 0.5]])
    r = np.random.default_rng(1)
    starts = [(r.normal(size=2), r.normal(size=2)) for _ in range(20)]

    def max_dh(eps, n):
        h = lambda w, p: 0.5 * w @ P @ w + 0.5 * p @ p  # noqa: E731
        return max(abs(h(*hmc.leapfrog(w, p, eps, n, lambda v: -P @ v)) - h(w, p)) for w, p in starts)

    ratio = max_dh(0.1, 20) / max_dh(0.05, 40)
    return worst < 1e-8 and 3.5 < ratio < 4.5, f"d) reversibility {worst:.1e}, dH ratio at half step {ratio:.2f}"


def _prop_auroc():
    r = np.random.default_rng(3)
    ok = True
    for _ in range(200):
        a = r.integers(-5, 6, size=r.integers(1, 100)).astype(float)
        b = r.integers(-5, 6, size=r.integers(1, 100)).astype(float)
        ok &= ood.auroc(a, b) == brute_auroc(a, b)
    return ok, f"e) AUROC exact on 200 tied samples: {ok}"


def _prop_rejection():
    S = ood.rejection_sample(lambda X: 0.5 * np.sum(X * X, axis=1), ((-7, 7), (-7, 7)), 100_000, seed=0)
    C = np.cov(S.points.T)
    dev = float(np.max(np.abs(C - np.eye(2))))
    return dev < 0.05, f"f) rejection N(0,I) cov max dev {dev:.3f}"


def _prop_wide_prior():
    H, draws = 512, 10_000
    x = np.array([[0.5, -0.3], [1.2, 0.8]])
    s = MlpSpec((2, H, 1), "erf", sigma_w2=2.0, sigma_b2=0.5)
    K = kernels.cross(KernelSpec.make("nngp-erf", sigma_w2=2.0, sigma_b2=0.5), x, x)
    r = np.random.default_rng(12)
    F = np.array([bnn.forward(s, bnn.sample_prior(s, r), x) for _ in range(draws)])
    z = []
    for i, j in [(0, 0), (0, 1), (1, 1)]:
        prod = F[:, i] * F[:, j]
        z.append(abs(prod.mean() - K[i, j]) / (prod.std(ddof=1) / np.sqrt(draws)))
    return max(z) < 3, f"g) H=512 erf prior cov max |z| {max(z):.2f}"


def test_c5_property_suites(report):
    results = [f() for f in (_prop_dense_oracle, _prop_variance_decomposition, _prop_gradients,
                             _prop_leapfrog, _prop_auroc, _prop_rejection, _prop_wide_prior)]
    report("C5 property suites", all(ok for ok, _ in results), "; ".join(d for _, d in results))


# --------------------------------------------------------------------------
# 6: continual learning with uncertainty-based replay


def test_c6_cl_replay(report):
    agree = []
    for seed in range(10):
        t1, t2 = datasets.gen_cl_tasks(seed)
        agree.append(ood.replay_agreement(ood.cl_replay(t1, t2, seed=seed)))
    m = float(np.mean(agree))
    report("C6 CL replay agreement", m >= 0.95,
           f"mean {m:.3f} over seeds 0-9 (min {min(agree):.3f}, max {max(agree):.3f})")


# --------------------------------------------------------------------------
# 7: HMC classification sanity


def test_c7_hmc_classification(report):
    data = datasets.gen_gmm(0)
    bounds = ood.default_bounds(data.X)
    lik = Likelihood("logistic")
    fields = {}
    for act, width in (("cos", 100), ("relu", 5)):
        tr = hmc.run_hmc(MlpSpec.mlp(2, width, act), data, lik, hmc.HmcConfig.for_width(width), n_jobs=5)
        fields[act] = ood.uncertainty_grid(tr, bounds, (51, 51), "sigmoid")
    dist = float(np.min(np.linalg.norm(data.X - fields["cos"].argmin_point(), axis=1)))
    far = np.linalg.norm(fields["cos"].points(), axis=1) > 6
    means = {k: float(f.sigma.ravel()[far].mean()) for k, f in fields.items()}
    ratio = means["relu"] / means["cos"]
    report("C7 HMC classification sanity", dist <= 1.0 and ratio < 1.0,
           f"cos-100 argmin {dist:.3f} from data; far-field sigma relu-5 {means['relu']:.3f} / "
           f"cos-100 {means['cos']:.3f} = {ratio:.3f}")
