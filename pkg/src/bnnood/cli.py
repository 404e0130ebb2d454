"""Command-line front end.

Every command reads a flat ``key = value`` config file (optional) and
``--key value`` overrides; unknown keys are rejected. Exit codes: 0 success,
2 configuration error, 3 missing or malformed data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import bnn, datasets, gp, hmc, ood, pac_bayes
from .kernels import FAMILIES, KernelError, KernelSpec

log = logging.getLogger("bnnood")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class DataError(OSError):
    pass


def _intlist(s):
    return tuple(int(v) for v in str(s).split(",") if v.strip())


def _floatlist(s):
    return tuple(float(v) for v in str(s).split(",") if v.strip())


# key: (parser, default, help)
KEYS = {
    "dataset": (str, "gmm", "generated dataset: gmm | rings | reg1d | periodic"),
    "data_csv": (str, "", "CSV dataset (header x_0..x_{d-1},y) overriding the generator"),
    "data_dir": (str, "data", "directory holding mnist/ and fashion/ IDX files"),
    "n": (int, 0, "training-set size (0: dataset default)"),
    "seed": (int, 0, "master seed"),
    "out": (str, "runs", "output directory"),
    "mode": (str, "gp", "inference mode: gp | hmc"),
    "kernel": (str, "rbf", "kernel family: " + ", ".join(FAMILIES)),
    "depth": (int, 1, "hidden layers of the NNGP kernel"),
    "sigma_w2": (float, 1.0, "weight prior variance"),
    "sigma_b2": (float, 1.0, "bias prior variance"),
    "length_scale": (float, 1.0, "RBF / ESS length scale"),
    "period": (float, 2.0 * np.pi, "ESS period"),
    "sigma_g2": (float, 1.0, "RBF-network unit width"),
    "sigma_mu2": (float, 1.0, "RBF-network centre variance"),
    "mc_activation": (str, "relu", "activation of the Monte-Carlo NNGP"),
    "n_mc": (int, 10000, "Monte-Carlo samples per kernel entry"),
    "noise_var": (float, 0.02, "Gaussian likelihood variance"),
    "hidden": (_intlist, (100,), "hidden widths, comma separated"),
    "activation": (str, "relu", "network activation (relu, tanh, erf, cos, linear, rbf-unit)"),
    "prior": (str, "width-aware", "weight prior: width-aware | standard"),
    "likelihood": (str, "gaussian", "gaussian | logistic"),
    "likelihood_sign": (float, -1.0, "logistic mass s(sign*y*f): -1 literal form, +1 conventional"),
    "chains": (int, 5, "HMC chains"),
    "steps": (int, 5000, "HMC steps per chain"),
    "leapfrog": (int, 50, "leapfrog steps per proposal"),
    "step_size": (float, 0.0, "leapfrog step size (0: 1e-3 for width <= 5, else 1e-4)"),
    "burn_in": (int, 1000, "discarded steps per chain"),
    "n_retained": (int, 1000, "pooled retained samples"),
    "jobs": (int, 1, "parallel HMC chains"),
    "bounds": (_floatlist, (), "grid box x0,x1,y0,y1 (empty: data box scaled x3)"),
    "resolution": (_intlist, (), "grid nodes per axis (empty: 51, or 200 for rings)"),
    "transform": (str, "identity", "identity | sigmoid"),
    "cmap": (str, "gray", "PNG colour map (gray or any matplotlib name)"),
    "seeds": (int, 10, "number of seeds for pac"),
    "delta": (float, 0.05, "PAC-Bayes confidence"),
    "beta": (float, 2.0, "PAC-Bayes temperature"),
    "sigma_l2": (float, 1.0, "surrogate-loss scale"),
    "task": (int, 0, "SplitMNIST task 0..4"),
    "ood": (str, "both", "fashion | split | both"),
    "n_train": (int, 1000, "SplitMNIST training images"),
    "n_samples": (int, 1000, "rejection samples"),
    "temperature": (float, 1.0, "Boltzmann temperature"),
    "energy": (str, "sigma", "sigma | neglog"),
    "half_width": (float, 0.0, "subspace half width (0: 1.5x anchor spread)"),
    "n_replay": (int, 0, "replay samples (0: twice the task-1 size)"),
}


def parse_config_file(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            k = k.replace("-", "_")
            if k not in KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {k!r}")
            out[k] = v
    return out


@dataclass
class Config:
    values: dict
    explicit: frozenset = frozenset()

    def is_set(self, key) -> bool:
        """True when the key came from the config file or the command line."""
        return key in self.explicit

    def __getattr__(self, k):
        try:
            return self.values[k]
        except KeyError:
            raise AttributeError(k) from None

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec.make(self.kernel, depth=self.depth, sigma_w2=self.sigma_w2, sigma_b2=self.sigma_b2,
                               length_scale=self.length_scale, period=self.period, sigma_g2=self.sigma_g2,
                               sigma_mu2=self.sigma_mu2, activation=self.mc_activation, n_mc=self.n_mc,
                               mc_seed=self.seed)

    def mlp_spec(self, d: int) -> bnn.MlpSpec:
        return bnn.MlpSpec.mlp(d, list(self.hidden), self.activation, prior=self.prior, sigma_w2=self.sigma_w2,
                               sigma_b2=self.sigma_b2, sigma_g2=self.sigma_g2, sigma_mu2=self.sigma_mu2)

    def hmc_config(self) -> hmc.HmcConfig:
        kw = dict(chains=self.chains, steps=self.steps, leapfrog_steps=self.leapfrog, burn_in=self.burn_in,
                  n_retained=self.n_retained, seed=self.seed)
        if self.step_size > 0:
            kw["step_size"] = self.step_size
        return hmc.HmcConfig.for_width(max(self.hidden), **kw)

    def likelihood(self) -> bnn.Likelihood:
        return bnn.Likelihood(self.likelihood_kind, self.noise_var, self.likelihood_sign)

    @property
    def likelihood_kind(self):
        return self.values["likelihood"]

    def pac_config(self) -> pac_bayes.PacConfig:
        return pac_bayes.PacConfig(self.delta, self.beta, self.sigma_l2)


def build_config(file_values: dict, overrides: dict) -> Config:
    raw = {k: d for k, (_, d, _) in KEYS.items()}
    raw.update(file_values)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    vals = {}
    for k, v in raw.items():
        conv = KEYS[k][0]
        try:
            vals[k] = v if not isinstance(v, str) or conv is str else conv(v)
        except ValueError as e:
            raise ConfigError(f"bad value for {k}: {v!r} ({e})") from None
    cfg = Config(vals, frozenset(file_values) | {k for k, v in overrides.items() if v is not None})
    if cfg.mode not in ("gp", "hmc"):
        raise ConfigError("mode must be gp or hmc")
    if cfg.transform not in ("identity", "sigmoid"):
        raise ConfigError("transform must be identity or sigmoid")
    if cfg.ood not in ("fashion", "split", "both"):
        raise ConfigError("ood must be fashion, split or both")
    if cfg.bounds and len(cfg.bounds) != 4:
        raise ConfigError("bounds needs four numbers x0,x1,y0,y1")
    if cfg.resolution and len(cfg.resolution) not in (1, 2):
        raise ConfigError("resolution takes one or two integers")
    if cfg.data_csv and not os.path.exists(cfg.data_csv):
        raise DataError(f"dataset file not found: {cfg.data_csv}")
    return cfg


# --------------------------------------------------------------------------
# helpers

def load_dataset(cfg: Config) -> datasets.RegressionDataset:
    if cfg.data_csv:
        return datasets.load_csv(cfg.data_csv)
    if cfg.dataset not in datasets.DATASETS:
        raise ConfigError(f"dataset {cfg.dataset!r} is not a generated dataset")
    kw = {"n": cfg.n} if cfg.n else {}
    return datasets.DATASETS[cfg.dataset](cfg.seed, **kw)


def grid_setup(cfg: Config, X):
    if cfg.bounds:
        b = cfg.bounds
        bounds = ((b[0], b[1]), (b[2], b[3]))
    elif cfg.dataset == "rings" and not cfg.data_csv:
        bounds = ood.RINGS_BOUNDS
    else:
        bounds = ood.default_bounds(X)
    if cfg.resolution:
        r = cfg.resolution
        res = (r[0], r[-1])
    else:
        res = ood.RINGS_RESOLUTION if cfg.dataset == "rings" and not cfg.data_csv else (51, 51)
    return bounds, res


def eval_points_1d(X, n=200):
    lo, hi = float(X.min()), float(X.max())
    pad = 0.5 * (hi - lo) + 1.0
    return ood.axis_nodes(lo - pad, hi + pad, n)[:, None]


def fit_model(cfg: Config, data):
    if cfg.mode == "gp":
        return gp.fit(cfg.kernel_spec(), data.X, data.y, cfg.noise_var)
    spec = cfg.mlp_spec(data.d)
    return hmc.run_hmc(spec, data, cfg.likelihood(), cfg.hmc_config(), n_jobs=cfg.jobs)


def write_manifest(out, command, cfg: Config, extra=None):
    from . import BACKEND
    from .rng import RNG_SCHEME
    vals = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.values.items()}
    m = {"command": command, "config": vals, "rng": RNG_SCHEME, "backend": BACKEND}
    m.update(extra or {})
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(m, fh, indent=2, sort_keys=True)


def _mnist(cfg: Config):
    try:
        train = datasets.load_idx_dir(os.path.join(cfg.data_dir, "mnist"), "train")
        test = datasets.load_idx_dir(os.path.join(cfg.data_dir, "mnist"), "test")
        fashion = None
        if cfg.ood in ("fashion", "both"):
            fashion = datasets.load_idx_dir(os.path.join(cfg.data_dir, "fashion"), "test")
    except FileNotFoundError as e:
        raise DataError(f"missing data file: {e.args[0] if e.args else e}") from None
    return train, test, fashion


# --------------------------------------------------------------------------
# commands

def cmd_gp_fit(cfg: Config, out):
    data = load_dataset(cfg)
    post = gp.fit(cfg.kernel_spec(), data.X, data.y, cfg.noise_var)
    post.save_cholesky(os.path.join(out, "cholesky.bin"))
    Xs = eval_points_1d(data.X) if data.d == 1 else (
        ood.grid_points(*grid_setup(cfg, data.X)) if data.d == 2 else data.X)
    gp.predict(post, Xs).to_csv(os.path.join(out, "predictions.csv"), Xs)
    datasets.save_csv(data, os.path.join(out, "train.csv"))
    write_manifest(out, "gp-fit", cfg, {"log_marginal_likelihood": gp.log_marginal_likelihood(post),
                                        "n": data.n})


def cmd_hmc_run(cfg: Config, out):
    data = load_dataset(cfg)
    spec = cfg.mlp_spec(data.d)
    trace = hmc.run_hmc(spec, data, cfg.likelihood(), cfg.hmc_config(), n_jobs=cfg.jobs)
    trace.save(os.path.join(out, "trace.bin"))
    Xs = eval_points_1d(data.X) if data.d == 1 else ood.grid_points(*grid_setup(cfg, data.X))
    mean, sd = hmc.disagreement(trace, Xs, cfg.transform)
    gp.PredictiveSummary(mean, sd).to_csv(os.path.join(out, "disagreement.csv"), Xs)
    write_manifest(out, "hmc-run", cfg, {"acceptance": trace.acceptance.tolist(), "warnings": trace.warnings})


def cmd_grid(cfg: Config, out):
    data = load_dataset(cfg)
    if data.d != 2:
        raise ConfigError("grid needs a 2D dataset")
    model = fit_model(cfg, data)
    bounds, res = grid_setup(cfg, data.X)
    field = ood.uncertainty_grid(model, bounds, res, cfg.transform)
    field.to_csv(os.path.join(out, "field.csv"))
    field.to_png(os.path.join(out, "field.png"), cfg.cmap)
    write_manifest(out, "grid", cfg, {"sigma_min": float(field.sigma.min()), "sigma_max": float(field.sigma.max())})


def cmd_auroc(cfg: Config, out):
    train, test, fashion = _mnist(cfg)
    r = ood.splitmnist_eval(cfg.kernel_spec(), train, test, cfg.task, fashion, cfg.n_train, cfg.noise_var)
    with open(os.path.join(out, "auroc.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "kernel", "acc_train", "acc_test", "auroc_splitmnist", "auroc_fashion"])
        w.writerow([r.task, cfg.kernel, repr(r.acc_train), repr(r.acc_test),
                    repr(r.auroc_split) if cfg.ood != "fashion" else "",
                    repr(r.auroc_fashion) if r.auroc_fashion is not None else ""])
    print(f"task {r.task}: acc train {r.acc_train:.4f} test {r.acc_test:.4f} "
          f"auroc split {r.auroc_split:.4f} fashion {r.auroc_fashion if r.auroc_fashion is None else round(r.auroc_fashion, 4)}")
    write_manifest(out, "auroc", cfg)


def cmd_pac(cfg: Config, out):
    if cfg.dataset != "periodic":
        raise ConfigError("the pac protocol runs on the periodic dataset")
    spec = cfg.kernel_spec()
    kw = {"n": cfg.n} if cfg.n else {}
    noise = cfg.noise_var if cfg.is_set("noise_var") else pac_bayes.PERIODIC_GP_NOISE_VAR
    reports = [pac_bayes.periodic_run(spec, cfg.seed + s, cfg.pac_config(), noise, **kw) for s in range(cfg.seeds)]
    pac_bayes.write_reports(os.path.join(out, "pac.csv"), reports)
    text = pac_bayes.format_summary(pac_bayes.summarize(reports))
    with open(os.path.join(out, "pac_summary.csv"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    write_manifest(out, "pac", cfg, {"gp_noise_var": noise})


def cmd_sample(cfg: Config, out):
    data = load_dataset(cfg)
    model = fit_model(cfg, data)
    if data.d == 2:
        bounds, res = grid_setup(cfg, data.X)
    else:
        X = data.X
        bounds = tuple((float(a), float(b)) for a, b in zip(X.min(0), X.max(0)))
    samples = ood.rejection_sample(model, bounds, cfg.n_samples, cfg.temperature, cfg.seed, cfg.energy)
    samples.to_csv(os.path.join(out, "samples.csv"))
    if data.d == 2:
        field = ood.uncertainty_grid(model, bounds, res, cfg.transform)
        field.to_png(os.path.join(out, "field.png"), cfg.cmap)
        _overlay(os.path.join(out, "samples.png"), field, samples.points, data.X)
    write_manifest(out, "sample", cfg, {"acceptance_rate": samples.acceptance_rate, "e_min": samples.e_min})


def _overlay(path, field, pts, train):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    (x0, x1), (y0, y1) = field.bounds
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(field.sigma, origin="lower", extent=(x0, x1, y0, y1), cmap="viridis")
    ax.scatter(pts[:, 0], pts[:, 1], s=2, c="k")
    ax.scatter(train[:, 0], train[:, 1], s=12, c="r", marker="x")
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def cmd_subspace(cfg: Config, out):
    from PIL import Image
    train, test, _ = _mnist(Config({**cfg.values, "ood": "split"}))
    tr = datasets.make_splitmnist_task(train, cfg.task, cfg.n_train)
    te = datasets.make_splitmnist_task(test, cfg.task, None)
    post = gp.fit(cfg.kernel_spec(), tr.X, tr.y, cfg.noise_var)
    sd = gp.predict(post, te.X).std
    gamma = te.X[ood.most_uncertain(sd)]
    i, j = ood.nearest_pair(tr.X, gamma)
    emb = ood.plane_embed(tr.X[i], tr.X[j], gamma)
    uv = emb.coords(np.vstack([emb.alpha, emb.beta, emb.gamma]))
    hw = cfg.half_width or 1.5 * float(np.max(np.abs(uv - uv.mean(0))))
    res = (cfg.resolution[0], cfg.resolution[-1]) if cfg.resolution else (51, 51)
    field = ood.plane_grid(emb, post, hw, res)
    field.to_csv(os.path.join(out, "plane.csv"))
    field.to_png(os.path.join(out, "plane.png"), cfg.cmap)
    for name, img in (("alpha", emb.alpha), ("beta", emb.beta), ("gamma", emb.gamma)):
        pix = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8).reshape(28, 28)
        Image.fromarray(pix, mode="L").save(os.path.join(out, f"anchor_{name}.png"))
    with open(os.path.join(out, "anchors.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["anchor", "u", "v"])
        for name, (u, v) in zip(("alpha", "beta", "gamma"), uv):
            w.writerow([name, repr(float(u)), repr(float(v))])
    write_manifest(out, "subspace", cfg, {"train_indices": [i, j]})


def cmd_cl_replay(cfg: Config, out):
    kw = {"n": cfg.n} if cfg.n else {}
    t1, t2 = datasets.gen_cl_tasks(cfg.seed, **kw)
    spec = cfg.kernel_spec() if cfg.is_set("kernel") else ood.CL_KERNEL
    res = ood.cl_replay(t1, t2, spec, cfg.n_replay or None, cfg.noise_var, cfg.temperature, cfg.seed,
                        kind=cfg.energy if cfg.is_set("energy") else "neglog")
    xs = ood.axis_nodes(*datasets.CL_DOMAIN, 200)[:, None]
    for name, post in (("joint", res.joint), ("task1", res.task1), ("combined", res.combined)):
        gp.predict(post, xs).to_csv(os.path.join(out, f"{name}.csv"), xs)
    datasets.save_csv(res.replay, os.path.join(out, "replay.csv"))
    agree = ood.replay_agreement(res)
    print(f"combined within 3 joint std at {100 * agree:.1f}% of grid points")
    write_manifest(out, "cl-replay", cfg, {"agreement": agree, "kernel": spec.to_dict()})


COMMANDS = {
    "gp-fit": cmd_gp_fit,
    "hmc-run": cmd_hmc_run,
    "grid": cmd_grid,
    "auroc": cmd_auroc,
    "pac": cmd_pac,
    "sample": cmd_sample,
    "subspace": cmd_subspace,
    "cl-replay": cmd_cl_replay,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bnnood", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", "").replace("_", " "))
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--dry-run", action="store_true", help="validate the configuration and exit")
        p.add_argument("-v", "--verbose", action="store_true")
        for k, (_, default, help_) in KEYS.items():
            p.add_argument("--" + k.replace("_", "-"), dest=k, default=None, help=f"{help_} [{default}]")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in KEYS}
    try:
        file_vals = parse_config_file(args.config) if args.config else {}
        cfg = build_config(file_vals, overrides)
        if args.command in ("grid", "sample", "gp-fit", "hmc-run") and not cfg.data_csv \
                and cfg.dataset not in datasets.DATASETS:
            raise ConfigError(f"{args.command} needs a generated dataset or data_csv")
        cfg.kernel_spec()
        if args.command == "hmc-run" or cfg.mode == "hmc":
            cfg.hmc_config()
            cfg.likelihood()
            cfg.mlp_spec(2)
        if args.dry_run:
            print(f"{args.command}: configuration ok")
            return EXIT_OK
        os.makedirs(cfg.out, exist_ok=True)
        COMMANDS[args.command](cfg, cfg.out)
    # order matters: LinAlgError and DatasetError are ValueError subclasses
    except (hmc.HmcError, ood.RejectionError, KernelError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, datasets.DatasetError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
