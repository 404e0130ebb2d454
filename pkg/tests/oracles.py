"""Independent reference computations used by the tests.

Nothing here imports the package's kernel or GP code; the oracles work from
definitions (Gaussian expectations by quadrature, dense-inverse
conditioning, brute-force pair counting).
"""

import numpy as np
from scipy import integrate, special


def gauss_pair_expectation(h, k11, k12, k22):
    """E[h(u) h(v)] for (u, v) ~ N(0, [[k11, k12], [k12, k22]]) by nested quadrature.

    Conditions on u: v | u ~ N(k12/k11 u, k22 - k12^2/k11).
    """
    s1 = np.sqrt(k11)
    cvar = max(k22 - k12 * k12 / k11, 0.0)
    cs = np.sqrt(cvar)

    def inner(u):
        m = k12 / k11 * u
        if cs < 1e-12:
            return h(m)
        f = lambda z: h(m + cs * z) * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)  # noqa: E731
        kink = [-m / cs] if h(0.0) == 0.0 and abs(m / cs) < 12 else None
        return integrate.quad(f, -12, 12, epsabs=1e-13, epsrel=1e-12, limit=200, points=kink)[0]

    outer = lambda z: h(s1 * z) * inner(s1 * z) * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)  # noqa: E731
    pts = [0.0] if h(0.0) == 0.0 else None
    return integrate.quad(outer, -12, 12, epsabs=1e-12, epsrel=1e-11, limit=200, points=pts)[0]


ACT = {
    "relu": lambda u: max(u, 0.0),
    "erf": special.erf,
    "cos": np.cos,
    "tanh": np.tanh,
    "linear": lambda u: u,
}


def nngp_oracle(x, x2, act, depth=1, sw=1.0, sb=1.0):
    """Deep NNGP kernel by layer-wise quadrature of the defining expectations."""
    x, x2 = np.ravel(x).astype(float), np.ravel(x2).astype(float)
    d = x.size
    k11 = sb + sw * x @ x / d
    k22 = sb + sw * x2 @ x2 / d
    k12 = sb + sw * x @ x2 / d
    h = ACT[act]
    for _ in range(depth):
        n11 = sb + sw * gauss_pair_expectation(h, k11, k11, k11)
        n22 = sb + sw * gauss_pair_expectation(h, k22, k22, k22)
        n12 = sb + sw * gauss_pair_expectation(h, k11, k12, k22)
        k11, k22, k12 = n11, n22, n12
    return k12


def rbfnet_oracle(x, x2, sw, sb, g2, m2):
    """sigma_b2 + sigma_w2 E_mu[phi(x; mu) phi(x'; mu)], mu ~ N(0, m2 I), per-axis quadrature."""
    val = 1.0
    for a, b in zip(np.ravel(x), np.ravel(x2)):
        f = lambda mu: (np.exp(-((a - mu) ** 2 + (b - mu) ** 2) / (2 * g2))  # noqa: E731
                        * np.exp(-mu * mu / (2 * m2)) / np.sqrt(2 * np.pi * m2))
        val *= integrate.quad(f, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-12)[0]
    return sb + sw * val


def dense_conditioning(K_full, n, y, noise_var):
    """Posterior of f at the last rows of a joint prior covariance, via explicit inverses.

    ``K_full`` covers [training; test] points; the first n are observed with noise.
    """
    Kxx = K_full[:n, :n] + noise_var * np.eye(n)
    Ksx = K_full[n:, :n]
    Kss = K_full[n:, n:]
    inv = np.linalg.inv(Kxx)
    return Ksx @ inv @ y, Kss - Ksx @ inv @ Ksx.T


def gaussian_kl(m0, S0, m1, S1):
    """KL(N(m0, S0) || N(m1, S1)) from the textbook formula with explicit inverses."""
    k = len(m0)
    S1i = np.linalg.inv(S1)
    dm = m1 - m0
    return 0.5 * (np.trace(S1i @ S0) + dm @ S1i @ dm - k
                  + np.linalg.slogdet(S1)[1] - np.linalg.slogdet(S0)[1])


def brute_auroc(a, b):
    """Pairwise count of (OOD > IND) plus half the ties."""
    a, b = np.asarray(a), np.asarray(b)
    gt = (b[None, :] > a[:, None]).sum()
    eq = (b[None, :] == a[:, None]).sum()
    return (gt + 0.5 * eq) / (a.size * b.size)


def central_diff(f, w, h=1e-5):
    g = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g
