"""Independent reference computations used only by the tests."""

import itertools
import math

import numpy as np
from scipy import optimize


def naive_loss(kind, x, phi):
    if kind == "gaussian":
        return (x - phi) ** 2 / 2.0
    if kind == "bernoulli":
        return math.log(1.0 + math.exp(-x * phi))
    return math.exp(phi) - x * phi


def naive_objective(x, mask, kinds, phi, lam):
    """Per-entry Python loop plus nuclear norm from eigenvalues of phi'phi."""
    n, p = x.shape
    total, count = 0.0, 0
    for i in range(n):
        for j in range(p):
            if mask[i, j]:
                total += naive_loss(kinds[j], x[i, j], phi[i, j])
                count += 1
    ev = np.linalg.eigvalsh(phi.T @ phi)
    nuc = float(np.sum(np.sqrt(np.clip(ev, 0, None))))
    return n * p / count * total + lam * nuc


def brute_force_prox(m, tau, restarts=4, seed=0):
    """argmin 1/2||Z - m||^2 + tau ||Z||_* through the smooth factored form.

    ||Z||_* = min over Z = A B' of (||A||^2 + ||B||^2) / 2, and with full
    inner dimension every local minimum of the factored problem is global.
    """
    n, p = m.shape
    k = min(n, p)
    rng = np.random.default_rng(seed)

    def fg(theta):
        a = theta[:n * k].reshape(n, k)
        b = theta[n * k:].reshape(p, k)
        r = a @ b.T - m
        f = 0.5 * np.sum(r ** 2) + 0.5 * tau * (np.sum(a ** 2) + np.sum(b ** 2))
        ga = r @ b + tau * a
        gb = r.T @ a + tau * b
        return f, np.concatenate([ga.ravel(), gb.ravel()])

    best = None
    for _ in range(restarts):
        theta0 = rng.standard_normal((n + p) * k)
        res = optimize.minimize(fg, theta0, jac=True, method="L-BFGS-B",
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000})
        if best is None or res.fun < best.fun:
            best = res
    a = best.x[:n * k].reshape(n, k)
    b = best.x[n * k:].reshape(p, k)
    return a @ b.T


def lasso_kkt_oracle(z, y, lam, tol=1e-10):
    """Lasso min ||y - Z b||^2/(2n) + lam ||b||_1 by enumerating sign patterns."""
    n, d = z.shape
    g = z.T @ z / n
    c = z.T @ y / n
    for signs in itertools.product((-1, 0, 1), repeat=d):
        s = np.array(signs, dtype=float)
        act = s != 0
        b = np.zeros(d)
        if act.any():
            b[act] = np.linalg.solve(g[np.ix_(act, act)], c[act] - lam * s[act])
            if np.any(np.sign(b[act]) != s[act]):
                continue
        grad = c - g @ b
        if np.all(np.abs(grad[~act]) <= lam + tol):
            return b
    raise AssertionError("no sign pattern satisfies the KKT conditions")


def brute_force_matches(cov, treatment):
    """Nearest opposite-arm unit by explicit double loop on Mahalanobis distance."""
    cov = np.asarray(cov, dtype=float)
    prec = np.linalg.inv(np.atleast_2d(np.cov(cov, rowvar=False)))
    n = len(treatment)
    out = []
    for i in range(n):
        best, best_d = None, math.inf
        for j in range(n):
            if treatment[j] == treatment[i]:
                continue
            diff = cov[i] - cov[j]
            d = float(diff @ prec @ diff)
            if d < best_d - 1e-12:
                best, best_d = j, d
        out.append(best)
    return np.array(out)
