"""Average treatment effect estimators and the measurement-noise bias formula.

All estimators take a :class:`CausalDataset` whose ``covariates`` may be the
raw noisy covariates, an estimated confounder basis, or the true confounders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit

DEFAULT_CLIP = (0.01, 0.99)


class RankDeficiencyError(ValueError):
    """Design matrix is not of full column rank.

    ``columns`` names the columns involved in the detected linear dependence.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SeparationError(RuntimeError):
    """Binary labels are (quasi-)separated; ``direction`` is the separating vector."""

    def __init__(self, message, direction):
        super().__init__(message)
        self.direction = np.asarray(direction)


class SingularCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class CausalDataset:
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    true_confounders: np.ndarray = None
    potential_outcomes: np.ndarray = None

    def __post_init__(self):
        t = np.asarray(self.treatment, dtype=float).ravel()
        y = np.asarray(self.outcome, dtype=float).ravel()
        c = np.asarray(self.covariates, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        n = t.size
        if y.size != n or c.shape[0] != n:
            raise ValueError("covariates, treatment and outcome must share their length")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("treatment must be binary 0/1")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(y))):
            raise ValueError("covariates and outcome must be finite")
        object.__setattr__(self, "covariates", c)
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "outcome", y)
        if self.true_confounders is not None:
            u = np.asarray(self.true_confounders, dtype=float)
            u = u[:, None] if u.ndim == 1 else u
            if u.shape[0] != n:
                raise ValueError("true_confounders length mismatch")
            object.__setattr__(self, "true_confounders", u)
        if self.potential_outcomes is not None:
            po = np.asarray(self.potential_outcomes, dtype=float)
            if po.shape != (n, 2):
                raise ValueError("potential_outcomes must be an (N, 2) array of (Y(0), Y(1))")
            object.__setattr__(self, "potential_outcomes", po)

    @property
    def n(self) -> int:
        return self.treatment.size

    def with_covariates(self, covariates) -> "CausalDataset":
        return CausalDataset(covariates, self.treatment, self.outcome,
                             self.true_confounders, self.potential_outcomes)

    def sample_ate(self) -> float:
        """Mean of ``Y(1) - Y(0)`` when both potential outcomes are known."""
        if self.potential_outcomes is None:
            raise ValueError("potential outcomes are not available")
        return float(np.mean(self.potential_outcomes[:, 1] - self.potential_outcomes[:, 0]))


@dataclass
class AteReport:
    method: str
    tau_hat: float
    n_used: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.tau_hat):
            raise ValueError(f"{self.method}: non-finite effect estimate")

    def to_dict(self) -> dict:
        return {"method": self.method, "tau_hat": self.tau_hat, "n_used": self.n_used,
                "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class GenerativeSpec:
    """Parameters of the linear outcome model with proxy covariates.

    ``noise`` selects how covariates are drawn from ``U V'``: ``"gaussian"``
    adds ``N(0, sigma_w**2)`` noise, ``"bernoulli"`` draws +-1 signs with
    success probability ``sigmoid(U V')``.
    """

    alpha: tuple = (-2.0, 3.0, -2.0, -3.0, -2.0)
    beta: tuple = (1.0, 2.0, 2.0, 2.0, 2.0)
    tau: float = 2.0
    outcome_noise_sd: float = 1.0
    noise: str = "gaussian"
    sigma_w: float = math.sqrt(5.0)
    V: np.ndarray = None

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).ravel()
        b = np.asarray(self.beta, dtype=float).ravel()
        if a.size != b.size:
            raise ValueError("alpha and beta must have the same length r")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        if self.noise not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown noise kind {self.noise!r}")
        if self.V is not None:
            v = np.asarray(self.V, dtype=float)
            if v.ndim != 2 or v.shape[1] != a.size:
                raise ValueError(f"V must be p x {a.size}")
            object.__setattr__(self, "V", v)

    @property
    def r(self) -> int:
        return self.alpha.size

    def with_v(self, v) -> "GenerativeSpec":
        return GenerativeSpec(self.alpha, self.beta, self.tau, self.outcome_noise_sd,
                              self.noise, self.sigma_w, v)


# ---------------------------------------------------------------- regression


def _column_names(d):
    return ["intercept", "treatment"] + [f"covariate[{j}]" for j in range(d)]


def _design(data: CausalDataset) -> np.ndarray:
    return np.column_stack([np.ones(data.n), data.treatment, data.covariates])


def check_full_rank(design, names=None, rel_tol: float = 1e-10):
    """Raise :class:`RankDeficiencyError` naming the collinear columns."""
    names = names or [f"column[{j}]" for j in range(design.shape[1])]
    if design.shape[0] < design.shape[1]:
        raise RankDeficiencyError(
            f"{design.shape[0]} rows cannot identify {design.shape[1]} coefficients", names)
    _, s, vt = np.linalg.svd(design, full_matrices=False)
    small = s <= rel_tol * s[0]
    if small.any():
        null = vt[small]
        involved = np.flatnonzero(np.abs(null).max(axis=0) > 1e-6)
        cols = [names[j] for j in involved]
        raise RankDeficiencyError(f"design matrix is rank deficient; collinear columns: {cols}", cols)


def ols_ate(data: CausalDataset) -> AteReport:
    """Treatment coefficient of the least-squares fit on ``[1, T, covariates]``."""
    d = _design(data)
    check_full_rank(d, _column_names(data.covariates.shape[1]))
    coef, *_ = np.linalg.lstsq(d, data.outcome, rcond=None)
    return AteReport("ols", float(coef[1]), data.n, {"n_covariates": data.covariates.shape[1]})


def _standardized(data):
    c = data.covariates
    sd = c.std(axis=0)
    if np.any(sd == 0):
        raise RankDeficiencyError("constant covariate columns",
                                  [f"covariate[{j}]" for j in np.flatnonzero(sd == 0)])
    z = (c - c.mean(axis=0)) / sd
    base = np.column_stack([np.ones(data.n), data.treatment])
    return z, base


def _residualize(base, *arrays):
    q, _ = np.linalg.qr(base)
    return [a - q @ (q.T @ a) for a in arrays]


def _finish(data, z, base, coef_z, method, penalty):
    resid_target = data.outcome - z @ coef_z
    head, *_ = np.linalg.lstsq(base, resid_target, rcond=None)
    return AteReport(method, float(head[1]), data.n,
                     {"penalty": penalty, "n_nonzero": int(np.count_nonzero(coef_z)),
                      "standardized_coefficients": coef_z.tolist()})


def ridge_ate(data: CausalDataset, penalty: float) -> AteReport:
    """Ridge fit on standardized covariates; intercept and treatment unpenalized.

    Minimizes ``||y - b0 - tau T - Z b||^2 / (2N) + penalty/2 ||b||^2``.
    """
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    check_full_rank(_design(data), _column_names(data.covariates.shape[1]))
    z, base = _standardized(data)
    zr, yr = _residualize(base, z, data.outcome)
    gram = zr.T @ zr + data.n * penalty * np.eye(z.shape[1])
    coef = linalg.solve(gram, zr.T @ yr, assume_a="pos") if z.shape[1] else np.zeros(0)
    return _finish(data, z, base, coef, "ridge", penalty)


def lasso_max_penalty(data: CausalDataset) -> float:
    """Smallest lasso penalty at which every covariate coefficient is zero."""
    z, base = _standardized(data)
    zr, yr = _residualize(base, z, data.outcome)
    return float(np.max(np.abs(zr.T @ yr)) / data.n) if z.shape[1] else 0.0


def _lasso_cd(zr, yr, penalty, tol=1e-8, max_sweeps=100_000):
    n, d = zr.shape
    gram = zr.T @ zr / n
    corr = zr.T @ yr / n
    diag = np.diag(gram).copy()
    beta = np.zeros(d)
    grad_part = corr.copy()  # corr - gram @ beta
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(d):
            rho = grad_part[j] + diag[j] * beta[j]
            new = np.sign(rho) * max(abs(rho) - penalty, 0.0) / diag[j]
            delta = new - beta[j]
            if delta != 0.0:
                grad_part -= gram[:, j] * delta
                beta[j] = new
                max_delta = max(max_delta, abs(delta))
        if max_delta < tol:
            return beta, True
    return beta, False


def lasso_ate(data: CausalDataset, penalty: float) -> AteReport:
    """Lasso on standardized covariates by cyclic coordinate descent.

    Minimizes ``||y - b0 - tau T - Z b||^2 / (2N) + penalty ||b||_1``; the
    intercept and treatment are profiled out exactly, so they are never
    penalized.
    """
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    check_full_rank(_design(data), _column_names(data.covariates.shape[1]))
    z, base = _standardized(data)
    zr, yr = _residualize(base, z, data.outcome)
    coef, ok = _lasso_cd(zr, yr, penalty) if z.shape[1] else (np.zeros(0), True)
    report = _finish(data, z, base, coef, "lasso", penalty)
    report.diagnostics["converged"] = ok
    return report


def select_penalty_cv(data: CausalDataset, kind: str, penalties=None, folds: int = 5,
                      seed: int = 0) -> float:
    """Pick a ridge or lasso penalty by K-fold prediction error on the outcome."""
    if kind not in ("ridge", "lasso"):
        raise ValueError(f"unknown penalty kind {kind!r}")
    if penalties is None:
        if kind == "lasso":
            top = lasso_max_penalty(data)
            penalties = np.geomspace(top, top * 1e-3, 20) if top > 0 else np.zeros(1)
        else:
            penalties = np.geomspace(1e2, 1e-4, 20)
    assign = np.random.default_rng(seed).permutation(data.n) % folds
    scores = np.zeros(len(penalties))
    for f in range(folds):
        train, test = assign != f, assign == f
        tr = CausalDataset(data.covariates[train], data.treatment[train], data.outcome[train])
        mu, sd = tr.covariates.mean(axis=0), tr.covariates.std(axis=0)
        for i, pen in enumerate(penalties):
            z, base = _standardized(tr)
            zr, yr = _residualize(base, z, tr.outcome)
            if kind == "ridge":
                coef = linalg.solve(zr.T @ zr + tr.n * pen * np.eye(z.shape[1]), zr.T @ yr,
                                    assume_a="pos")
            else:
                coef = _lasso_cd(zr, yr, pen, tol=1e-6)[0]
            head, *_ = np.linalg.lstsq(base, tr.outcome - z @ coef, rcond=None)
            zt = (data.covariates[test] - mu) / sd
            pred = head[0] + head[1] * data.treatment[test] + zt @ coef
            scores[i] += np.sum((data.outcome[test] - pred) ** 2)
    best = np.flatnonzero(scores <= scores.min() * (1 + 1e-12))
    return float(np.max(np.asarray(penalties)[best]))


# ---------------------------------------------------------------- logistic


def _separation_direction(design, labels):
    """Nonzero ``w`` with ``s_i x_i'w >= 0`` for all i, if one exists."""
    s = np.where(labels > 0.5, 1.0, -1.0)
    a = s[:, None] * design
    d = design.shape[1]
    res = optimize.linprog(-a.sum(axis=0), A_ub=-a, b_ub=np.zeros(len(a)),
                           bounds=[(-1, 1)] * d, method="highs")
    if res.status == 0 and -res.fun > 1e-7:
        return res.x
    return None


def fit_logistic(design, labels, tol: float = 1e-8, max_iter: int = 100):
    """Maximum likelihood logistic regression by Newton's method.

    Convergence is declared when the max-norm of the mean log-likelihood
    gradient is below ``tol``.

    Raises
    ------
    SeparationError
        If the labels are (quasi-)completely separated by the design.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(labels, dtype=float)
    n = y.size
    coef = np.zeros(x.shape[1])

    def nll(c):
        eta = x @ c
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta))

    cur = nll(coef)
    converged = False
    polished = False
    for _ in range(max_iter):
        p = expit(x @ coef)
        grad = x.T @ (p - y) / n
        if np.max(np.abs(grad)) < tol:
            # one more Newton step: quadratic convergence takes the
            # coefficients to rounding level
            if polished:
                converged = True
                break
            polished = True
        w = p * (1 - p)
        hess = (x * w[:, None]).T @ x / n + 1e-14 * np.eye(x.shape[1])
        try:
            step = linalg.solve(hess, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            cand = coef - t * step
            val = nll(cand)
            if val <= cur:
                break
            t *= 0.5
        coef, cur = cand, val
    p = expit(x @ coef)
    if not converged or np.min(p * (1 - p)) < 1e-8:
        direction = _separation_direction(x, y)
        if direction is not None:
            raise SeparationError("labels are separated by a linear combination of the "
                                  "covariates; the MLE does not exist", direction)
    if not converged:
        raise RuntimeError("logistic regression did not converge")
    return coef


def logistic_propensity(covariates, treatment) -> np.ndarray:
    """Propensity scores from a logistic regression of treatment on covariates."""
    t = np.asarray(treatment, dtype=float).ravel()
    c = np.asarray(covariates, dtype=float).reshape(t.size, -1)
    if t.min() == t.max():
        raise ValueError("both treatment arms must be non-empty")
    design = np.column_stack([np.ones(t.size), c])
    return expit(design @ fit_logistic(design, t))


def logistic_outcome_ate(data: CausalDataset) -> AteReport:
    """Standardized effect from a logistic outcome model on ``[1, T, covariates]``.

    Outcomes must be 0/1. Returns the mean difference of predicted risks with
    treatment switched on and off for every unit.
    """
    y = data.outcome
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic outcome model needs binary 0/1 outcomes")
    d = _design(data)
    check_full_rank(d, _column_names(data.covariates.shape[1]))
    coef = fit_logistic(d, y)
    on, off = d.copy(), d.copy()
    on[:, 1], off[:, 1] = 1.0, 0.0
    tau = float(np.mean(expit(on @ coef) - expit(off @ coef)))
    return AteReport("logistic", tau, data.n, {"log_odds_treatment": float(coef[1])})


# ---------------------------------------------------------------- weighting


def _clip(propensities, clip):
    e = np.asarray(propensities, dtype=float).ravel()
    lo, hi = clip
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"invalid clip bounds {clip}")
    n_low, n_high = int(np.sum(e < lo)), int(np.sum(e > hi))
    return np.clip(e, lo, hi), {"clipped_low": n_low, "clipped_high": n_high,
                                "propensity_min": float(e.min()), "propensity_max": float(e.max())}


def ipw_ate(data: CausalDataset, propensities, clip=DEFAULT_CLIP) -> AteReport:
    """Hajek inverse-propensity estimator (weights normalized within each arm)."""
    e, diag = _clip(propensities, clip)
    if e.size != data.n:
        raise ValueError("propensities length mismatch")
    t, y = data.treatment, data.outcome
    w1, w0 = t / e, (1 - t) / (1 - e)
    if w1.sum() <= 0 or w0.sum() <= 0:
        raise ValueError("a treatment arm has zero total weight")
    tau = float(np.sum(w1 * y) / w1.sum() - np.sum(w0 * y) / w0.sum())
    return AteReport("ipw", tau, data.n, diag)


def _arm_fit(c, y, arm_name):
    d = np.column_stack([np.ones(len(y)), c])
    if len(y) < c.shape[1] + 2:
        raise RankDeficiencyError(f"{arm_name} arm has {len(y)} units for {c.shape[1]} covariates")
    check_full_rank(d, ["intercept"] + [f"covariate[{j}]" for j in range(c.shape[1])])
    return np.linalg.lstsq(d, y, rcond=None)[0]


def doubly_robust_ate(data: CausalDataset, propensities, clip=DEFAULT_CLIP) -> AteReport:
    """Augmented IPW with separate linear outcome models in each arm."""
    e, diag = _clip(propensities, clip)
    t, y, c = data.treatment, data.outcome, data.covariates
    treated = t == 1
    b1 = _arm_fit(c[treated], y[treated], "treated")
    b0 = _arm_fit(c[~treated], y[~treated], "control")
    full = np.column_stack([np.ones(data.n), c])
    mu1, mu0 = full @ b1, full @ b0
    scores = mu1 - mu0 + t * (y - mu1) / e - (1 - t) * (y - mu0) / (1 - e)
    diag["regression_estimate"] = float(np.mean(mu1 - mu0))
    return AteReport("dr", float(np.mean(scores)), data.n, diag)


# ---------------------------------------------------------------- matching


def _nearest_opposite(points, treatment, chunk=256):
    """Index of each unit's nearest opposite-arm unit; ties go to the lowest index."""
    n = len(treatment)
    match = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for arm in (0.0, 1.0):
        src = np.flatnonzero(treatment == arm)
        dst = np.flatnonzero(treatment != arm)
        pd = points[dst]
        for start in range(0, src.size, chunk):
            rows = src[start:start + chunk]
            diff = points[rows][:, None, :] - pd[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            best = np.argmin(d2, axis=1)
            match[rows] = dst[best]
            dist[rows] = np.sqrt(d2[np.arange(rows.size), best])
    return match, dist


def _match_estimate(data, points, method):
    t, y = data.treatment, data.outcome
    if t.min() == t.max():
        raise ValueError("both treatment arms must be non-empty")
    match, dist = _nearest_opposite(points, t)
    y1 = np.where(t == 1, y, y[match])
    y0 = np.where(t == 0, y, y[match])
    diag = {"mean_match_distance": float(dist.mean()),
            "distinct_controls_used": int(np.unique(match[t == 1]).size),
            "distinct_treated_used": int(np.unique(match[t == 0]).size)}
    return AteReport(method, float(np.mean(y1 - y0)), data.n, diag), match


def mahalanobis_match_ate(data: CausalDataset, return_matches: bool = False):
    """1-nearest-neighbour matching with replacement on Mahalanobis distance.

    The covariance is estimated from the pooled covariates. Every unit is
    matched to its closest unit in the other arm and the effect is the mean
    of imputed ``Y(1) - Y(0)`` over all units.
    """
    c = data.covariates
    if c.shape[1] == 0:
        points = np.zeros((data.n, 0))
    else:
        cov = np.atleast_2d(np.cov(c, rowvar=False))
        ev = np.linalg.eigvalsh(cov)
        if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
            raise SingularCovarianceError(
                "pooled covariance is singular; drop collinear covariates or regularize")
        chol = linalg.cholesky(cov, lower=True)
        points = linalg.solve_triangular(chol, (c - c.mean(axis=0)).T, lower=True).T
    report, match = _match_estimate(data, points, "match")
    return (report, match) if return_matches else report


def propensity_match_ate(data: CausalDataset, propensities, return_matches: bool = False):
    """1-nearest-neighbour matching with replacement on ``|e_i - e_j|``."""
    e = np.asarray(propensities, dtype=float).ravel()
    if e.size != data.n:
        raise ValueError("propensities length mismatch")
    report, match = _match_estimate(data, e[:, None], "psmatch")
    report.method = "psmatch"
    return (report, match) if return_matches else report


# ---------------------------------------------------------------- bias formula


@dataclass(frozen=True)
class TreatmentMoments:
    """Population moments entering the OLS measurement-noise bias.

    ``e_tu`` is E[T U] (length r), ``e_uu`` is E[U U'] (r x r) and ``e_tt``
    the treatment second moment; with ``centered=True`` the latter two are
    replaced by covariances, which is what an intercept-bearing regression
    sees.
    """

    e_tu: np.ndarray
    e_uu: np.ndarray
    e_tt: float
    centered: bool = True
    e_tu_se: np.ndarray = None
    e_tt_se: float = None


def _ensure_invertible(m, what):
    m = np.atleast_2d(m)
    if not np.all(np.isfinite(m)) or np.linalg.cond(m) > 1e12:
        raise np.linalg.LinAlgError(f"{what} is singular or ill-conditioned")


def bias_oracle(spec: GenerativeSpec, moments: TreatmentMoments) -> float:
    """Asymptotic bias of OLS of Y on (T, X) with X = U V' + W, Var(W) = sigma_w^2 I.

    numerator   = E[TU] E[UU]^-1 (V'V / sw^2 + E[UU]^-1)^-1 alpha
    denominator = E[T^2] - E[TU] ((V'V / sw^2)^-1 + E[UU])^-1 E[UT]
    """
    if spec.V is None:
        raise ValueError("spec.V is required")
    if not spec.sigma_w > 0:
        raise ValueError("sigma_w must be positive")
    e_tu = np.asarray(moments.e_tu, dtype=float).ravel()
    e_uu = np.atleast_2d(np.asarray(moments.e_uu, dtype=float))
    vtv = spec.V.T @ spec.V
    _ensure_invertible(e_uu, "E[U'U]")
    _ensure_invertible(vtv, "V'V")
    s2 = spec.sigma_w ** 2
    e_uu_inv = np.linalg.inv(e_uu)
    inner = np.linalg.solve(vtv / s2 + e_uu_inv, spec.alpha)
    num = e_tu @ e_uu_inv @ inner
    den = moments.e_tt - e_tu @ np.linalg.solve(np.linalg.inv(vtv / s2) + e_uu, e_tu)
    return float(num / den)


def moments_quadrature(beta, centered: bool = True, n_nodes: int = 120) -> TreatmentMoments:
    """Exact moments for U ~ N(0, I), T | U ~ Bernoulli(sigmoid(beta'U)).

    Uses ``E[sigmoid(beta'U) U] = beta E[sigmoid'(beta'U)]`` and a
    probabilists' Gauss-Hermite rule in the single direction ``beta``.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    b = np.linalg.norm(beta)
    s = expit(b * nodes)
    e_t = float(weights @ s)
    e_tu = beta * float(weights @ (s * (1 - s)))
    e_tt = e_t * (1 - e_t) if centered else e_t
    return TreatmentMoments(e_tu, np.eye(beta.size), e_tt, centered)


def moments_monte_carlo(beta, n_draws: int = 10 ** 6, seed: int = 0,
                        centered: bool = True) -> TreatmentMoments:
    """Monte Carlo moments for U ~ N(0, I), T ~ Bernoulli(sigmoid(beta'U)), with SEs."""
    beta = np.asarray(beta, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_draws, beta.size))
    t = (rng.random(n_draws) < expit(u @ beta)).astype(float)
    if centered:
        tc = t - t.mean()
        uc = u - u.mean(axis=0)
    else:
        tc, uc = t, u
    tu = tc[:, None] * uc
    e_tu = tu.mean(axis=0)
    e_uu = uc.T @ uc / n_draws
    e_tt = float(np.mean(tc ** 2))
    return TreatmentMoments(e_tu, e_uu, e_tt, centered,
                            tu.std(axis=0, ddof=1) / math.sqrt(n_draws),
                            float(np.std(tc ** 2, ddof=1) / math.sqrt(n_draws)))


def known_v_estimate(x, v) -> np.ndarray:
    """Least-squares confounders given known loadings: ``X V (V'V)^-1``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    vtv = v.T @ v
    _ensure_invertible(vtv, "V'V")
    return np.linalg.solve(vtv, (x @ v).T).T
