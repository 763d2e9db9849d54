"""Scikit-learn compatible wrappers.

``MatrixFactorizationConfounders`` is a transformer from a covariate matrix
with ``NaN`` for missing entries to estimated confounders;
``TreatmentEffectEstimator`` turns covariates, outcome and treatment into an
effect estimate. Chained in a :class:`sklearn.pipeline.Pipeline`, the
treatment vector is routed as ``ate__treatment``::

    pipe = Pipeline([("mf", MatrixFactorizationConfounders()),
                     ("ate", TreatmentEffectEstimator("ols"))])
    pipe.fit(X, y, ate__treatment=t)
    pipe[-1].ate_
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import ate as est
from .completion import (SolverOptions, cross_validate, default_lambda_grid, effective_rank,
                         extract_confounders, solve_convex)
from .losses import DenseLoss, ObservedMatrix, as_losses, infer_loss

METHODS = ("ols", "ridge", "lasso", "logistic", "ipw", "dr", "match", "psmatch")


def check_treatment(treatment, n: int) -> np.ndarray:
    """Validate a 0/1 treatment vector of length ``n`` with both arms present."""
    t = check_array(np.asarray(treatment).reshape(-1, 1), ensure_2d=True).ravel()
    if t.size != n:
        raise ValueError(f"treatment has {t.size} entries, expected {n}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("treatment must be binary 0/1")
    if t.min() == t.max():
        raise ValueError("both treatment arms must be non-empty")
    return t.astype(float)


def check_partial_matrix(x) -> np.ndarray:
    """2-D float array where ``NaN`` marks a missing entry; infinities are rejected."""
    return check_array(x, dtype=float, ensure_all_finite="allow-nan")


class MatrixFactorizationConfounders(TransformerMixin, BaseEstimator):
    """Recover latent confounders by low-rank exponential-family completion.

    Parameters
    ----------
    loss : "auto", a loss name, or a sequence with one entry per column.
        ``"auto"`` picks bernoulli for +-1 columns and gaussian otherwise.
    penalty : float or "cv"
        Nuclear-norm weight; ``"cv"`` selects it by K-fold cross-validation
        over observed entries.
    n_components : int or None
        Number of confounder columns; ``None`` uses the numerical rank of
        the fitted natural-parameter matrix.
    """

    def __init__(self, loss="auto", penalty="cv", n_components=None, folds=5, n_lambdas=20,
                 lambda_ratio=1e-4, rank_threshold=1e-7, max_iter=500, tol=1e-6, random_state=0):
        self.loss = loss
        self.penalty = penalty
        self.n_components = n_components
        self.folds = folds
        self.n_lambdas = n_lambdas
        self.lambda_ratio = lambda_ratio
        self.rank_threshold = rank_threshold
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _observed(self, x):
        if isinstance(self.loss, str) and self.loss == "auto":
            losses = tuple(infer_loss(col) for col in x.T)
        else:
            losses = as_losses(self.loss, x.shape[1])
        return ObservedMatrix.from_dense(x, losses)

    def fit(self, X, y=None):
        x = check_partial_matrix(X)
        obs = self._observed(x)
        opts = SolverOptions(max_iters=self.max_iter, rel_tol=self.tol, seed=self.random_state)
        if isinstance(self.penalty, str):
            if self.penalty != "cv":
                raise ValueError(f"penalty must be a number or 'cv', got {self.penalty!r}")
            grid = default_lambda_grid(obs, self.n_lambdas, self.lambda_ratio)
            self.cv_result_ = cross_validate(obs, grid, self.folds, opts, self.rank_threshold)
            phi = self.cv_result_.phi
            self.penalty_ = self.cv_result_.chosen_lambda
        else:
            phi = solve_convex(obs, float(self.penalty), opts)
            self.penalty_ = float(self.penalty)
        rank = effective_rank(phi, self.rank_threshold)
        k = self.n_components if self.n_components is not None else max(rank, 1)
        est_ = extract_confounders(phi, k, self.rank_threshold)
        self.col_losses_ = obs.col_losses
        self.natural_params_ = phi.values
        self.rank_ = rank
        self.confounders_ = est_.basis
        # phi ~= confounders_ @ loadings_.T
        self.loadings_ = phi.values.T @ est_.basis
        self.n_features_in_ = x.shape[1]
        return self

    def fit_transform(self, X, y=None, **fit_params):
        """Fit and return the orthonormal confounder basis of the training rows."""
        return self.fit(X, y).confounders_

    def transform(self, X):
        """Per-row maximum-likelihood coordinates against the fitted loadings.

        Each new row is fit by Newton's method on its observed entries, with
        a tiny ridge term keeping rows with few entries well posed.
        """
        check_is_fitted(self, "loadings_")
        x = check_partial_matrix(X)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {x.shape[1]} columns, expected {self.n_features_in_}")
        data = DenseLoss(ObservedMatrix.from_dense(x, self.col_losses_), scale=1.0)
        b = self.loadings_
        k = b.shape[1]
        a = np.zeros((x.shape[0], k))
        ridge = 1e-8 * max(float(np.sum(b ** 2)), 1.0)
        for _ in range(100):
            phi = a @ b.T
            grad = data.grad(phi) @ b + ridge * a
            hess = np.einsum("ij,jk,jl->ikl", data.hess(phi), b, b) + ridge * np.eye(k)
            step = np.linalg.solve(hess, grad[..., None])[..., 0]
            a -= step
            if np.max(np.abs(step)) < 1e-10 * (1.0 + np.max(np.abs(a))):
                break
        return a


class TreatmentEffectEstimator(BaseEstimator):
    """Average treatment effect from covariates, outcome and a binary treatment.

    ``method`` is one of ``ols``, ``ridge``, ``lasso``, ``logistic`` (binary
    outcome model), ``ipw``, ``dr``, ``match`` or ``psmatch``. Weighting and
    propensity-matching methods estimate propensities by logistic
    regression. A ``None`` penalty for ridge or lasso is chosen by
    cross-validation.
    """

    def __init__(self, method="ols", penalty=None, clip=est.DEFAULT_CLIP, random_state=0):
        self.method = method
        self.penalty = penalty
        self.clip = clip
        self.random_state = random_state

    def fit(self, X, y, treatment=None):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if treatment is None:
            raise ValueError("treatment is required")
        x = check_array(X, dtype=float)
        y = check_array(np.asarray(y).reshape(-1, 1), dtype=float).ravel()
        t = check_treatment(treatment, x.shape[0])
        data = est.CausalDataset(x, t, y)
        m = self.method
        if m == "ols":
            report = est.ols_ate(data)
        elif m in ("ridge", "lasso"):
            pen = self.penalty
            if pen is None:
                pen = est.select_penalty_cv(data, m, seed=self.random_state)
            report = est.ridge_ate(data, pen) if m == "ridge" else est.lasso_ate(data, pen)
        elif m == "logistic":
            report = est.logistic_outcome_ate(data)
        elif m == "match":
            report = est.mahalanobis_match_ate(data)
        else:
            e = est.logistic_propensity(x, t)
            self.propensities_ = e
            if m == "psmatch":
                report = est.propensity_match_ate(data, e)
            elif m == "ipw":
                report = est.ipw_ate(data, e, self.clip)
            else:
                report = est.doubly_robust_ate(data, e, self.clip)
        self.report_ = report
        self.ate_ = report.tau_hat
        self.n_features_in_ = x.shape[1]
        return self

    def predict(self, X):
        """The fitted effect repeated once per row of ``X``."""
        check_is_fitted(self, "ate_")
        x = check_array(X, dtype=float)
        return np.full(x.shape[0], self.ate_)
