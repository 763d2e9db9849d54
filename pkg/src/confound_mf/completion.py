"""Exponential-family low-rank matrix completion.

Two formulations are solved:

* convex: ``min_Phi  s * sum_Omega loss(x, Phi) + lam * ||Phi||_*`` by monotone
  proximal gradient with backtracking (``s = N p / |Omega|``);
* factored: ``min_{U,V}  s * sum_Omega loss(x, U_i . V_j) + lam/2 (||U||_F^2 + ||V||_F^2)``
  by alternating row-wise Newton fits.

For ``k`` at least the rank of the convex solution both share the same
optimal value, since ``||Phi||_* = min_{U V^T = Phi} (||U||_F^2 + ||V||_F^2) / 2``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .losses import DenseLoss, FactorPair, NaturalParamMatrix, ObservedMatrix

logger = logging.getLogger(__name__)


class DivergedError(RuntimeError):
    """The solver produced a non-finite objective or could not find a descent step."""


class RankWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 500
    rel_tol: float = 1e-6
    backtracking_shrink: float = 0.5
    initial_step: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not 0 < self.backtracking_shrink < 1:
            raise ValueError("backtracking_shrink must lie in (0, 1)")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")


def _svt_parts(m, tau):
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    return (u[:, :k] * s[:k]) @ vt[:k], float(s.sum()), k


def svt(m, tau: float) -> np.ndarray:
    """Singular value soft-thresholding, the prox operator of ``tau * ||.||_*``."""
    m = np.asarray(m, dtype=float)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix must be finite")
    return _svt_parts(m, tau)[0]


def lambda_max(obs: ObservedMatrix) -> float:
    """Smallest ``lam`` for which the convex solution is identically zero."""
    g = DenseLoss(obs).grad(np.zeros(obs.shape))
    return float(np.linalg.norm(g, 2))


def default_lambda_grid(obs: ObservedMatrix, n: int = 20, ratio: float = 1e-4) -> np.ndarray:
    """``n`` log-spaced values from ``lambda_max`` down to ``ratio * lambda_max``."""
    top = lambda_max(obs)
    if top == 0:
        return np.zeros(1)
    return np.geomspace(top, top * ratio, n)


def theoretical_lambda(obs: ObservedMatrix, sigma_prime: float, rank: int, c0: float) -> float:
    """Rate-optimal penalty ``2 c0 s' sqrt(Np) sqrt(r Nbar log Nbar / |Omega|)``.

    ``c0`` is an unidentified constant; callers must supply it.
    """
    n, p = obs.shape
    nbar = max(n, p)
    return 2.0 * c0 * sigma_prime * math.sqrt(n * p) * math.sqrt(
        rank * nbar * math.log(nbar) / obs.n_observed)


def solve_convex(obs: ObservedMatrix, lam: float, opts: SolverOptions = None,
                 init=None) -> NaturalParamMatrix:
    """Proximal gradient for the nuclear-norm penalized likelihood.

    Trial steps use the Barzilai-Borwein length and are shrunk until the
    quadratic upper bound holds, which makes the composite objective
    non-increasing. Stops when the relative decrease drops below
    ``opts.rel_tol``.

    Raises
    ------
    DivergedError
        If the objective becomes non-finite or no step length is accepted.
    """
    opts = opts or SolverOptions()
    if obs.n_observed < 1:
        raise ValueError("need at least one observed entry")
    if not (lam >= 0 and math.isfinite(lam)):
        raise ValueError("lambda must be finite and nonnegative")
    data = DenseLoss(obs)
    phi = np.zeros(obs.shape) if init is None else np.array(init, dtype=float)
    f = data.value(phi)
    obj = f if init is None else f + lam * float(np.linalg.svd(phi, compute_uv=False).sum())
    if not math.isfinite(obj):
        raise DivergedError("objective is not finite at the starting point")
    trace = [obj]
    g = data.grad(phi)
    step = opts.initial_step
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        while True:
            cand, nuc, _ = _svt_parts(phi - step * g, step * lam)
            fc = data.value(cand)
            d = cand - phi
            bound = f + float(np.vdot(g, d)) + float(np.vdot(d, d)) / (2.0 * step)
            if math.isfinite(fc) and fc <= bound + 1e-12 * abs(f):
                break
            step *= opts.backtracking_shrink
            if step < 1e-30:
                raise DivergedError(f"no acceptable step at iteration {it}")
        new_obj = fc + lam * nuc
        if not math.isfinite(new_obj):
            raise DivergedError(f"objective became non-finite at iteration {it}")
        g_new = data.grad(cand)
        s, y = d, g_new - g
        sy = float(np.vdot(s, y))
        phi, f, g = cand, fc, g_new
        trace.append(new_obj)
        decrease = obj - new_obj
        obj = new_obj
        if decrease <= opts.rel_tol * max(abs(obj), 1e-12):
            converged = True
            break
        step = min(float(np.vdot(s, s)) / sy, 1e10) if sy > 0 else step / opts.backtracking_shrink
    if not converged:
        logger.info("solve_convex stopped at max_iters=%d (lam=%g)", opts.max_iters, lam)
    return NaturalParamMatrix(phi, tuple(trace), it, converged)


def factored_objective(obs: ObservedMatrix, left, right, lam: float) -> float:
    data = DenseLoss(obs)
    return data.value(left @ right.T) + 0.5 * lam * (np.sum(left ** 2) + np.sum(right ** 2))


class _BlockNewton:
    """Row-wise Newton solver for one factor with the other held fixed."""

    def __init__(self, data: DenseLoss, lam: float):
        self.data = data
        self.lam = lam
        self.fallbacks = 0

    def _phi(self, a, b, by_rows):
        return a @ b.T if by_rows else b @ a.T

    def _row_obj(self, a, b, by_rows):
        with np.errstate(over="ignore", invalid="ignore"):
            cell = self.data.elementwise(self._phi(a, b, by_rows))
        cell = np.where(self.data.mask, cell, 0.0) * self.data.scale
        sums = cell.sum(axis=1 if by_rows else 0)
        return sums + 0.5 * self.lam * np.sum(a ** 2, axis=1)

    def _grad(self, a, b, by_rows):
        g = self.data.grad(self._phi(a, b, by_rows))
        return (g @ b if by_rows else g.T @ b) + self.lam * a

    def update(self, a, b, by_rows, max_newton=30):
        k = a.shape[1]
        eye = np.eye(k)
        f0 = self._row_obj(a, b, by_rows)
        for _ in range(max_newton):
            phi = self._phi(a, b, by_rows)
            g = self.data.grad(phi)
            h = self.data.hess(phi)
            if by_rows:
                grad = g @ b + self.lam * a
                hess = np.einsum("ij,jk,jl->ikl", h, b, b)
            else:
                grad = g.T @ b + self.lam * a
                hess = np.einsum("ij,ik,il->jkl", h, b, b)
            hess += (self.lam + 1e-12) * eye
            try:
                d = -np.linalg.solve(hess, grad[..., None])[..., 0]
            except np.linalg.LinAlgError:
                d = -grad
            slope = np.einsum("ik,ik->i", grad, d)
            if np.max(-slope) <= 1e-13 * (1.0 + np.max(np.abs(f0))):
                break
            bad = ~(slope < 0) | ~np.all(np.isfinite(d), axis=1)
            d[bad] = 0.0
            t = np.ones(a.shape[0])
            todo = ~bad
            new = a.copy()
            f_new = f0.copy()
            for _ in range(40):
                if not todo.any():
                    break
                trial = a + t[:, None] * d
                f_trial = self._row_obj(trial, b, by_rows)
                ok = todo & np.isfinite(f_trial) & (f_trial <= f0 + 1e-4 * t * slope)
                new[ok] = trial[ok]
                f_new[ok] = f_trial[ok]
                todo &= ~ok
                t[todo] *= 0.5
            failed = np.flatnonzero(bad | todo)
            for i in failed:
                new[i], f_new[i] = self._bisect_row(new, i, b, by_rows, f_new[i])
            if np.max(f0 - f_new) <= 1e-15 * (1.0 + np.max(np.abs(f0))):
                a, f0 = new, f_new
                break
            a, f0 = new, f_new
        return a

    def _bisect_row(self, a, i, b, by_rows, f_i):
        """Exact line minimization along the negative gradient by bisection."""
        self.fallbacks += 1
        logger.warning("Newton step failed for %s %d; using gradient bisection",
                       "row" if by_rows else "column", i)
        g = self._grad(a, b, by_rows)[i]
        if not np.any(g):
            return a[i], f_i

        def deriv(t):
            trial = a.copy()
            trial[i] = a[i] - t * g
            return -float(g @ self._grad(trial, b, by_rows)[i])

        hi = 1e-8
        while deriv(hi) < 0 and hi < 1e12:
            hi *= 2.0
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if deriv(mid) < 0:
                lo = mid
            else:
                hi = mid
        row = a[i] - lo * g
        trial = a.copy()
        trial[i] = row
        f_row = self._row_obj(trial, b, by_rows)[i]
        if not f_row <= f_i:
            return a[i], f_i
        return row, f_row


def solve_nonconvex(obs: ObservedMatrix, k: int, lam: float, opts: SolverOptions = None,
                    init: tuple = None) -> FactorPair:
    """Alternating minimization of the factored objective.

    Each half-step minimizes over all rows of one factor; rows decouple and
    are fit by damped Newton iterations, with a gradient bisection line
    search when a Newton step fails to decrease the row objective.
    """
    opts = opts or SolverOptions()
    n, p = obs.shape
    if not 1 <= k <= min(n, p):
        raise ValueError(f"k must lie in [1, {min(n, p)}], got {k}")
    if not (lam >= 0 and math.isfinite(lam)):
        raise ValueError("lambda must be finite and nonnegative")
    if obs.n_observed < 1:
        raise ValueError("need at least one observed entry")
    data = DenseLoss(obs)
    if init is None:
        rng = np.random.default_rng(opts.seed)
        u = rng.standard_normal((n, k)) / math.sqrt(k)
        v = rng.standard_normal((p, k)) / math.sqrt(k)
    else:
        u, v = (np.array(m, dtype=float) for m in init)

    def total(u, v):
        return data.value(u @ v.T) + 0.5 * lam * (np.sum(u ** 2) + np.sum(v ** 2))

    solver = _BlockNewton(data, lam)
    obj = total(u, v)
    if not math.isfinite(obj):
        raise DivergedError("objective is not finite at the starting point")
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        u = solver.update(u, v, by_rows=True)
        v = solver.update(v, u, by_rows=False)
        new_obj = total(u, v)
        if not math.isfinite(new_obj):
            raise DivergedError(f"objective became non-finite at alternation {it}")
        trace.append(new_obj)
        decrease = obj - new_obj
        obj = new_obj
        if decrease <= opts.rel_tol * max(abs(obj), 1e-12):
            converged = True
            break
    return FactorPair(u, v, tuple(trace), it, converged, solver.fallbacks)


def _fix_signs(vecs):
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    return vecs


@dataclass(frozen=True)
class ConfounderEstimate:
    """Top left singular vectors of a natural-parameter estimate."""

    basis: np.ndarray
    singular_values: np.ndarray
    numerical_rank: int
    rank_deficient: bool = False


def extract_confounders(phi_hat, r_hat: int, rel_threshold: float = 1e-7) -> ConfounderEstimate:
    """Orthonormal ``N x r_hat`` estimate of the confounder column space.

    Columns are sign-normalized so their first nonzero entry is positive.
    Asking for more columns than the numerical rank is allowed but flagged.
    """
    phi = np.asarray(getattr(phi_hat, "values", phi_hat), dtype=float)
    if not 1 <= r_hat <= min(phi.shape):
        raise ValueError(f"r_hat must lie in [1, {min(phi.shape)}], got {r_hat}")
    u, s, _ = np.linalg.svd(phi, full_matrices=False)
    rank = _rank_from_singular_values(s, rel_threshold)
    deficient = r_hat > rank
    if deficient:
        warnings.warn(f"r_hat={r_hat} exceeds numerical rank {rank}", RankWarning, stacklevel=2)
    basis = _fix_signs(u[:, :r_hat].copy())
    return ConfounderEstimate(basis, s[:r_hat].copy(), rank, deficient)


def _rank_from_singular_values(s, rel_threshold):
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_threshold * s[0]))


def effective_rank(phi_hat, rel_threshold: float = 1e-7) -> int:
    """Number of singular values above ``rel_threshold * sigma_1``."""
    if not 0 < rel_threshold < 1:
        raise ValueError("rel_threshold must lie in (0, 1)")
    phi = np.asarray(getattr(phi_hat, "values", phi_hat), dtype=float)
    return _rank_from_singular_values(np.linalg.svd(phi, compute_uv=False), rel_threshold)


@dataclass(frozen=True)
class CvResult:
    lambda_grid: np.ndarray
    heldout_mean: np.ndarray
    heldout_std: np.ndarray
    chosen_lambda: float
    chosen_rank: int
    fold_losses: np.ndarray = field(repr=False)
    fold_assignment: np.ndarray = field(repr=False)
    flagged_folds: tuple = ()
    phi: NaturalParamMatrix = field(default=None, repr=False)


def fold_assignment(n_observed: int, folds: int, seed: int) -> np.ndarray:
    """Uniformly random balanced partition of observed entries into folds."""
    perm = np.random.default_rng(seed).permutation(n_observed)
    out = np.empty(n_observed, dtype=np.int64)
    out[perm] = np.arange(n_observed) % folds
    return out


def _heldout_loss(obs: ObservedMatrix, test, phi):
    rows, cols, x = obs.rows[test], obs.cols[test], obs.values[test]
    kinds = list(dict.fromkeys(obs.col_losses))
    kind_of_col = np.array([kinds.index(k) for k in obs.col_losses])
    vals = np.empty(x.size)
    for idx, kind in enumerate(kinds):
        sel = kind_of_col[cols] == idx
        vals[sel] = kind.value(x[sel], phi[rows[sel], cols[sel]])
    return float(vals.mean())


def _fold_path(obs, assign, fold, order, grid, opts, warm_start):
    train = obs.subset(assign != fold)
    test = assign == fold
    losses = np.empty(len(grid))
    prev = None
    for idx in order:
        sol = solve_convex(train, grid[idx], opts, init=prev if warm_start else None)
        prev = sol.values
        losses[idx] = _heldout_loss(obs, test, sol.values)
    m = train.mask()
    empties = bool((~m.any(axis=1)).any() or (~m.any(axis=0)).any())
    return losses, empties


def cross_validate(obs: ObservedMatrix, lambda_grid=None, folds: int = 5,
                   opts: SolverOptions = None, rank_threshold: float = 1e-7,
                   warm_start: bool = True, n_jobs: int = 1) -> CvResult:
    """Choose ``lam`` by K-fold cross-validation over observed entries.

    Held-out entries are scored by their mean per-entry loss. Within a fold
    the grid is traversed from the largest to the smallest penalty, each
    solve starting at the previous solution when ``warm_start`` is set. The
    minimizer of the mean held-out loss is chosen, ties going to the larger
    penalty, and the full data are then refit at that penalty (along the
    same warm-started path when ``warm_start`` is set).
    """
    opts = opts or SolverOptions()
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if obs.n_observed < folds:
        raise ValueError("fewer observed entries than folds")
    grid = default_lambda_grid(obs) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    assign = fold_assignment(obs.n_observed, folds, opts.seed)
    order = np.argsort(-grid, kind="stable")
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fold_path)(obs, assign, f, order, grid, opts, warm_start) for f in range(folds))
    fold_losses = np.array([r[0] for r in results])
    flagged = tuple(f for f, r in enumerate(results) if r[1])
    if flagged:
        logger.warning("folds %s leave a row or column without training entries", flagged)
    mean = fold_losses.mean(axis=0)
    std = fold_losses.std(axis=0, ddof=1) if folds > 1 else np.zeros_like(mean)
    best = np.min(mean)
    ties = np.flatnonzero(mean <= best + 1e-12 * max(abs(best), 1.0))
    chosen = float(grid[ties[np.argmax(grid[ties])]])
    phi = None
    for idx in order:
        if grid[idx] < chosen:
            break
        if warm_start or grid[idx] == chosen:
            phi = solve_convex(obs, grid[idx], opts, init=None if phi is None else phi.values)
    rank = effective_rank(phi, rank_threshold)
    return CvResult(grid, mean, std, chosen, rank, fold_losses, assign, flagged, phi)
