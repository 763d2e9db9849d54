"""Observed-matrix data model and exponential-family losses.

Every loss is the negative log-likelihood of a natural exponential family
with the parameter-independent part dropped::

    gaussian   (x - phi)**2 / (2 * variance)
    bernoulli  log(1 + exp(-x * phi))        x in {-1, +1}
    poisson    exp(phi) - x * phi            x in {0, 1, 2, ...}
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import expit


class DomainError(ValueError):
    """An observed value is not in the support of its loss family."""


@dataclass(frozen=True)
class Gaussian:
    variance: float = 1.0

    name = "gaussian"

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    def check(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("gaussian values must be finite")

    def value(self, x, phi):
        return (x - phi) ** 2 / (2.0 * self.variance)

    def grad(self, x, phi):
        return (phi - x) / self.variance

    def hess(self, phi):
        return np.full_like(np.asarray(phi, dtype=float), 1.0 / self.variance)

    def log_partition(self, phi):
        return np.asarray(phi, dtype=float) ** 2 / (2.0 * self.variance)

    def mean(self, phi):
        return np.asarray(phi, dtype=float)

    def placeholder(self):
        return 0.0


@dataclass(frozen=True)
class Bernoulli:
    name = "bernoulli"

    def check(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all((x == 1.0) | (x == -1.0)):
            raise DomainError("bernoulli values must be encoded as -1 or +1")

    def value(self, x, phi):
        return np.logaddexp(0.0, -x * phi)

    def grad(self, x, phi):
        return -x * expit(-x * phi)

    def hess(self, phi):
        s = expit(phi)
        return s * (1.0 - s)

    def log_partition(self, phi):
        # for the +-1 encoding: log(e^phi + e^-phi) up to a constant shift in phi
        return np.logaddexp(np.asarray(phi, dtype=float), -np.asarray(phi, dtype=float))

    def mean(self, phi):
        return 2.0 * expit(2.0 * np.asarray(phi, dtype=float)) - 1.0

    def placeholder(self):
        return 1.0


@dataclass(frozen=True)
class Poisson:
    name = "poisson"

    def check(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all((x >= 0) & (x == np.floor(x)) & np.isfinite(x)):
            raise DomainError("poisson values must be nonnegative integers")

    def value(self, x, phi):
        return np.exp(phi) - x * phi

    def grad(self, x, phi):
        return np.exp(phi) - x

    def hess(self, phi):
        return np.exp(phi)

    def log_partition(self, phi):
        return np.exp(np.asarray(phi, dtype=float))

    def mean(self, phi):
        return np.exp(np.asarray(phi, dtype=float))

    def placeholder(self):
        return 0.0


LossKind = Union[Gaussian, Bernoulli, Poisson]

_BY_NAME = {"gaussian": Gaussian, "bernoulli": Bernoulli, "poisson": Poisson}


def loss_from_name(name: str, variance: float = 1.0) -> LossKind:
    """Build a loss from its schema token (``gaussian``, ``bernoulli``, ``poisson``)."""
    try:
        cls = _BY_NAME[name.lower()]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; expected one of {sorted(_BY_NAME)}") from None
    return cls(variance) if cls is Gaussian else cls()


def _scalar_or_array(out):
    return float(out) if np.ndim(out) == 0 else out


def loss_value(kind: LossKind, x, phi):
    """Negative log-likelihood of ``x`` at natural parameter ``phi``, constants dropped."""
    kind.check(x)
    if not np.all(np.isfinite(phi)):
        raise DomainError("phi must be finite")
    return _scalar_or_array(kind.value(np.asarray(x, dtype=float), np.asarray(phi, dtype=float)))


def loss_grad(kind: LossKind, x, phi):
    """Derivative of :func:`loss_value` in ``phi`` (equals ``G'(phi) - x`` up to encoding)."""
    kind.check(x)
    if not np.all(np.isfinite(phi)):
        raise DomainError("phi must be finite")
    return _scalar_or_array(kind.grad(np.asarray(x, dtype=float), np.asarray(phi, dtype=float)))


def _default_names(p):
    return tuple(f"x{j}" for j in range(p))


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """Sparse set of observed entries on an ``n_rows x n_cols`` grid.

    Entries are stored as parallel coordinate arrays. Each column carries its
    own loss family; ``col_names`` identify columns independently of their
    position (used for keyed random streams and CSV headers).
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    col_losses: tuple
    col_names: tuple = None
    na_policy: str = "NA"

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.int64).ravel()
        cols = np.array(self.cols, dtype=np.int64).ravel()
        values = np.array(self.values, dtype=float).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("rows, cols and values must have equal length")
        n, p = int(self.n_rows), int(self.n_cols)
        if n < 1 or p < 1:
            raise ValueError("matrix dimensions must be positive")
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= p):
            raise IndexError("entry index outside the matrix grid")
        flat = rows * p + cols
        if np.unique(flat).size != flat.size:
            raise ValueError("duplicate (row, col) entries")
        losses = self.col_losses
        if not isinstance(losses, (tuple, list)):
            losses = (losses,) * p
        losses = tuple(losses)
        if len(losses) != p:
            raise ValueError(f"expected {p} column losses, got {len(losses)}")
        names = _default_names(p) if self.col_names is None else tuple(map(str, self.col_names))
        if len(names) != p:
            raise ValueError(f"expected {p} column names, got {len(names)}")
        for kind, idx in _group_columns(losses).items():
            kind.check(values[np.isin(cols, idx)])
        for attr, val in (("n_rows", n), ("n_cols", p), ("rows", rows), ("cols", cols),
                          ("values", values), ("col_losses", losses), ("col_names", names)):
            object.__setattr__(self, attr, val)
        for arr in (rows, cols, values):
            arr.setflags(write=False)

    @classmethod
    def from_dense(cls, x, col_losses, col_names=None) -> "ObservedMatrix":
        """Build from a dense array where ``NaN`` marks an unobserved entry."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise ValueError("expected a 2-d array")
        rows, cols = np.nonzero(~np.isnan(x))
        return cls(x.shape[0], x.shape[1], rows, cols, x[rows, cols], col_losses, col_names)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def n_observed(self) -> int:
        return int(self.values.size)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[self.rows, self.cols] = True
        return m

    def to_dense(self) -> np.ndarray:
        """Dense copy with ``NaN`` at unobserved entries."""
        out = np.full(self.shape, np.nan)
        out[self.rows, self.cols] = self.values
        return out

    def subset(self, keep) -> "ObservedMatrix":
        """Keep only the entries selected by a boolean mask or index array."""
        keep = np.asarray(keep)
        return ObservedMatrix(self.n_rows, self.n_cols, self.rows[keep], self.cols[keep],
                              self.values[keep], self.col_losses, self.col_names, self.na_policy)

    def permute_columns(self, perm) -> "ObservedMatrix":
        """Column ``j`` of the result is column ``perm[j]`` of ``self``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return ObservedMatrix(self.n_rows, self.n_cols, self.rows, inv[self.cols], self.values,
                              tuple(self.col_losses[j] for j in perm),
                              tuple(self.col_names[j] for j in perm), self.na_policy)

    def column_keys(self) -> np.ndarray:
        """Stable 32-bit integer key per column derived from its name."""
        return np.array([zlib.crc32(n.encode()) for n in self.col_names], dtype=np.uint64)


@dataclass(frozen=True)
class NaturalParamMatrix:
    """Dense natural-parameter estimate plus the solver trace that produced it."""

    values: np.ndarray
    objective_trace: tuple = ()
    n_iter: int = 0
    converged: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError("natural parameters must be a finite 2-d array")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FactorPair:
    """Factors ``left`` (N x k) and ``right`` (p x k) with product ``left @ right.T``."""

    left: np.ndarray
    right: np.ndarray
    objective_trace: tuple = ()
    n_iter: int = 0
    converged: bool = True
    newton_fallbacks: int = 0

    @property
    def k(self) -> int:
        return self.left.shape[1]

    def product(self) -> np.ndarray:
        return self.left @ self.right.T


def _group_columns(losses: Sequence) -> dict:
    groups: dict = {}
    for j, kind in enumerate(losses):
        groups.setdefault(kind, []).append(j)
    return {k: np.array(v, dtype=np.int64) for k, v in groups.items()}


class DenseLoss:
    """Vectorized data term over a dense grid with an observation mask.

    Unobserved cells hold a valid placeholder so every loss is finite there;
    their contribution is zeroed by the mask.
    """

    def __init__(self, obs: ObservedMatrix, scale: float = None):
        self.obs = obs
        self.mask = obs.mask()
        x = np.zeros(obs.shape)
        groups = _group_columns(obs.col_losses)
        for kind, idx in groups.items():
            x[:, idx] = kind.placeholder()
        x[obs.rows, obs.cols] = obs.values
        self.x = x
        self.groups = list(groups.items())
        if scale is None:
            scale = obs.n_rows * obs.n_cols / max(obs.n_observed, 1)
        self.scale = float(scale)

    def _apply(self, fn, phi):
        out = np.empty_like(phi, dtype=float)
        if len(self.groups) == 1:
            out[...] = fn(self.groups[0][0], slice(None))
            return out
        for kind, idx in self.groups:
            out[..., idx] = fn(kind, idx)
        return out

    def elementwise(self, phi, rows=None):
        """Unscaled per-cell losses (masked cells included; caller masks)."""
        x = self.x if rows is None else self.x[rows]
        return self._apply(lambda k, idx: k.value(x[..., idx], phi[..., idx]), phi)

    def value(self, phi) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            vals = self.elementwise(phi)
        return self.scale * float(np.sum(vals, where=self.mask))

    def grad(self, phi) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            g = self._apply(lambda k, idx: k.grad(self.x[:, idx], phi[:, idx]), phi)
        g[~self.mask] = 0.0
        return self.scale * g

    def hess(self, phi) -> np.ndarray:
        with np.errstate(over="ignore"):
            h = self._apply(lambda k, idx: k.hess(phi[:, idx]), phi)
        h[~self.mask] = 0.0
        return self.scale * h


def nuclear_norm(m) -> float:
    return float(np.sum(np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)))


def objective(obs: ObservedMatrix, phi, lam: float) -> float:
    """Regularized M-estimation objective of ``phi`` for the observed entries.

    ``(N p / |Omega|) * sum_{(i,j) in Omega} loss(x_ij, phi_ij) + lam * ||phi||_*``
    """
    if obs.n_observed == 0:
        raise ValueError("objective needs at least one observed entry")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    phi = np.asarray(getattr(phi, "values", phi), dtype=float)
    if phi.shape != obs.shape:
        raise ValueError(f"phi has shape {phi.shape}, expected {obs.shape}")
    data = DenseLoss(obs)
    return data.value(phi) + lam * nuclear_norm(phi)


def as_losses(spec, n_cols: int) -> tuple:
    """Normalize a loss spec (single kind, name, or per-column iterable) to a tuple."""
    if isinstance(spec, str):
        return (loss_from_name(spec),) * n_cols
    if isinstance(spec, (Gaussian, Bernoulli, Poisson)):
        return (spec,) * n_cols
    out = tuple(loss_from_name(s) if isinstance(s, str) else s for s in spec)
    if len(out) != n_cols:
        raise ValueError(f"expected {n_cols} losses, got {len(out)}")
    return out


def infer_loss(column: Iterable[float]) -> LossKind:
    """Guess a loss from observed values: +-1 -> bernoulli, else gaussian."""
    col = np.asarray([v for v in column if not np.isnan(v)], dtype=float)
    if col.size and np.all(np.abs(col) == 1.0):
        return Bernoulli()
    return Gaussian()
