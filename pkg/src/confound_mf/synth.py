"""Synthetic data: linear outcome model with proxy covariates, MCAR masks, twins protocol."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .ate import CausalDataset, GenerativeSpec
from .ingest import TwinsRecords
from .losses import Bernoulli, Gaussian, ObservedMatrix


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def draw_loadings(p: int, r: int, seed: int) -> np.ndarray:
    """Standard normal ``p x r`` loadings, a pure function of ``(p, r, seed)``."""
    return _rng(seed, 0x5EED, p, r).standard_normal((p, r))


def gen_linear_scm(n: int, p: int, spec: GenerativeSpec = None, seed: int = 0):
    """Draw ``(dataset, observed covariates, V)`` from the linear outcome model.

    ``U ~ N(0, I_r)``, ``T | U ~ Bernoulli(sigmoid(beta'U))``,
    ``Y = alpha'U + tau T + outcome_noise_sd * eps``. Covariates have natural
    parameter ``U V'``; see :class:`GenerativeSpec` for the noise kinds. When
    ``spec.V`` is unset, loadings come from :func:`draw_loadings` with the
    same seed.
    """
    spec = spec or GenerativeSpec()
    r = spec.r
    v = spec.V if spec.V is not None else draw_loadings(p, r, seed)
    if v.shape != (p, r):
        raise ValueError(f"V has shape {v.shape}, expected {(p, r)}")
    rng = _rng(seed, 1, n, p)
    u = rng.standard_normal((n, r))
    t = (rng.random(n) < expit(u @ spec.beta)).astype(float)
    y0 = u @ spec.alpha + spec.outcome_noise_sd * rng.standard_normal(n)
    y1 = y0 + spec.tau
    y = np.where(t == 1, y1, y0)
    phi = u @ v.T
    if spec.noise == "gaussian":
        x = phi + spec.sigma_w * rng.standard_normal((n, p))
        loss = Gaussian(spec.sigma_w ** 2)
    else:
        x = np.where(rng.random((n, p)) < expit(phi), 1.0, -1.0)
        loss = Bernoulli()
    data = CausalDataset(x, t, y, true_confounders=u, potential_outcomes=np.column_stack([y0, y1]))
    return data, ObservedMatrix.from_dense(x, loss), v


def _splitmix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def entry_uniforms(seed: int, rows, col_keys) -> np.ndarray:
    """Counter-based uniforms in [0, 1) keyed by ``(seed, row, column key)``.

    Each entry's draw depends only on its own key, never on iteration order.
    """
    rows = np.asarray(rows, dtype=np.uint64)
    keys = np.asarray(col_keys, dtype=np.uint64)
    s = _splitmix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    with np.errstate(over="ignore"):
        h = _splitmix(_splitmix(s ^ rows) ^ keys)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def inject_mcar(obs: ObservedMatrix, prob: float, seed: int) -> ObservedMatrix:
    """Drop each observed entry independently with probability ``prob``.

    Draws are keyed by row index and column name, so permuting columns
    before or after masking gives the same result, and for a fixed seed the
    mask at a lower ``prob`` is a subset of the mask at a higher one.
    """
    if not 0 <= prob <= 1:
        raise ValueError("prob must lie in [0, 1]")
    u = entry_uniforms(seed, obs.rows, obs.column_keys()[obs.cols])
    return obs.subset(u >= prob)


def twins_semi_synth(records: TwinsRecords, p: int, seed: int, perturb_prob: float = 0.5,
                     missing_prob: float = 0.0, proxy_loss=None):
    """Hide one twin per pair and build ``p`` noisy copies of the confounder.

    The heavier twin is "treated" with probability
    ``sigmoid(5 * (gestat10 / 10 - 0.1))``; only the treated-arm twin's outcome
    is observed. Each proxy cell equals gestat10, except that with probability
    ``perturb_prob`` it is redrawn uniformly from 0..9 (possibly to the same
    value). Returns ``(dataset, observed proxies)``.
    """
    rng = _rng(seed, 2, len(records), p)
    u = records.gestat10.astype(float)
    n = u.size
    t = (rng.random(n) < expit(5.0 * (u / 10.0 - 0.1))).astype(float)
    y0 = records.mortality_lighter.astype(float)
    y1 = records.mortality_heavier.astype(float)
    y = np.where(t == 1, y1, y0)
    x = np.repeat(u[:, None], p, axis=1)
    flip = rng.random((n, p)) < perturb_prob
    x[flip] = rng.integers(0, 10, size=int(flip.sum()))
    names = [f"gestat10_copy{j}" for j in range(p)]
    obs = ObservedMatrix.from_dense(x, proxy_loss or Gaussian(), names)
    if missing_prob > 0:
        obs = inject_mcar(obs, missing_prob, seed)
    data = CausalDataset(x, t, y, true_confounders=u[:, None],
                         potential_outcomes=np.column_stack([y0, y1]))
    return data, obs


@dataclass(frozen=True)
class StandinParams:
    """Generative parameters of the bundled twins stand-in.

    Mortality log-odds for the lighter twin are
    ``base_logit + gestat_slope * gestat10``; the heavier twin adds
    ``heavier_effect``.
    """

    base_logit: float = 0.5
    gestat_slope: float = -0.5
    heavier_effect: float = -0.5


def standin_true_ate(params: StandinParams = StandinParams()) -> float:
    """Exact ATE of the stand-in (gestat10 uniform on 0..9)."""
    g = np.arange(10.0)
    eta = params.base_logit + params.gestat_slope * g
    return float(np.mean(expit(eta + params.heavier_effect) - expit(eta)))


def synth_twins_standin(n_pairs: int, seed: int, params: StandinParams = StandinParams()) -> TwinsRecords:
    """Desk-scale twin records shaped like the real data's schema."""
    rng = _rng(seed, 3, n_pairs)
    g = rng.integers(0, 10, size=n_pairs)
    eta = params.base_logit + params.gestat_slope * g
    m_light = (rng.random(n_pairs) < expit(eta)).astype(int)
    m_heavy = (rng.random(n_pairs) < expit(eta + params.heavier_effect)).astype(int)
    w_light = np.clip(900.0 + 90.0 * g + 120.0 * rng.standard_normal(n_pairs), 400.0, 1950.0)
    w_heavy = np.minimum(w_light + np.abs(120.0 * rng.standard_normal(n_pairs)) + 1.0, 1999.0)
    return TwinsRecords(np.arange(n_pairs), g, np.round(w_light, 1), np.round(w_heavy, 1),
                        m_light, m_heavy)
