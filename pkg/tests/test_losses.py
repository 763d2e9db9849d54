import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from confound_mf.losses import (Bernoulli, DomainError, Gaussian, ObservedMatrix, Poisson,
                                loss_grad, loss_value, objective)

from oracles import naive_objective

KINDS = [Gaussian(1.0), Gaussian(5.0), Bernoulli(), Poisson()]
phis = st.floats(-8, 8, allow_nan=False)


def x_for(kind, draw_val):
    if isinstance(kind, Bernoulli):
        return 1.0 if draw_val > 0 else -1.0
    if isinstance(kind, Poisson):
        return float(int(abs(draw_val) * 3))
    return draw_val


def test_loss_value_examples():
    assert loss_value(Gaussian(1.0), 1.0, 1.0) == 0.0
    assert loss_value(Bernoulli(), 1.0, 0.0) == pytest.approx(math.log(2), abs=1e-12)
    assert loss_value(Poisson(), 0.0, 0.0) == 1.0


def test_loss_grad_examples():
    assert loss_grad(Gaussian(1.0), 2.0, 0.0) == -2.0
    assert loss_grad(Bernoulli(), 1.0, 0.0) == -0.5
    assert loss_grad(Poisson(), 1.0, 0.0) == 0.0


@pytest.mark.parametrize("kind, x", [(Bernoulli(), 0.0), (Bernoulli(), 0.5), (Poisson(), -1.0),
                                     (Poisson(), 1.5)])
def test_invalid_x_is_domain_error(kind, x):
    with pytest.raises(DomainError):
        loss_value(kind, x, 0.0)
    with pytest.raises(DomainError):
        loss_grad(kind, x, 0.0)


def test_gaussian_variance_scales_loss():
    assert loss_value(Gaussian(5.0), 3.0, 1.0) == pytest.approx(4.0 / 10.0)


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: f"{k.name}")
def test_gradient_matches_finite_difference(kind, rng):
    h = 1e-5
    for _ in range(100):
        phi = rng.uniform(-4, 4)
        x = x_for(kind, rng.normal() * 2)
        fd = (loss_value(kind, x, phi + h) - loss_value(kind, x, phi - h)) / (2 * h)
        g = loss_grad(kind, x, phi)
        assert abs(g - fd) / (1 + abs(g)) < 1e-6


@given(st.sampled_from(KINDS), st.floats(-3, 3), phis, phis, st.floats(0.01, 0.99))
def test_loss_is_convex_in_phi(kind, xraw, p1, p2, t):
    x = x_for(kind, xraw)
    mid = loss_value(kind, x, t * p1 + (1 - t) * p2)
    assert mid <= t * loss_value(kind, x, p1) + (1 - t) * loss_value(kind, x, p2) + 1e-12 * (1 + abs(mid))


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.name)
def test_log_partition_strictly_convex(kind):
    grid = np.linspace(-10, 10, 201)
    g = kind.log_partition(grid)
    assert np.all(g[2:] - 2 * g[1:-1] + g[:-2] > 0)


def test_objective_zero_at_perfect_gaussian_fit(rng):
    x = rng.normal(size=(4, 3))
    obs = ObservedMatrix.from_dense(x, Gaussian(1.0))
    assert objective(obs, x, 0.0) == 0.0


def test_objective_bernoulli_at_zero(rng):
    x = np.where(rng.random((6, 5)) < 0.5, 1.0, -1.0)
    x[rng.random((6, 5)) < 0.3] = np.nan
    obs = ObservedMatrix.from_dense(x, Bernoulli())
    assert objective(obs, np.zeros((6, 5)), 0.7) == pytest.approx(30 * math.log(2), rel=1e-12)


def test_objective_matches_direct_summation(rng):
    n, p = 6, 5
    kinds = ["gaussian", "bernoulli", "poisson", "gaussian", "bernoulli"]
    x = np.empty((n, p))
    for j, k in enumerate(kinds):
        x[:, j] = {"gaussian": rng.normal(size=n),
                   "bernoulli": np.where(rng.random(n) < 0.5, 1.0, -1.0),
                   "poisson": rng.poisson(2.0, size=n).astype(float)}[k]
    mask = rng.random((n, p)) < 0.7
    x_obs = np.where(mask, x, np.nan)
    obs = ObservedMatrix.from_dense(x_obs, tuple({"gaussian": Gaussian(1.0), "bernoulli": Bernoulli(),
                                                  "poisson": Poisson()}[k] for k in kinds))
    phi = rng.normal(size=(n, p))
    assert objective(obs, phi, 0.37) == pytest.approx(naive_objective(x, mask, kinds, phi, 0.37),
                                                      rel=1e-10)


def test_objective_empty_omega_errors():
    obs = ObservedMatrix.from_dense(np.full((2, 2), np.nan), Gaussian())
    with pytest.raises(ValueError):
        objective(obs, np.zeros((2, 2)), 1.0)


@given(st.integers(0, 10_000))
def test_objective_invariant_to_entry_order(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 4))
    obs = ObservedMatrix.from_dense(x, Gaussian(2.0))
    perm = rng.permutation(obs.n_observed)
    shuffled = ObservedMatrix(5, 4, obs.rows[perm], obs.cols[perm], obs.values[perm], obs.col_losses)
    phi = rng.normal(size=(5, 4))
    assert objective(obs, phi, 0.3) == pytest.approx(objective(shuffled, phi, 0.3), rel=1e-13)


class TestObservedMatrix:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            ObservedMatrix(2, 2, [0, 0], [1, 1], [1.0, 2.0], Gaussian())

    def test_rejects_out_of_range(self):
        with pytest.raises(IndexError):
            ObservedMatrix(2, 2, [2], [0], [1.0], Gaussian())

    def test_bernoulli_values_checked(self):
        with pytest.raises(DomainError):
            ObservedMatrix.from_dense(np.array([[1.0, 0.0]]), Bernoulli())

    def test_dense_round_trip(self, rng):
        x = rng.normal(size=(5, 3))
        x[1, 2] = np.nan
        obs = ObservedMatrix.from_dense(x, Gaussian())
        assert obs.n_observed == 14
        np.testing.assert_array_equal(obs.to_dense(), x)

    def test_arrays_are_read_only_copies(self, rng):
        rows = np.array([0, 1])
        obs = ObservedMatrix(2, 2, rows, [0, 1], [1.0, 2.0], Gaussian())
        rows[0] = 1
        assert obs.rows[0] == 0
        with pytest.raises(ValueError):
            obs.values[0] = 3.0

    def test_permute_columns_moves_entries(self, rng):
        x = rng.normal(size=(3, 4))
        obs = ObservedMatrix.from_dense(x, Gaussian(), ["a", "b", "c", "d"])
        perm = np.array([2, 0, 3, 1])
        moved = obs.permute_columns(perm)
        np.testing.assert_array_equal(moved.to_dense(), x[:, perm])
        assert moved.col_names == ("c", "a", "d", "b")
