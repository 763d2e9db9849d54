import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit
from scipy.stats import ortho_group

from confound_mf.diagnostics import (orthonormalize, principal_angle, projection_distance,
                                     residual_treatment_energy, spikiness_ratio)


def basis(rng, n, k):
    return np.linalg.qr(rng.standard_normal((n, k)))[0]


def e(n, *idx):
    m = np.zeros((n, len(idx)))
    for c, i in enumerate(idx):
        m[i, c] = 1.0
    return m


class TestPrincipalAngle:
    def test_equal_spaces(self, rng):
        b = basis(rng, 10, 3)
        assert principal_angle(b, b) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_spaces(self):
        assert principal_angle(e(5, 0, 1), e(5, 2, 3)) == pytest.approx(1.0)

    def test_forty_five_degrees(self):
        m_hat = np.zeros((3, 1))
        m_hat[:2, 0] = 1 / np.sqrt(2)
        assert principal_angle(e(3, 0), m_hat) == pytest.approx(np.sqrt(2) / 2, abs=1e-12)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 5))
    def test_rotation_invariance(self, seed, r):
        rng = np.random.default_rng(seed)
        m = basis(rng, 12, r)
        q = ortho_group.rvs(r, random_state=seed) if r > 1 else np.array([[-1.0]])
        assert principal_angle(m, m @ q) < 1e-10

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 5))
    def test_symmetric_for_equal_dimension(self, seed, r):
        rng = np.random.default_rng(seed)
        a, b = basis(rng, 9, r), basis(rng, 9, r)
        assert principal_angle(a, b) == pytest.approx(principal_angle(b, a), abs=1e-12)

    def test_unequal_dimensions_follow_min_convention(self):
        # span{e1} inside span{e1, e2}: the smaller space is contained
        assert principal_angle(e(4, 0), e(4, 0, 1)) == pytest.approx(0.0, abs=1e-15)
        assert principal_angle(e(4, 0, 1), e(4, 0)) == pytest.approx(0.0, abs=1e-15)

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            principal_angle(e(3, 0), e(4, 0))


class TestProjectionDistance:
    def test_equal_spaces(self, rng):
        b = basis(rng, 8, 2)
        assert projection_distance(b, b) == pytest.approx(0.0, abs=1e-12)

    def test_axis_pair(self):
        assert projection_distance(e(3, 0), e(3, 1)) == pytest.approx(1.0)

    def test_sandwich_on_random_pairs(self, rng):
        for _ in range(100):
            r = int(rng.integers(1, 6))
            a, b = basis(rng, 15, r), basis(rng, 15, r)
            ang = principal_angle(a, b)
            d = projection_distance(a, b)
            assert ang - 1e-12 <= d <= 2 * ang + 1e-12


class TestSpikiness:
    def test_all_ones(self):
        assert spikiness_ratio(np.ones((4, 6))) == pytest.approx(1.0)

    def test_single_entry(self):
        m = np.zeros((4, 6))
        m[2, 3] = -7.0
        assert spikiness_ratio(m) == pytest.approx(np.sqrt(24))

    def test_matches_direct_formula(self, rng):
        phi = rng.standard_normal((200, 5)) @ rng.standard_normal((5, 100))
        direct = np.max(np.abs(phi)) * np.sqrt(200 * 100) / np.sqrt(np.sum(phi ** 2))
        assert spikiness_ratio(phi) == pytest.approx(direct, rel=1e-12)

    @given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3), st.booleans())
    def test_scale_invariant_and_bounded(self, seed, c, neg):
        phi = np.random.default_rng(seed).normal(size=(7, 5))
        s = spikiness_ratio(phi)
        assert 1 - 1e-12 <= s <= np.sqrt(35) + 1e-12
        assert spikiness_ratio((-c if neg else c) * phi) == pytest.approx(s, rel=1e-10)

    def test_zero_matrix(self):
        with pytest.raises(ValueError):
            spikiness_ratio(np.zeros((3, 3)))


class TestResidualEnergy:
    def test_in_span(self, rng):
        b = basis(rng, 20, 3)
        t = b @ np.array([1.0, -2.0, 0.5])
        assert residual_treatment_energy(t, b) == pytest.approx(0.0, abs=1e-12)

    def test_empty_basis(self, rng):
        t = rng.integers(0, 2, 30).astype(float)
        assert residual_treatment_energy(t, np.zeros((30, 0))) == pytest.approx(np.mean(t ** 2))

    @given(st.integers(0, 2 ** 32 - 1), st.integers(0, 6))
    def test_bounds(self, seed, k):
        rng = np.random.default_rng(seed)
        t = rng.integers(0, 2, 25).astype(float)
        val = residual_treatment_energy(t, basis(rng, 25, k) if k else np.zeros((25, 0)))
        assert 0 <= val <= t @ t / 25

    def test_positive_and_stable_across_seeds(self):
        beta = np.array([1.0, 2.0, 2.0, 2.0, 2.0])
        vals = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            u = rng.standard_normal((2000, 5))
            t = (rng.random(2000) < expit(u @ beta)).astype(float)
            vals.append(residual_treatment_energy(t, orthonormalize(u)))
        vals = np.array(vals)
        assert np.all(vals > 0)
        assert vals.std() / vals.mean() < 0.2


def test_orthonormalize_drops_dependent_columns(rng):
    a = rng.normal(size=(10, 2))
    q = orthonormalize(np.column_stack([a, a @ [1.0, 2.0]]))
    assert q.shape == (10, 2)
    np.testing.assert_allclose(q.T @ q, np.eye(2), atol=1e-12)
