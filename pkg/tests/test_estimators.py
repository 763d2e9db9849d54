import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import Pipeline

from confound_mf import ate as est
from confound_mf.estimators import MatrixFactorizationConfounders, TreatmentEffectEstimator
from confound_mf.synth import gen_linear_scm


@pytest.fixture(scope="module")
def sample():
    data, obs, v = gen_linear_scm(200, 30, est.GenerativeSpec(), 4)
    return data, obs.to_dense(), v


FAST = dict(n_lambdas=4, lambda_ratio=0.05, tol=1e-5)


def test_params_round_trip():
    mf = MatrixFactorizationConfounders(penalty=0.5, n_components=3)
    assert clone(mf).get_params() == mf.get_params()
    te = TreatmentEffectEstimator("ridge", penalty=1.0)
    assert clone(te).get_params()["penalty"] == 1.0


def test_fit_transform_shape_and_attributes(sample):
    _, x, _ = sample
    mf = MatrixFactorizationConfounders(**FAST)
    u = mf.fit_transform(x)
    assert u.shape == (200, max(mf.rank_, 1))
    np.testing.assert_allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-8)
    np.testing.assert_allclose(u @ mf.loadings_.T, mf.natural_params_, atol=1e-6 * np.abs(mf.natural_params_).max())
    assert mf.penalty_ == mf.cv_result_.chosen_lambda


def test_transform_recovers_training_coordinates(sample):
    _, x, _ = sample
    mf = MatrixFactorizationConfounders(penalty=5.0, n_components=2).fit(x)
    a = mf.transform(x)
    # Gaussian MLE against fixed loadings is the least-squares projection
    want = np.linalg.lstsq(mf.loadings_, x.T, rcond=None)[0].T
    np.testing.assert_allclose(a, want, atol=1e-5)


def test_transform_handles_missing_entries(sample):
    _, x, _ = sample
    mf = MatrixFactorizationConfounders(penalty=5.0, n_components=2).fit(x)
    xm = x[:5].copy()
    xm[:, ::3] = np.nan
    assert np.all(np.isfinite(mf.transform(xm)))
    with pytest.raises(ValueError):
        mf.transform(x[:, :10])


def test_pipeline_routes_treatment(sample):
    data, x, _ = sample
    pipe = Pipeline([("mf", MatrixFactorizationConfounders(**FAST)),
                     ("ate", TreatmentEffectEstimator("ols"))])
    pipe.fit(x, data.outcome, ate__treatment=data.treatment)
    u = pipe[0].confounders_
    assert pipe[-1].ate_ == est.ols_ate(data.with_covariates(u)).tau_hat
    assert np.all(pipe.predict(x[:3]) == pipe[-1].ate_)


@pytest.mark.parametrize("method", ["ols", "ridge", "lasso", "ipw", "dr", "match", "psmatch"])
def test_methods_match_functional_api(sample, method):
    data, _, _ = sample
    u = data.true_confounders
    te = TreatmentEffectEstimator(method, penalty=0.1 if method in ("ridge", "lasso") else None)
    te.fit(u, data.outcome, treatment=data.treatment)
    d = data.with_covariates(u)
    if method in ("ipw", "dr", "psmatch"):
        e = est.logistic_propensity(u, data.treatment)
        ref = {"ipw": lambda: est.ipw_ate(d, e), "dr": lambda: est.doubly_robust_ate(d, e),
               "psmatch": lambda: est.propensity_match_ate(d, e)}[method]()
    else:
        ref = {"ols": lambda: est.ols_ate(d), "ridge": lambda: est.ridge_ate(d, 0.1),
               "lasso": lambda: est.lasso_ate(d, 0.1), "match": lambda: est.mahalanobis_match_ate(d)}[method]()
    assert te.ate_ == pytest.approx(ref.tau_hat, rel=1e-12, abs=1e-12)


def test_validation_errors(sample):
    data, x, _ = sample
    te = TreatmentEffectEstimator()
    with pytest.raises(ValueError):
        te.fit(x, data.outcome)
    with pytest.raises(ValueError):
        te.fit(x, data.outcome, treatment=np.full(200, 2.0))
    with pytest.raises(ValueError):
        te.fit(x, data.outcome, treatment=np.ones(200))
    with pytest.raises(ValueError):
        te.fit(x, data.outcome, treatment=data.treatment[:10])
    with pytest.raises(ValueError):
        TreatmentEffectEstimator("magic").fit(x, data.outcome, treatment=data.treatment)
    bad = x.copy()
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        MatrixFactorizationConfounders().fit(bad)
    with pytest.raises(ValueError):
        MatrixFactorizationConfounders(penalty="auto").fit(x)
