import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from momineq.estimators import BLPDemandEstimator, RCCConfidenceSet, RCCTest
from momineq.rcc import rcc_test
from momineq.stats import sample_covariance


def test_demand_estimator_matches_function(small_dataset, fitted):
    _, _, est = fitted
    model = BLPDemandEstimator().fit(small_dataset.demand)
    assert np.array_equal(model.coef_, est.delta_hat)
    assert model.converged_ and model.alpha_ == est.delta_hat[-1]
    assert model.influence_.shape == est.influence.shape
    shares = model.predict(small_dataset.demand)
    assert shares.shape == (small_dataset.demand.n_rows,)
    assert np.all((shares > 0) & (shares < 1))
    assert clone(model).get_params() == model.get_params()


def test_demand_estimator_rejects_arrays():
    with pytest.raises(TypeError):
        BLPDemandEstimator().fit(np.zeros((3, 3)))
    with pytest.raises(NotFittedError):
        BLPDemandEstimator().predict(None)


def test_rcc_wrapper_matches_direct_call(rng):
    X = rng.standard_normal((200, 2)) + [0.1, -0.2]
    t = RCCTest(alpha=0.05).fit(X)
    A, rho = np.eye(2), np.zeros(2)
    direct = rcc_test(X.mean(axis=0), sample_covariance(X), A, rho, 200, 0.05)
    assert t.decide(A, rho).to_dict() == direct.to_dict()
    with pytest.raises(ValueError):
        t.decide(np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        RCCTest(alpha=0.9).fit(X).decide(A, rho)


def test_confidence_set_wrapper(fitted, small_dataset):
    model, panel, est = fitted
    grid = {"dims": [{"label": "lambda", "min": 0.0, "max": 1.0, "count": 3},
                     {"label": "eta_1", "min": 0.0, "max": 1.0, "count": 3},
                     {"label": "eta_2", "fixed": 0.2}, {"label": "eta_3", "fixed": 0.1},
                     {"label": "eta_4", "fixed": 0.3}]}
    cs = RCCConfidenceSet(grid=grid).fit(model, panel, est)
    truth = small_dataset.theta.as_array()
    far = np.array([1.0, 40.0, 40.0, 40.0, 40.0])
    assert list(cs.predict([truth, far])) == [1, 0]
    df = cs.decision_function([truth, far])
    assert df[0] >= 0 > df[1]
    assert cs.accepted_points_.shape[1] == 5
    with pytest.raises(ValueError):
        cs.test([0.1, 0.2])
