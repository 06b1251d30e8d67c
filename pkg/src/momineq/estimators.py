"""Estimator-style wrappers around the first stage, the test and the grid inversion."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .confset import GridSpec, evaluate_point, invert_test
from .demand import D_X, DemandData, Draws, estimate_demand, logit_shares
from .rcc import rcc_test
from .two_stage import covariance_from_rows
from .validation import check_alpha, check_constraints, check_moment_rows, check_theta


class BLPDemandEstimator(BaseEstimator):
    """Simulated-logit demand by share inversion and GMM.

    After ``fit``: ``coef_`` is ``(beta, alpha)``, ``zeta_`` the inverted mean
    utilities, ``influence_`` and ``G_`` the first-stage influence values and
    score Jacobian, ``estimate_`` the full :class:`FirstStageEstimate`.
    """

    def __init__(self, n_draws=1, sigma=None, draws_seed=0, weight=None, init=None,
                 tol=1e-8, max_iter=500, inversion_tol=1e-12, inversion_max_iter=10_000):
        self.n_draws = n_draws
        self.sigma = sigma
        self.draws_seed = draws_seed
        self.weight = weight
        self.init = init
        self.tol = tol
        self.max_iter = max_iter
        self.inversion_tol = inversion_tol
        self.inversion_max_iter = inversion_max_iter

    def _draws(self):
        sigma = np.zeros(D_X + 1) if self.sigma is None else self.sigma
        return Draws(R=self.n_draws, seed=self.draws_seed, sigma=sigma)

    def fit(self, X, y=None):
        if not isinstance(X, DemandData):
            raise TypeError("X must be a DemandData instance")
        self.draws_ = self._draws()
        est = estimate_demand(
            X, self.draws_, weight=self.weight, init=self.init, tol=self.tol,
            max_iter=self.max_iter, inversion_tol=self.inversion_tol,
            inversion_max_iter=self.inversion_max_iter,
        )
        self.estimate_ = est
        self.coef_ = est.delta_hat
        self.beta_ = est.delta_hat[:D_X]
        self.alpha_ = float(est.delta_hat[D_X])
        self.zeta_ = est.extra["zeta"]
        self.influence_ = est.influence
        self.G_ = est.G
        self.objective_ = est.objective_value
        self.converged_ = est.converged
        return self

    def predict(self, X):
        """Shares implied by the fitted coefficients with a zero structural residual."""
        check_is_fitted(self, "coef_")
        zeta = X.design() @ self.coef_
        shifts = self.draws_.shifts(X.x, X.price)
        _, inv = X.group_index()
        out = np.empty(X.n_rows)
        for g in np.unique(inv):
            rows = np.flatnonzero(inv == g)
            out[rows] = logit_shares(zeta[rows, None] + shifts[rows])
        return out


class RCCTest(BaseEstimator):
    """Refined chi-squared test fitted on per-observation moment rows.

    ``fit`` stores the sample mean and the (optionally influence-corrected)
    covariance; ``decide`` tests ``A kappa <= rho`` against them.
    """

    def __init__(self, alpha=0.05, center=False):
        self.alpha = alpha
        self.center = center

    def fit(self, X, y=None, P=None, influence=None):
        X = check_moment_rows(X)
        if P is None:
            P = np.zeros((X.shape[1], 1))
            influence = np.zeros((X.shape[0], 1))
        self.mean_ = X.mean(axis=0)
        self.covariance_ = covariance_from_rows(X, P, influence, center=self.center)
        self.n_ = X.shape[0]
        return self

    def decide(self, A, rho):
        check_is_fitted(self, "mean_")
        A, rho = check_constraints(A, rho, self.mean_.size)
        return rcc_test(self.mean_, self.covariance_, A, rho, self.n_, check_alpha(self.alpha))


class RCCConfidenceSet(BaseEstimator):
    """Confidence set for ``theta`` by inverting the test over ``grid``.

    ``fit(model, data, first_stage)`` evaluates the grid; ``predict`` tests
    arbitrary parameter values and returns 1 for accepted, 0 for rejected.
    """

    def __init__(self, grid=None, alpha=None, center=False, workers=1):
        self.grid = grid
        self.alpha = alpha
        self.center = center
        self.workers = workers

    def fit(self, model, data=None, first_stage=None):
        grid = self.grid if isinstance(self.grid, GridSpec) else GridSpec.from_dict(self.grid)
        alpha = grid.alpha if self.alpha is None else check_alpha(self.alpha)
        self.alpha_ = alpha
        self.grid_ = invert_test(grid, model, data, first_stage, alpha=alpha,
                                 center=self.center, workers=self.workers)
        self.model_, self.data_, self.first_stage_ = model, data, first_stage
        self.accepted_points_ = self.grid_.accepted_points()
        return self

    def test(self, theta):
        check_is_fitted(self, "grid_")
        dim = len(self.grid_.labels)
        return evaluate_point(self.model_, self.data_, check_theta(theta, dim), self.first_stage_,
                              alpha=self.alpha_, center=self.center)

    def decision_function(self, thetas):
        """``critical - T`` per row; nonnegative means accepted."""
        return np.array([r.critical - r.T for r in map(self.test, np.atleast_2d(thetas))])

    def predict(self, thetas):
        return np.array([0 if r.reject else 1 for r in map(self.test, np.atleast_2d(thetas))])
