"""First-stage demand: simulated logit shares, mean-utility inversion and GMM.

Utility of product ``j`` on draw ``r`` is ``zeta_j + x_j b_r - a_r p_j`` where
``zeta_j = x_j beta - alpha p_j + xi_j`` is the mean utility and
``(b_r, a_r)`` are zero-mean heterogeneity draws. Positive ``alpha`` means a
higher price lowers utility.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .exceptions import (
    EmptyData,
    LineSearchFailure,
    NoConvergence,
    NonFiniteUtility,
    ShapeMismatch,
)
from .two_stage import FirstStageEstimate, gmm_influence

CHARACTERISTICS = ("gvwr", "cab_over", "compact_front", "long_cab")
D_X = len(CHARACTERISTICS)


@dataclass
class DemandData:
    """Product-level demand observations, one row per (market, period, firm, product)."""

    market: np.ndarray
    period: np.ndarray
    firm: np.ndarray
    product: np.ndarray
    x: np.ndarray
    price: np.ndarray
    mc: np.ndarray
    quantity: np.ndarray
    market_size: np.ndarray
    instruments: np.ndarray
    zeta: np.ndarray = None

    def __post_init__(self):
        self.market = np.asarray(self.market)
        self.period = np.asarray(self.period)
        self.firm = np.asarray(self.firm)
        self.product = np.asarray(self.product)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.price = np.asarray(self.price, dtype=float)
        self.mc = np.asarray(self.mc, dtype=float)
        self.quantity = np.asarray(self.quantity, dtype=float)
        self.market_size = np.asarray(self.market_size, dtype=float)
        self.instruments = np.asarray(self.instruments, dtype=float)
        if self.instruments.ndim == 1:
            self.instruments = self.instruments[:, None]
        n = self.price.shape[0]
        if n == 0:
            raise EmptyData("demand data has no rows")
        for name in ("market", "period", "firm", "product", "mc", "quantity", "market_size"):
            if getattr(self, name).shape[0] != n:
                raise ShapeMismatch(f"column {name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if self.x.shape != (n, D_X):
            raise ShapeMismatch(f"characteristics have shape {self.x.shape}, expected {(n, D_X)}")
        if self.instruments.shape[0] != n:
            raise ShapeMismatch("instrument rows do not match")
        if np.any(self.price < 0):
            raise ValueError("prices must be nonnegative")
        share = self.share
        if np.any(share <= 0) or np.any(share >= 1):
            raise ValueError("shares must lie strictly inside (0, 1)")
        _, inv = self.group_index()
        totals = np.bincount(inv, weights=share)
        if np.any(totals >= 1):
            raise ValueError("inside shares sum to 1 or more in some market-period")

    @property
    def n_rows(self):
        return self.price.shape[0]

    @property
    def share(self):
        return self.quantity / self.market_size

    def group_index(self):
        """``(keys, inverse)`` for the (market, period) groups, keys sorted."""
        keys = np.stack([self.market, self.period], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        return uniq, inv.ravel()

    def Z(self):
        """GMM instruments: the exogenous characteristics and the excluded instruments."""
        return np.column_stack([self.x, self.instruments])

    def design(self):
        """Regressor matrix for ``xi = zeta - X delta``: columns ``[x, -price]``."""
        return np.column_stack([self.x, -self.price])

    def with_zeta(self, zeta):
        return replace(self, zeta=np.asarray(zeta, dtype=float))


@dataclass
class Draws:
    """Common random numbers for share simulation.

    ``sigma`` holds one standard deviation per coefficient, characteristics
    first and price last. All-zero ``sigma`` gives the plain logit.
    """

    R: int = 1
    seed: int = 0
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(D_X + 1))

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be at least 1")
        self.sigma = np.asarray(self.sigma, dtype=float)
        rng = np.random.default_rng(self.seed)
        self.nu = rng.standard_normal((self.R, self.sigma.size)) * self.sigma

    def shifts(self, x, price):
        """Per-draw utility perturbations, shape ``(n_products, R)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        price = np.asarray(price, dtype=float)
        return x @ self.nu[:, :-1].T - price[:, None] * self.nu[:, -1]

    def to_dict(self):
        return {"R": int(self.R), "seed": int(self.seed), "sigma": self.sigma.tolist()}


def logit_shares(U, mask=None):
    """Average logit choice probabilities over the last axis.

    ``U`` has shape ``(..., J, R)``; ``mask`` (``(..., J)``) marks products in
    the choice set. The outside good has utility 0.
    """
    U = np.asarray(U, dtype=float)
    if mask is not None:
        U = np.where(mask[..., None], U, -np.inf)
    finite = np.isfinite(U) | (U == -np.inf)
    if not np.all(finite):
        raise NonFiniteUtility("utilities contain NaN or +inf")
    top = np.maximum(np.max(U, axis=-2, keepdims=True), 0.0)
    e = np.exp(U - top)
    denom = np.exp(-top) + e.sum(axis=-2, keepdims=True)
    return (e / denom).mean(axis=-1)


def simulate_shares(zeta, shifts=None, R=None):
    """Simulated market shares for one market.

    Parameters
    ----------
    zeta : array_like, shape (J,)
        Mean utilities.
    shifts : array_like, shape (J, R), optional
        Heterogeneity perturbation per product and draw; zero when omitted.
    R : int, optional
        Number of draws when ``shifts`` is omitted.
    """
    zeta = np.asarray(zeta, dtype=float)
    if not np.all(np.isfinite(zeta)):
        raise NonFiniteUtility("mean utilities must be finite")
    if shifts is None:
        shifts = np.zeros((zeta.size, R or 1))
    shifts = np.asarray(shifts, dtype=float)
    return logit_shares(zeta[:, None] + shifts)


def invert_shares(observed, shifts=None, tol=1e-12, max_iter=10_000):
    """Mean utilities that reproduce ``observed`` shares in one market."""
    observed = np.asarray(observed, dtype=float)
    shifts = np.zeros((observed.size, 1)) if shifts is None else np.asarray(shifts, dtype=float)
    zeta = _contract(observed[None, :], shifts[None], np.ones((1, observed.size), bool), tol, max_iter)
    return zeta[0]


def _contract(observed, shifts, mask, tol, max_iter):
    # batched fixed point over groups; observed/mask (G, J), shifts (G, J, R)
    log_s = np.log(np.where(mask, observed, 1.0))
    # start at the plain-logit solution, exact when there is no heterogeneity
    outside = 1.0 - np.sum(np.where(mask, observed, 0.0), axis=1, keepdims=True)
    zeta = np.where(mask, log_s - np.log(outside), 0.0)
    active = np.ones(observed.shape[0], bool)
    growth = np.zeros(observed.shape[0], int)
    last = np.full(observed.shape[0], np.inf)
    for it in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return zeta
        s = logit_shares(zeta[idx, :, None] + shifts[idx], mask[idx])
        step = np.where(mask[idx], log_s[idx] - np.log(np.where(mask[idx], s, 1.0)), 0.0)
        resid = np.max(np.abs(step), axis=1)
        done = resid <= tol
        growth[idx] = np.where(resid > last[idx], growth[idx] + 1, 0)
        last[idx] = resid
        if np.any(growth[idx] >= 50):
            bad = idx[growth[idx] >= 50][0]
            raise NoConvergence(
                f"share inversion diverging in group {bad}", iterations=it, residual=float(last[bad])
            )
        zeta[idx[~done]] += step[~done]
        active[idx[done]] = False
    worst = float(np.max(last[active]))
    raise NoConvergence(
        f"share inversion did not converge in {max_iter} iterations", iterations=max_iter, residual=worst
    )


def invert_all(data, draws, tol=1e-12, max_iter=10_000):
    """Invert every (market, period) group at once; returns zeta per row."""
    _, inv = data.group_index()
    n_groups = inv.max() + 1
    counts = np.bincount(inv, minlength=n_groups)
    J = counts.max()
    order = np.argsort(inv, kind="stable")
    slot = np.empty(data.n_rows, int)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot[order] = np.arange(data.n_rows) - np.repeat(starts, counts)

    obs = np.zeros((n_groups, J))
    mask = np.zeros((n_groups, J), bool)
    sh = np.zeros((n_groups, J, draws.R))
    obs[inv, slot] = data.share
    mask[inv, slot] = True
    sh[inv, slot] = draws.shifts(data.x, data.price)
    zeta = _contract(obs, sh, mask, tol, max_iter)
    return zeta[inv, slot]


def structural_residual(delta, data):
    """``xi = zeta - x beta + alpha p`` for ``delta = (beta, alpha)``."""
    delta = np.asarray(delta, dtype=float)
    return data.zeta - data.design() @ delta


def default_weight(Z):
    Z = np.asarray(Z, dtype=float)
    return np.linalg.inv(Z.T @ Z / Z.shape[0])


def gmm_objective(delta, data, weight=None):
    """``Q(delta) = xi' Z W Z' xi``."""
    if data.zeta is None:
        raise ValueError("invert mean utilities before evaluating the objective")
    Z = data.Z()
    W = default_weight(Z) if weight is None else np.asarray(weight, dtype=float)
    if W.shape != (Z.shape[1], Z.shape[1]):
        raise ShapeMismatch(f"weight has shape {W.shape}, expected {(Z.shape[1],) * 2}")
    m = Z.T @ structural_residual(delta, data)
    return float(m @ W @ m)


def _central_gradient(f, x, rel_step=1e-6):
    g = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * (1.0 + abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def estimate_demand(data, draws=None, weight=None, init=None, tol=1e-8, max_iter=500,
                    inversion_tol=1e-12, inversion_max_iter=10_000, groups=None):
    """Invert shares, minimise the GMM objective by BFGS and attach influence values.

    BFGS runs on ``Q / n^2`` (the objective in averaged moments), which has
    the same minimiser and keeps the tolerance independent of sample size.
    Convergence requires ``||grad (Q / n^2)||_inf <= tol (1 + Q / n^2)``. On failure
    :class:`NoConvergence` (or :class:`LineSearchFailure`) is raised with the
    partial estimate in its ``estimate`` attribute.

    ``groups`` labels the second-stage observation of each row (markets by
    default); influence rows follow the sorted group labels.
    """
    draws = draws or Draws()
    if data.zeta is None:
        data = data.with_zeta(invert_all(data, draws, tol=inversion_tol, max_iter=inversion_max_iter))
    Z = data.Z()
    W = default_weight(Z) if weight is None else np.asarray(weight, dtype=float)
    x0 = np.zeros(D_X + 1) if init is None else np.asarray(init, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial value must be finite")

    # minimise Q / n^2 (averaged moments): same minimiser, scale-free tolerance
    scale = 1.0 / Z.shape[0] ** 2

    def Q(delta):
        return scale * gmm_objective(delta, data, W)

    res = minimize(
        Q,
        x0,
        jac=lambda d: _central_gradient(Q, d),
        method="BFGS",
        options={"gtol": tol, "maxiter": max_iter},
    )
    delta_hat = res.x
    q = float(res.fun)
    grad = _central_gradient(Q, delta_hat)
    gnorm = float(np.max(np.abs(grad)))
    converged = gnorm <= tol * (1.0 + abs(q))

    influence, G = gmm_influence(data, delta_hat, weight=W, groups=groups)
    estimate = FirstStageEstimate(
        delta_hat=delta_hat,
        influence=influence,
        G=G,
        converged=bool(converged),
        objective_value=q / scale,
        iterations=int(res.nit),
        message=str(res.message),
        extra={"zeta": data.zeta, "gradient_norm": gnorm, "weight": W},
    )
    if not converged:
        cls = LineSearchFailure if res.status == 2 else NoConvergence
        err = cls(f"GMM minimisation did not converge: {res.message}", iterations=res.nit, residual=gnorm)
        err.estimate = estimate
        raise err
    return estimate
