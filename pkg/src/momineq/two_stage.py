"""First-stage plug-in and the influence-function variance correction.

Any first-stage estimator that returns ``delta_hat`` with per-observation
influence values can be plugged in. The second-stage covariance is the
average outer product of the corrected moments ``p_i + P psi_i`` where ``P``
is the Jacobian of the sample-average moments with respect to the nuisance
parameter.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    EvaluationFailure,
    NotPositiveDefinite,
    ShapeMismatch,
    SingularG,
)
from .stats import cholesky, sample_covariance

RIDGE_START = 1e-10
RIDGE_MAX = 1e-6
SINGULAR_PIVOT_RTOL = 1e-13


@dataclass
class FirstStageEstimate:
    delta_hat: np.ndarray
    influence: np.ndarray
    G: np.ndarray
    converged: bool
    objective_value: float
    iterations: int = 0
    message: str = ""
    extra: dict = field(default_factory=dict, repr=False)

    def fingerprint(self):
        """Short content hash of ``(delta_hat, influence, G)``."""
        import hashlib

        h = hashlib.sha256()
        for arr in (self.delta_hat, self.influence, self.G):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()[:16]


def default_steps(delta):
    delta = np.asarray(delta, dtype=float)
    return 1e-5 * (1.0 + np.abs(delta))


def jacobian_p_delta(model, data, theta, delta_hat, step=None):
    """Central-difference Jacobian of the sample-average moments in ``delta``.

    Returns an array of shape ``(d_M + d_N, dim delta)``. ``step`` may be a
    scalar (absolute, all coordinates) or a per-coordinate array; the default
    is ``1e-5 (1 + |delta_k|)``.
    """
    delta_hat = np.asarray(delta_hat, dtype=float)
    if step is None:
        h = default_steps(delta_hat)
    else:
        h = np.broadcast_to(np.asarray(step, dtype=float), delta_hat.shape)
        if np.any(h <= 0):
            raise ValueError("finite-difference step must be positive")

    def pbar(delta):
        try:
            rows = np.asarray(model.moments(data, theta, delta), dtype=float)
        except Exception as exc:
            raise EvaluationFailure(f"moment evaluation failed at delta={delta}") from exc
        if not np.all(np.isfinite(rows)):
            raise EvaluationFailure(f"non-finite moments at delta={delta}")
        return rows.mean(axis=0)

    cols = []
    for k in range(delta_hat.size):
        e = np.zeros_like(delta_hat)
        e[k] = h[k]
        cols.append((pbar(delta_hat + e) - pbar(delta_hat - e)) / (2.0 * h[k]))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def regularize_spd(S):
    """Add the smallest ridge from the escalation ladder that makes ``S`` factor.

    Tries no ridge first, then ``1e-10 tr/dim`` growing tenfold up to
    ``1e-6 tr/dim``. Returns ``(S_regularized, ridge)``.
    """
    S = np.asarray(S, dtype=float)
    dim = S.shape[0]
    try:
        cholesky(S, rel_tol=SINGULAR_PIVOT_RTOL)
        return S, 0.0
    except NotPositiveDefinite:
        pass
    base = np.trace(S) / dim if dim else 0.0
    if not base > 0:
        raise NotPositiveDefinite("cannot regularize a matrix with nonpositive trace")
    ridge = RIDGE_START * base
    while ridge <= RIDGE_MAX * base * (1 + 1e-12):
        S_r = S + ridge * np.eye(dim)
        try:
            cholesky(S_r, rel_tol=SINGULAR_PIVOT_RTOL)
            return S_r, ridge
        except NotPositiveDefinite:
            ridge *= 10.0
    raise NotPositiveDefinite("matrix stays singular after the maximal ridge")


def corrected_rows(moments, P, influence):
    p = np.atleast_2d(np.asarray(moments, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    psi = np.atleast_2d(np.asarray(influence, dtype=float))
    if psi.shape[0] != p.shape[0]:
        raise ShapeMismatch(f"{p.shape[0]} moment rows but {psi.shape[0]} influence rows")
    if P.shape != (p.shape[1], psi.shape[1]):
        raise ShapeMismatch(f"Jacobian has shape {P.shape}, expected {(p.shape[1], psi.shape[1])}")
    if not np.any(P):
        return p
    return p + psi @ P.T


def covariance_from_rows(moments, P, influence, center=False, return_ridge=False):
    """Corrected covariance from precomputed moment rows (see :func:`corrected_covariance`)."""
    rows = corrected_rows(moments, P, influence)
    if rows.shape[0] < 2:
        raise ShapeMismatch("need at least two observations")
    S, ridge = regularize_spd(sample_covariance(rows, center=center))
    return (S, ridge) if return_ridge else S


def corrected_covariance(model, data, theta, first_stage, P, center=False, return_ridge=False):
    """``(1/n) sum_i [p_i + P psi_i][p_i + P psi_i]'`` with a ridge if singular.

    The uncentred form is the default; ``center=True`` demeans the corrected
    rows first. With ``P = 0`` the correction vanishes and the plain second
    moment matrix of the moments is returned.
    """
    moments = model.moments(data, theta, first_stage.delta_hat)
    return covariance_from_rows(
        moments, P, first_stage.influence, center=center, return_ridge=return_ridge
    )


def influence_from_score(score, delta_hat, weight=None, step=None):
    """Influence values of a GMM estimator from its per-observation score.

    Parameters
    ----------
    score : callable
        ``score(delta) -> (n, m)`` array of per-observation moment values
        ``g(W_i, delta)``.
    delta_hat : array_like
    weight : array_like, optional
        GMM weight; only used when ``m > dim delta``.

    Returns
    -------
    influence : ndarray, shape (n, dim delta)
        ``-G^{-1} g_i`` when exactly identified, otherwise
        ``-(G'WG)^{-1} G'W g_i``.
    G : ndarray, shape (m, dim delta)
        Sample average of ``dg/d delta`` by central differences.
    """
    delta_hat = np.asarray(delta_hat, dtype=float)
    g = np.asarray(score(delta_hat), dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    h = default_steps(delta_hat) if step is None else np.broadcast_to(step, delta_hat.shape)
    cols = []
    for k in range(delta_hat.size):
        e = np.zeros_like(delta_hat)
        e[k] = h[k]
        gp = np.asarray(score(delta_hat + e), dtype=float).reshape(g.shape)
        gm = np.asarray(score(delta_hat - e), dtype=float).reshape(g.shape)
        cols.append((gp - gm).mean(axis=0) / (2.0 * h[k]))
    G = np.column_stack(cols)

    m, p = G.shape
    if m < p:
        raise SingularG(f"{m} moments cannot identify {p} parameters")
    if m == p:
        if np.linalg.cond(G) > 1e10:
            raise SingularG("G is singular or badly conditioned")
        influence = -np.linalg.solve(G, g.T).T
    else:
        W = np.eye(m) if weight is None else np.asarray(weight, dtype=float)
        GWG = G.T @ W @ G
        if np.linalg.cond(GWG) > 1e10:
            raise SingularG("G'WG is singular or badly conditioned")
        influence = -np.linalg.solve(GWG, G.T @ W @ g.T).T
    return influence, G


def gmm_influence(data, delta_hat, instruments=None, groups=None, weight=None):
    """Influence values of the demand GMM estimator.

    The per-product score is ``z_j xi_j`` with the structural residual
    ``xi_j = zeta_j - x_j beta + alpha p_j``. Scores are summed within
    ``groups`` (one entry per product row; default ``data.market``) so that
    each group is one observation of the second stage.

    Returns ``(influence, G)`` with one influence row per group, groups in
    sorted order.
    """
    Z = data.Z() if instruments is None else np.asarray(instruments, dtype=float)
    labels = data.market if groups is None else np.asarray(groups)
    uniq, inv = np.unique(labels, return_inverse=True)
    X, price, zeta = data.x, data.price, data.zeta
    if zeta is None:
        raise ValueError("mean utilities must be inverted before computing the score")
    d_x = X.shape[1]

    def score(delta):
        beta, alpha = delta[:d_x], delta[d_x]
        xi = zeta - X @ beta + alpha * price
        per_row = Z * xi[:, None]
        out = np.zeros((uniq.size, Z.shape[1]))
        np.add.at(out, inv, per_row)
        return out

    return influence_from_score(score, delta_hat, weight=weight)
