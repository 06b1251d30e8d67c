"""Refined chi-squared decision for one hypothesised parameter value.

The degrees of freedom are the rank of the binding rows at the projection.
When exactly one linearly independent row binds, the quantile level is
raised from ``1 - alpha`` toward ``1 - 2 alpha`` according to how far the
remaining rows are from binding.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import AnchorNotActive, ZeroAnchorRow
from .qp import EPS_ACT, QpProblem, solve_projection
from .stats import chi2_quantile, std_normal_cdf

RANK_RTOL = 1e-10
DENOM_RTOL = 1e-12


@dataclass(frozen=True)
class RccResult:
    T: float
    r_hat: int
    z: float
    beta: float
    critical: float
    reject: bool
    active_rows: tuple
    diagnostics: tuple = field(default=())

    def to_dict(self):
        return {
            "T": self.T,
            "r_hat": self.r_hat,
            "z": None if math.isinf(self.z) else self.z,
            "beta": self.beta,
            "critical": self.critical,
            "reject": self.reject,
            "active_rows": list(self.active_rows),
            "diagnostics": list(self.diagnostics),
        }


def active_rank(A, active_rows):
    """Numerical rank of the rows of ``A`` listed in ``active_rows``."""
    rows = list(active_rows)
    if not rows:
        return 0
    sub = np.atleast_2d(np.asarray(A, dtype=float))[rows]
    s = np.linalg.svd(sub, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def slackness_z(A, rho, kappa_hat, Sigma, n, anchor_row, exclude=None):
    """Standardised distance of the other rows from binding.

    For each row ``j`` other than the anchor (and outside ``exclude``)::

        z_j = sqrt(n) |a_1|_S (rho_j - a_j'k) / (|a_1|_S |a_j|_S - a_1' S a_j)

    with ``|a|_S = sqrt(a' S a)``; ``z_j = inf`` when the denominator
    vanishes (rows that are positively proportional in the ``S`` metric).
    Returns the infimum, ``inf`` for an empty index set. Negative values are
    clamped to zero.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    rho = np.asarray(rho, dtype=float).ravel()
    kappa_hat = np.asarray(kappa_hat, dtype=float).ravel()
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))

    a1 = A[anchor_row]
    if not np.any(a1):
        raise ZeroAnchorRow(f"row {anchor_row} of A is zero")
    resid = a1 @ kappa_hat - rho[anchor_row]
    if abs(resid) > EPS_ACT * (1.0 + abs(rho[anchor_row])):
        raise AnchorNotActive(f"row {anchor_row} is not active (residual {resid:.3g})")

    skip = {anchor_row} | set(exclude or ())
    S_a1 = Sigma @ a1
    norm1 = math.sqrt(max(a1 @ S_a1, 0.0))
    z = math.inf
    for j in range(A.shape[0]):
        if j in skip:
            continue
        aj = A[j]
        normj = math.sqrt(max(aj @ Sigma @ aj, 0.0))
        denom = norm1 * normj - aj @ S_a1
        if abs(denom) <= DENOM_RTOL * norm1 * normj or normj == 0.0:
            continue
        zj = math.sqrt(n) * norm1 * (rho[j] - aj @ kappa_hat) / denom
        z = min(z, max(zj, 0.0))
    return z


def rcc_decide(qp, A, rho, Sigma, n, alpha):
    """Accept/reject decision given a solved projection ``qp``."""
    if not 0.0 < alpha <= 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2], got {alpha!r}")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    active = tuple(qp.active_rows)
    r_hat = active_rank(A, active)
    z = math.inf
    beta = alpha
    notes = []
    if r_hat == 1:
        anchor = next((j for j in active if np.any(A[j])), None)
        if anchor is None:
            notes.append("rank one with all-zero active rows; beta set to alpha")
        else:
            z = slackness_z(A, rho, qp.kappa_hat, Sigma, n, anchor, exclude=active)
            beta = 2.0 * alpha * std_normal_cdf(z)
    level = 1.0 - beta
    # alpha = 1/2 with z = inf puts the level at 0, where every quantile is 0
    critical = chi2_quantile(r_hat, level) if level > 0.0 else 0.0
    return RccResult(
        T=float(qp.T),
        r_hat=r_hat,
        z=z,
        beta=beta,
        critical=critical,
        reject=bool(qp.T > critical),
        active_rows=active,
        diagnostics=tuple(notes),
    )


def rcc_test(pbar, Sigma, A, rho, n, alpha):
    """Project ``pbar`` onto ``{A kappa <= rho}`` and decide in one call."""
    qp = solve_projection(QpProblem(pbar, Sigma, A, rho, n))
    return rcc_decide(qp, A, rho, Sigma, n, alpha)
