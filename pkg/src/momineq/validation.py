"""Input checks shared by the estimator wrappers."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeMismatch
from .stats import cholesky


def check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 < alpha <= 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2], got {alpha}")
    return alpha


def check_moment_rows(rows, min_rows=2):
    """Finite 2-D array of per-observation moments."""
    return check_array(rows, ensure_min_samples=min_rows, dtype=float)


def check_constraints(A, rho, dim):
    A = check_array(np.atleast_2d(A), dtype=float, ensure_min_samples=1)
    rho = np.asarray(rho, dtype=float).ravel()
    if A.shape[1] != dim:
        raise ShapeMismatch(f"A has {A.shape[1]} columns but the moments have {dim}")
    if rho.size != A.shape[0]:
        raise ShapeMismatch(f"rho has {rho.size} entries but A has {A.shape[0]} rows")
    if not np.all(np.isfinite(rho)):
        raise ValueError("rho must be finite")
    return A, rho


def check_spd(S):
    S = check_array(S, dtype=float)
    cholesky(S)
    return S


def check_theta(theta, dim=None):
    theta = np.asarray(theta, dtype=float).ravel()
    if dim is not None and theta.size != dim:
        raise ShapeMismatch(f"theta needs {dim} values, got {theta.size}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return theta
