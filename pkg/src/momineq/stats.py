"""Small self-contained numerical kernels.

Normal CDF, chi-squared quantiles through the regularized incomplete gamma
function, Cholesky-based SPD solves and second-moment matrices.
"""

import math

import numpy as np

from .exceptions import EmptyData, NotPositiveDefinite, RaggedRows

_SQRT2 = math.sqrt(2.0)
_EPS = 1e-16


def std_normal_cdf(x):
    """Standard normal CDF, accurate to ~1e-16 absolute through ``erfc``."""
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    return 0.5 * math.erfc(-x / _SQRT2)


def _gamma_series(a, x):
    # lower regularized P(a, x) for x < a + 1
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a, x):
    # upper regularized Q(a, x) for x >= a + 1, modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma(a, x):
    """Return ``(P(a, x), Q(a, x))``, the regularized incomplete gamma pair."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x <= 0:
        return 0.0, 1.0
    if x == math.inf:
        return 1.0, 0.0
    if x < a + 1.0:
        p = _gamma_series(a, x)
        return p, 1.0 - p
    q = _gamma_cont_frac(a, x)
    return 1.0 - q, q


def chi2_cdf(q, df):
    if df == 0:
        return 1.0 if q >= 0 else 0.0
    return regularized_gamma(df / 2.0, q / 2.0)[0]


def _chi2_logpdf(q, df):
    a = df / 2.0
    return (a - 1.0) * math.log(q) - q / 2.0 - a * math.log(2.0) - math.lgamma(a)


def chi2_quantile(df, p):
    """Quantile of the chi-squared distribution with ``df`` degrees of freedom.

    ``df = 0`` is the point mass at zero, so its quantile is 0 for every p.
    Otherwise the root of ``P(df/2, q/2) = p`` is bracketed and polished by
    Newton steps that fall back to bisection when they leave the bracket.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    if df < 0 or int(df) != df:
        raise ValueError(f"df must be a nonnegative integer, got {df!r}")
    df = int(df)
    if df == 0:
        return 0.0
    if df == 2:
        return -2.0 * math.log1p(-p)

    a = df / 2.0
    upper = p > 0.5
    target = 1.0 - p if upper else p

    def resid(q):
        lo_p, up_q = regularized_gamma(a, q / 2.0)
        # sign convention: increasing in q for both branches
        return (target - up_q) if upper else (lo_p - target)

    lo, hi = 0.0, max(1.0, float(df))
    while resid(hi) < 0:
        lo, hi = hi, 2.0 * hi
    q = 0.5 * (lo + hi)
    for _ in range(200):
        r = resid(q)
        if r == 0.0:
            return q
        if r < 0:
            lo = q
        else:
            hi = q
        step = r / math.exp(_chi2_logpdf(q, df)) if q > 0 else math.inf
        q_new = q - step
        if not lo < q_new < hi:
            q_new = 0.5 * (lo + hi)
        if abs(q_new - q) <= 1e-15 * max(1.0, q):
            return q_new
        q = q_new
    return q


def normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` by bisection; used in tests and Monte Carlo."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if std_normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def cholesky(S, rel_tol=0.0):
    """Lower Cholesky factor of a symmetric matrix.

    Raises :class:`NotPositiveDefinite` when a pivot is nonpositive, or when
    the smallest squared pivot falls to ``rel_tol`` times the largest diagonal
    entry (numerically singular).
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotPositiveDefinite("matrix must be square")
    if S.shape[0] == 0:
        return np.zeros((0, 0))
    scale = np.max(np.abs(S))
    if not np.isfinite(scale):
        raise NotPositiveDefinite("matrix has non-finite entries")
    if not np.allclose(S, S.T, rtol=1e-12, atol=1e-12 * scale):
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        L = np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("nonpositive pivot in Cholesky factorization") from exc
    piv = np.diag(L) ** 2
    if np.any(piv <= 0) or piv.min() <= rel_tol * np.max(np.diag(S)):
        raise NotPositiveDefinite("numerically singular pivot in Cholesky factorization")
    return L


def spd_solve(S, v):
    """Solve ``S x = v`` for symmetric positive definite ``S``."""
    L = cholesky(S)
    v = np.asarray(v, dtype=float)
    y = np.linalg.solve(L, v)
    return np.linalg.solve(L.T, y)


def sample_covariance(rows, center=False):
    """Average outer product of the rows, divisor n.

    With ``center=False`` this is the raw second-moment matrix
    ``(1/n) sum r_i r_i'``; with ``center=True`` the rows are demeaned first.
    """
    if isinstance(rows, np.ndarray):
        X = np.asarray(rows, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
    else:
        rows = list(rows)
        if not rows:
            raise EmptyData("no rows")
        lengths = {len(np.atleast_1d(r)) for r in rows}
        if len(lengths) != 1:
            raise RaggedRows(f"rows have unequal lengths {sorted(lengths)}")
        X = np.array([np.atleast_1d(r) for r in rows], dtype=float)
    if X.shape[0] == 0:
        raise EmptyData("no rows")
    # canonical row order makes the floating-point sum permutation invariant
    X = X[np.lexsort(X.T[::-1])]
    if center:
        X = X - X.mean(axis=0)
    out = X.T @ X / X.shape[0]
    return 0.5 * (out + out.T)
