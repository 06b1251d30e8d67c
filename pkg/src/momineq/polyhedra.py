"""Nuisance elimination by vertex enumeration.

The system ``C delta >= B mu - d`` has a solution in ``delta`` exactly when
``H B mu <= H d``, where the rows of ``H`` are the vertices of
``{h >= 0, C'h = 0, 1'h = 1}``. This module enumerates those vertices by
brute force over bases and provides an exhaustive feasibility check that
serves as an independent oracle.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .exceptions import DimensionTooLarge, ShapeMismatch

ENUMERATION_CAP = 15
VERTEX_TOL = 1e-9
DEDUP_TOL = 1e-7


@dataclass(frozen=True)
class EliminationResult:
    H: np.ndarray
    A: np.ndarray
    b: np.ndarray


def _rank(M, rtol=1e-10):
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def enumerate_h(C, cap=ENUMERATION_CAP):
    """Vertices of ``{h in R^k : h >= 0, C'h = 0, 1'h = 1}``.

    Parameters
    ----------
    C : array_like, shape (k, d_N)
    cap : int
        Largest ``k`` accepted; the number of candidate bases grows as
        ``binom(k, r)``.

    Returns
    -------
    ndarray, shape (n_vertices, k)
        Deduplicated vertices in decreasing lexicographic order (unit
        vertices come out as rows of the identity). Zero rows when the
        polyhedron is empty.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    k = C.shape[0]
    if k < 1:
        raise ShapeMismatch("C must have at least one row")
    if k > cap:
        raise DimensionTooLarge(f"k={k} exceeds the enumeration cap {cap}")

    E = np.vstack([C.T, np.ones((1, k))])
    rhs = np.zeros(E.shape[0])
    rhs[-1] = 1.0
    r = _rank(E)

    found = []
    for support in combinations(range(k), r):
        cols = list(support)
        E_B = E[:, cols]
        if _rank(E_B) < r:
            continue
        h_B, *_ = np.linalg.lstsq(E_B, rhs, rcond=None)
        if np.max(np.abs(E_B @ h_B - rhs)) > VERTEX_TOL:
            continue
        if np.min(h_B) < -VERTEX_TOL:
            continue
        h = np.zeros(k)
        h[cols] = np.clip(h_B, 0.0, None)
        if not any(np.max(np.abs(h - g)) <= DEDUP_TOL for g in found):
            found.append(h)

    if not found:
        return np.zeros((0, k))
    H = np.array(found)
    return H[np.lexsort(-H.T[::-1])]


def eliminate_nuisance(B, C, d, cap=ENUMERATION_CAP):
    """Project out the nuisance block: returns ``A = H B`` and ``b = H d``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float).ravel()
    if not (B.shape[0] == C.shape[0] == d.shape[0]):
        raise ShapeMismatch(
            f"row counts differ: B {B.shape}, C {C.shape}, d {d.shape}"
        )
    H = enumerate_h(C, cap=cap)
    return EliminationResult(H=H, A=H @ B, b=H @ d)


def nuisance_feasible(B, C, d, mu, tol=1e-9):
    """Decide whether some ``delta`` satisfies ``C delta >= B mu - d``.

    Exhaustive vertex check: after restricting ``delta`` to the row space of
    ``C`` the polyhedron is pointed, so it is nonempty iff one of its basic
    solutions is feasible.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float).ravel()
    mu = np.asarray(mu, dtype=float).ravel()
    k, d_N = C.shape
    if d_N > 3 or k > 8:
        raise DimensionTooLarge("exhaustive feasibility check needs d_N <= 3 and k <= 8")
    if B.shape != (k, mu.shape[0]) or d.shape[0] != k:
        raise ShapeMismatch("B, C, d, mu are not conformable")

    v = B @ mu - d
    slack_tol = tol * (1.0 + np.abs(v))
    _, s, Vt = np.linalg.svd(C)
    r = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 0 else 0
    if r == 0:
        return bool(np.all(v <= slack_tol))
    Ct = C @ Vt[:r].T
    for rows in combinations(range(k), r):
        sub = Ct[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        w = np.linalg.solve(sub, v[list(rows)])
        if np.all(Ct @ w >= v - slack_tol):
            return True
    return False
