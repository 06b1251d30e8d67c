"""Projection of the sample moment vector onto the inequality polyhedron.

Minimises ``n (pbar - k)' Sigma^{-1} (pbar - k)`` subject to ``A k <= rho``
with a dual active-set method in the style of Goldfarb and Idnani. The
problem is first whitened with the Cholesky factor of ``Sigma`` so the
Hessian becomes the identity; the solver then starts from the unconstrained
minimiser and adds violated constraints one at a time while keeping the
multipliers dual feasible.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import Infeasible, MaxIterations, ShapeMismatch
from .stats import cholesky

EPS_ACT = 1e-7
EPS_FEAS = 1e-9


@dataclass(frozen=True)
class QpProblem:
    pbar: np.ndarray
    Sigma: np.ndarray
    A: np.ndarray
    rho: np.ndarray
    n: float

    def __post_init__(self):
        pbar = np.asarray(self.pbar, dtype=float).ravel()
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(-1, pbar.shape[0]) if A.size else np.zeros((0, pbar.shape[0]))
        rho = np.asarray(self.rho, dtype=float).ravel()
        d = pbar.shape[0]
        if Sigma.shape != (d, d):
            raise ShapeMismatch(f"Sigma has shape {Sigma.shape}, expected {(d, d)}")
        if A.shape[1] != d or A.shape[0] != rho.shape[0]:
            raise ShapeMismatch(f"A {A.shape} and rho {rho.shape} do not match pbar ({d},)")
        if not self.n > 0:
            raise ValueError("sample size must be positive")
        object.__setattr__(self, "pbar", pbar)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True)
class QpSolution:
    """Minimiser and statistic.

    ``multipliers`` are the Lagrange multipliers of ``A k <= rho`` for the
    objective ``T`` itself; ``active_rows`` holds 0-based row indices whose
    residual is within ``EPS_ACT * (1 + |rho_l|)``.
    """

    kappa_hat: np.ndarray
    T: float
    multipliers: np.ndarray
    active_rows: tuple
    iterations: int = 0
    whitened: dict = field(default=None, repr=False, compare=False)


def active_set_of(A, rho, kappa, eps_act=EPS_ACT):
    resid = A @ kappa - rho
    return tuple(int(i) for i in np.flatnonzero(np.abs(resid) <= eps_act * (1.0 + np.abs(rho))))


def solve_projection(problem, max_iter=None):
    """Solve the projection QP; see :class:`QpProblem` for the inputs."""
    pbar, Sigma, A, rho, n = problem.pbar, problem.Sigma, problem.A, problem.rho, problem.n
    m, d = A.shape
    L = cholesky(Sigma)

    if m == 0 or np.all(A @ pbar <= rho + EPS_FEAS):
        return QpSolution(
            kappa_hat=pbar.copy(),
            T=0.0,
            multipliers=np.zeros(m),
            active_rows=active_set_of(A, rho, pbar),
        )

    root_n = np.sqrt(n)
    ubar = root_n * solve_triangular(L, pbar, lower=True)
    At = (A @ L) / root_n
    row_norm = np.linalg.norm(At, axis=1)

    u, lam, active, steps = _dual_active_set(ubar, At, rho, row_norm, max_iter or 50 * (m + d) + 100)

    kappa = L @ u / root_n
    diff = u - ubar
    T = float(diff @ diff)
    mult = np.zeros(m)
    for j, lj in zip(active, lam):
        mult[j] = 2.0 * max(lj, 0.0)
    return QpSolution(
        kappa_hat=kappa,
        T=T,
        multipliers=mult,
        active_rows=active_set_of(A, rho, kappa),
        iterations=steps,
        whitened={"u": u, "ubar": ubar, "At": At},
    )


def _dual_active_set(ubar, At, rho, row_norm, max_iter):
    # constraints are At u <= rho; internally n_l' u >= b_l with n_l = -At_l
    u = ubar.copy()
    active = []
    lam = []
    steps = 0
    while True:
        s = rho - At @ u
        tol = 1e-11 * (1.0 + np.abs(rho) + row_norm * np.linalg.norm(u))
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(row_norm > 0, s / row_norm, s)
        score[active] = np.inf
        score[s >= -tol] = np.inf
        p = int(np.argmin(score))
        if not np.isfinite(score[p]):
            return u, lam, active, steps

        n_p = -At[p]
        lam_plus = list(lam) + [0.0]
        while True:
            steps += 1
            if steps > max_iter:
                raise MaxIterations(f"active-set solver exceeded {max_iter} steps")
            q = len(active)
            if q:
                N = -At[active].T
                Q, R = np.linalg.qr(N)
                proj = Q.T @ n_p
                z = n_p - Q @ proj
                r = solve_triangular(R, proj)
            else:
                z = n_p
                r = np.zeros(0)

            t1, k_drop = np.inf, None
            for j in range(q):
                if r[j] > 1e-14:
                    ratio = lam_plus[j] / r[j]
                    if ratio < t1:
                        t1, k_drop = ratio, j

            zn = float(z @ n_p)
            if np.linalg.norm(z) <= 1e-12 * max(np.linalg.norm(n_p), 1e-300) or zn <= 0:
                t2 = np.inf
            else:
                t2 = -(n_p @ u + rho[p]) / zn
                t2 = max(t2, 0.0)

            t = min(t1, t2)
            if not np.isfinite(t):
                raise Infeasible("constraint set {A k <= rho} is empty")

            for j in range(q):
                lam_plus[j] -= t * r[j]
            lam_plus[q] += t
            if np.isfinite(t2):
                u = u + t * z

            if t2 <= t1:
                active.append(p)
                lam = lam_plus
                break
            del active[k_drop]
            del lam_plus[k_drop]


def dual_objective(problem, multipliers):
    """Lagrange dual of the statistic at the given multipliers.

    ``g(v) = v'(A pbar - rho) - v' A Sigma A' v / (4 n)``; equals ``T`` at the
    optimum.
    """
    v = np.asarray(multipliers, dtype=float)
    A = problem.A
    return float(v @ (A @ problem.pbar - problem.rho) - v @ A @ problem.Sigma @ A.T @ v / (4.0 * problem.n))


def kkt_residuals(problem, solution):
    """Return ``dict`` of stationarity, primal, dual and complementarity residuals.

    Stationarity is measured in whitened coordinates, where the objective
    Hessian is the identity: ``|| 2 (u - ubar) + At' v ||_inf``.
    """
    A, rho = problem.A, problem.rho
    kappa, v = solution.kappa_hat, solution.multipliers
    L = cholesky(problem.Sigma)
    root_n = np.sqrt(problem.n)
    u = root_n * solve_triangular(L, kappa, lower=True)
    ubar = root_n * solve_triangular(L, problem.pbar, lower=True)
    At = (A @ L) / root_n
    resid = A @ kappa - rho
    return {
        "stationarity": float(np.max(np.abs(2.0 * (u - ubar) + At.T @ v), initial=0.0)),
        "primal": float(max(np.max(resid, initial=-np.inf), 0.0)),
        "dual": float(max(-np.min(v, initial=0.0), 0.0)),
        "complementarity": float(np.max(np.abs(v * resid), initial=0.0)),
    }
