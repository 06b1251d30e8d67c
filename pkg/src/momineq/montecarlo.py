"""Monte Carlo size and coverage studies.

The size study draws ``pbar ~ N(mu, Sigma / n)`` directly and hands the test
the true ``Sigma``, so the only approximation left is the finite number of
replications. The coverage study runs the whole pipeline (simulate, first
stage, corrected covariance, test at the true parameter) once per
replication.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .demand import estimate_demand
from .exceptions import ConfigInvalid, MomIneqError
from .market import SynthConfig, VehicleMarketModel, prepare_panel, synth_dgp
from .rcc import rcc_test
from .stats import cholesky
from .two_stage import covariance_from_rows, jacobian_p_delta

BOUNDARY, INTERIOR, VIOLATED = "boundary", "interior", "violated"
RELATION_TOL = 1e-12


def rep_seed(master, rep):
    """Seed of replication ``rep``: a counter-based split of ``master``."""
    return int(np.random.SeedSequence([int(master), int(rep)]).generate_state(1)[0])


def binomial_se(rate, reps):
    if reps < 2:
        return None
    return math.sqrt(rate * (1.0 - rate) / reps)


@dataclass
class SizeStudyDesign:
    A: np.ndarray
    rho: np.ndarray
    Sigma: np.ndarray
    mu: np.ndarray
    n: int = 500
    reps: int = 10_000
    alpha: float = 0.05
    seed: int = 0
    kind: str = BOUNDARY

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.rho = np.asarray(self.rho, dtype=float).ravel()
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        cholesky(self.Sigma)
        if not np.any(self.A):
            raise ConfigInvalid("A: must not be identically zero")
        if self.reps < 100:
            raise ConfigInvalid("reps: a size study needs at least 100 replications")
        gap = self.A @ self.mu - self.rho
        tol = RELATION_TOL * (1.0 + np.abs(self.rho))
        ok = {
            BOUNDARY: np.all(np.abs(gap) <= tol),
            INTERIOR: np.all(gap <= tol),
            VIOLATED: np.any(gap > tol),
        }.get(self.kind)
        if ok is None:
            raise ConfigInvalid(f"kind: unknown design kind {self.kind!r}")
        if not ok:
            raise ConfigInvalid(f"mu: does not satisfy the declared '{self.kind}' relation")

    def to_dict(self):
        return {
            "kind": self.kind,
            "A": self.A.tolist(),
            "rho": self.rho.tolist(),
            "Sigma": self.Sigma.tolist(),
            "mu": self.mu.tolist(),
            "n": self.n,
            "reps": self.reps,
            "alpha": self.alpha,
            "seed": self.seed,
        }


def boundary_design(reps=10_000, alpha=0.05, seed=0, n=500):
    """Two-dimensional orthant with the mean at the vertex."""
    return SizeStudyDesign(
        A=np.eye(2), rho=np.zeros(2), Sigma=np.array([[1.0, 0.3], [0.3, 1.0]]),
        mu=np.zeros(2), n=n, reps=reps, alpha=alpha, seed=seed, kind=BOUNDARY,
    )


def interior_designs(count=5, reps=10_000, alpha=0.05, seed=0, n=500):
    """Random polyhedra with some rows binding and the rest slack by O(1/sqrt(n))."""
    rng = np.random.default_rng([int(seed), 0x1D])
    designs = []
    for i in range(count):
        d = int(rng.integers(2, 5))
        k = int(rng.integers(2, 6))
        A = rng.standard_normal((k, d))
        F = rng.standard_normal((d, d))
        Sigma = F @ F.T + 0.5 * np.eye(d)
        mu = rng.standard_normal(d)
        scale = np.sqrt(np.einsum("ij,jk,ik->i", A, Sigma, A) / n)
        slack = scale * rng.exponential(1.0, k)
        slack[rng.random(k) < 0.4] = 0.0
        rho = A @ mu + slack
        designs.append(SizeStudyDesign(A=A, rho=rho, Sigma=Sigma, mu=mu, n=n, reps=reps,
                                       alpha=alpha, seed=rep_seed(seed, i), kind=INTERIOR))
    return designs


def far_interior_design(reps=10_000, alpha=0.05, seed=0, n=500):
    A = np.eye(2)
    Sigma = np.array([[1.0, 0.3], [0.3, 1.0]])
    rho = 20.0 * np.sqrt(np.diag(Sigma) / n)
    return SizeStudyDesign(A=A, rho=rho, Sigma=Sigma, mu=np.zeros(2), n=n, reps=reps,
                           alpha=alpha, seed=seed, kind=INTERIOR)


def violated_design(reps=10_000, alpha=0.05, seed=0, n=500, margin=10.0):
    """Orthant with the mean ``margin`` standard errors outside the first face."""
    A = np.eye(2)
    Sigma = np.array([[1.0, 0.3], [0.3, 1.0]])
    mu = np.array([margin * math.sqrt(Sigma[0, 0] / n), 0.0])
    return SizeStudyDesign(A=A, rho=np.zeros(2), Sigma=Sigma, mu=mu, n=n, reps=reps,
                           alpha=alpha, seed=seed, kind=VIOLATED)


DESIGNS = {
    BOUNDARY: boundary_design,
    "far-interior": far_interior_design,
    VIOLATED: violated_design,
}


@dataclass
class StudyResult:
    rate: float
    se: float
    reps: int
    count: int
    runtime: float
    failures: int = 0
    truncated: bool = False
    design: dict = field(default_factory=dict)

    @property
    def se_defined(self):
        return self.se is not None

    def to_dict(self):
        out = asdict(self)
        out["se_defined"] = self.se_defined
        return out


def _size_rep(design, rep):
    rng = np.random.default_rng(rep_seed(design.seed, rep))
    L = np.linalg.cholesky(design.Sigma)
    pbar = design.mu + L @ rng.standard_normal(design.mu.size) / math.sqrt(design.n)
    return rcc_test(pbar, design.Sigma, design.A, design.rho, design.n, design.alpha).reject


def _size_chunk(args):
    design, reps = args
    return [bool(_size_rep(design, r)) for r in reps]


def _run(fn, design, reps, workers):
    """Evaluate ``fn(design, rep)`` for every rep; returns outcomes in rep order."""
    if workers <= 1:
        out = []
        try:
            for r in reps:
                out.append(fn(design, r))
        except KeyboardInterrupt:
            return out, True
        return out, False
    chunks = np.array_split(np.asarray(reps), workers * 4)
    outcomes = []
    with ProcessPoolExecutor(max_workers=workers) as ex:
        for part in ex.map(_CHUNK[fn], [(design, list(c)) for c in chunks]):
            outcomes.extend(part)
    return outcomes, False


def run_size_study(design, workers=1):
    """Rejection frequency under exact normality and known covariance."""
    t0 = time.perf_counter()
    outcomes, truncated = _run(_size_rep, design, range(design.reps), workers)
    done = len(outcomes)
    rejections = int(sum(outcomes))
    rate = rejections / done if done else float("nan")
    return StudyResult(rate=rate, se=binomial_se(rate, done), reps=done, count=rejections,
                       runtime=time.perf_counter() - t0, truncated=truncated, design=design.to_dict())


# --------------------------------------------------------------------------
# coverage of the full two-stage pipeline


@dataclass
class CoverageConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    reps: int = 500
    alpha: float = 0.05
    seed: int = 0
    center: bool = False

    def __post_init__(self):
        if isinstance(self.synth, dict):
            self.synth = SynthConfig(**self.synth)
        if self.reps < 1:
            raise ConfigInvalid("reps: must be at least 1")
        if not 0.0 < self.alpha <= 0.5:
            raise ConfigInvalid("alpha: must lie in (0, 1/2]")
        if self.synth.template_seed is None:
            # one event template for the whole study; samples vary by rep
            self.synth = replace(self.synth, template_seed=int(self.seed))

    def to_dict(self):
        return {"synth": self.synth.to_dict(), "reps": self.reps, "alpha": self.alpha,
                "seed": self.seed, "center": self.center}


def pipeline_decision(dataset, theta=None, alpha=0.05, center=False):
    """First stage, corrected covariance and the test at ``theta`` (truth by default)."""
    est = estimate_demand(dataset.demand, dataset.draws)
    data = dataset.demand.with_zeta(est.extra["zeta"])
    panel = prepare_panel(data, dataset.events, dataset.draws)
    model = VehicleMarketModel.from_panel(panel)
    theta = dataset.theta if theta is None else theta
    p = model.moments(panel, theta, est.delta_hat)
    P = jacobian_p_delta(model, panel, theta, est.delta_hat)
    Sigma = covariance_from_rows(p, P, est.influence, center=center)
    A, rho = model.constraints(theta)
    return rcc_test(p.mean(axis=0), Sigma, A, rho, p.shape[0], alpha)


def _coverage_rep(config, rep):
    ds = synth_dgp(config.synth, seed=rep_seed(config.seed, rep))
    try:
        res = pipeline_decision(ds, alpha=config.alpha, center=config.center)
    except MomIneqError:
        return None
    return not res.reject


def _coverage_chunk(args):
    config, reps = args
    return [_coverage_rep(config, r) for r in reps]


_CHUNK = {_size_rep: _size_chunk, _coverage_rep: _coverage_chunk}


def run_coverage_study(config, workers=1):
    """Fraction of replications whose test accepts the true parameter.

    Replications whose first stage or test fails are counted in
    ``failures`` and left out of the rate.
    """
    t0 = time.perf_counter()
    outcomes, truncated = _run(_coverage_rep, config, range(config.reps), workers)
    ok = [o for o in outcomes if o is not None]
    accepted = int(sum(ok))
    rate = accepted / len(ok) if ok else float("nan")
    return StudyResult(rate=rate, se=binomial_se(rate, len(ok)), reps=len(ok), count=accepted,
                       runtime=time.perf_counter() - t0, failures=len(outcomes) - len(ok),
                       truncated=truncated, design=config.to_dict())
