"""Confidence sets by inverting the test over a finite parameter grid."""

import csv
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigInvalid, IoFailure, MomIneqError, SliceNotOnGrid
from .rcc import rcc_test
from .two_stage import covariance_from_rows, jacobian_p_delta

SCHEMA_VERSION = 1
WORKERS_ENV = "MOMINEQ_WORKERS"
SLICE_TOL = 1e-9


@dataclass(frozen=True)
class GridDim:
    """One grid axis: ``count`` evenly spaced values on ``[min, max]`` or a fixed value."""

    label: str
    min: float = None
    max: float = None
    count: int = 1
    fixed: float = None

    def __post_init__(self):
        if self.fixed is not None:
            if self.min is not None or self.max is not None:
                raise ConfigInvalid(f"{self.label}: give either 'fixed' or 'min'/'max', not both")
            return
        if self.min is None or self.max is None:
            raise ConfigInvalid(f"{self.label}: needs 'min' and 'max' or 'fixed'")
        if int(self.count) < 1:
            raise ConfigInvalid(f"{self.label}: count must be at least 1")
        if not self.min <= self.max:
            raise ConfigInvalid(f"{self.label}: min exceeds max")

    def values(self):
        if self.fixed is not None:
            return np.array([float(self.fixed)])
        if self.count == 1:
            return np.array([float(self.min)])
        return np.linspace(self.min, self.max, int(self.count))

    @property
    def is_fixed(self):
        return self.fixed is not None or self.count == 1

    def to_dict(self):
        if self.fixed is not None:
            return {"label": self.label, "fixed": self.fixed}
        return {"label": self.label, "min": self.min, "max": self.max, "count": int(self.count)}


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid over ``theta``, enumerated row-major in the declared order."""

    dims: tuple
    alpha: float = 0.05

    def __post_init__(self):
        dims = tuple(d if isinstance(d, GridDim) else GridDim(**d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise ConfigInvalid("grid: at least one dimension is required")
        labels = [d.label for d in dims]
        if len(set(labels)) != len(labels):
            raise ConfigInvalid("grid: duplicate dimension labels")
        if not 0.0 < self.alpha <= 0.5:
            raise ConfigInvalid(f"alpha: must lie in (0, 1/2], got {self.alpha}")

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        unknown = set(spec) - {"dims", "alpha"}
        if unknown:
            raise ConfigInvalid(f"grid: unknown keys {sorted(unknown)}")
        dims = []
        for d in spec.get("dims", ()):
            extra = set(d) - {"label", "min", "max", "count", "fixed"}
            if extra:
                raise ConfigInvalid(f"grid dimension: unknown keys {sorted(extra)}")
            dims.append(GridDim(**d))
        return cls(dims=tuple(dims), alpha=spec.get("alpha", 0.05))

    def to_dict(self):
        return {"dims": [d.to_dict() for d in self.dims], "alpha": self.alpha}

    @property
    def labels(self):
        return tuple(d.label for d in self.dims)

    @property
    def shape(self):
        return tuple(d.values().size for d in self.dims)

    def points(self):
        return np.array(list(itertools.product(*(d.values() for d in self.dims))), dtype=float)

    def check_model(self, model):
        labels = getattr(model, "theta_labels", None)
        if labels is not None and tuple(labels) != self.labels:
            raise ConfigInvalid(f"grid: dimensions {self.labels} do not match parameters {tuple(labels)}")
        for label, (lo, hi) in getattr(model, "theta_bounds", {}).items():
            if label in self.labels:
                vals = self.dims[self.labels.index(label)].values()
                if vals.min() < lo or vals.max() > hi:
                    raise ConfigInvalid(f"{label}: grid leaves [{lo}, {hi}]")


@dataclass
class ConfidenceGrid:
    labels: tuple
    points: np.ndarray
    results: list
    errors: list
    alpha: float
    shape: tuple = ()
    metadata: dict = field(default_factory=dict)

    @property
    def undecided(self):
        return np.array([r is None for r in self.results])

    @property
    def accepted(self):
        return np.array([r is not None and not r.reject for r in self.results])

    def accepted_points(self):
        return self.points[self.accepted]

    def status(self, i):
        r = self.results[i]
        if r is None:
            return "undecided"
        return "rejected" if r.reject else "accepted"

    def to_dict(self):
        points = []
        for i, theta in enumerate(self.points):
            points.append({
                "theta": [float(v) for v in theta],
                "status": self.status(i),
                "result": None if self.results[i] is None else self.results[i].to_dict(),
                "error": self.errors[i],
            })
        return {
            "schema": SCHEMA_VERSION,
            "alpha": self.alpha,
            "labels": list(self.labels),
            "shape": list(self.shape),
            "metadata": self.metadata,
            "n_accepted": int(self.accepted.sum()),
            "n_undecided": int(self.undecided.sum()),
            "points": points,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def dump(self, path):
        try:
            with open(path, "w", newline="\n") as fh:
                fh.write(self.dumps())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc


def _moment_inputs(model, data, theta, first_stage, center):
    p = model.moments(data, theta, first_stage.delta_hat)
    P = jacobian_p_delta(model, data, theta, first_stage.delta_hat)
    Sigma = covariance_from_rows(p, P, first_stage.influence, center=center)
    return p.mean(axis=0), Sigma, p.shape[0]


def evaluate_point(model, data, theta, first_stage, alpha=0.05, center=False, inputs=None):
    """RCC decision at one ``theta``; ``inputs`` may carry a precomputed ``(pbar, Sigma, n)``."""
    pbar, Sigma, n = inputs or _moment_inputs(model, data, theta, first_stage, center)
    A, rho = model.constraints(theta)
    return rcc_test(pbar, Sigma, A, rho, n, alpha)


def _evaluate(model, data, theta, first_stage, alpha, center, inputs):
    try:
        return evaluate_point(model, data, theta, first_stage, alpha, center, inputs), None
    except (MomIneqError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


_WORKER_STATE = {}


def _init_worker(state):
    _WORKER_STATE.clear()
    _WORKER_STATE.update(state)


def _worker_eval(theta):
    s = _WORKER_STATE
    return _evaluate(s["model"], s["data"], theta, s["first_stage"], s["alpha"], s["center"], s["inputs"])


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def invert_test(grid, model, data, first_stage, alpha=None, center=False, workers=None,
                metadata=None, progress=None):
    """Evaluate the test at every grid point.

    The corrected covariance is recomputed at each point because the moments
    may depend on ``theta``; models that declare
    ``moments_depend_on_theta = False`` share one computation. Solver
    failures at a point are recorded as undecided and do not stop the sweep.
    ``progress`` receives ``(index, point_result)`` as points complete.
    """
    if not first_stage.converged:
        raise ValueError("first stage did not converge")
    alpha = grid.alpha if alpha is None else alpha
    grid.check_model(model)
    points = grid.points()
    workers = default_workers() if workers is None else max(1, int(workers))

    inputs = None
    if not model.moments_depend_on_theta:
        inputs = _moment_inputs(model, data, points[0], first_stage, center)

    results = [None] * len(points)
    errors = [None] * len(points)
    meta = dict(metadata or {})
    meta.setdefault("delta_fingerprint", first_stage.fingerprint())
    out = ConfidenceGrid(labels=grid.labels, points=points, results=results, errors=errors,
                         alpha=alpha, shape=grid.shape, metadata=meta)
    if workers == 1 or len(points) < 2:
        for i, theta in enumerate(points):
            results[i], errors[i] = _evaluate(model, data, theta, first_stage, alpha, center, inputs)
            if progress:
                progress(i, out)
        return out

    state = dict(model=model, data=data, first_stage=first_stage, alpha=alpha, center=center, inputs=inputs)
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(state,)) as ex:
        for i, res in enumerate(ex.map(_worker_eval, points, chunksize=max(1, len(points) // (4 * workers)))):
            results[i], errors[i] = res
            if progress:
                progress(i, out)
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "inf" if math.isinf(v) else repr(v)


def slice_rows(grid_result, fixed):
    """Rows of a 2-D slice: all labels not in ``fixed`` vary, the rest are pinned."""
    labels = list(grid_result.labels)
    unknown = set(fixed) - set(labels)
    if unknown:
        raise SliceNotOnGrid(f"no grid dimension named {sorted(unknown)}")
    free = [l for l in labels if l not in fixed]
    if len(free) != 2:
        raise SliceNotOnGrid(f"a slice needs exactly two free dimensions, got {free}")
    keep = np.ones(len(grid_result.points), bool)
    for label, value in fixed.items():
        col = grid_result.points[:, labels.index(label)]
        on = np.abs(col - value) <= SLICE_TOL * (1.0 + abs(value))
        if not np.any(on):
            raise SliceNotOnGrid(f"{label}={value} is not a grid value")
        keep &= on
    i1, i2 = labels.index(free[0]), labels.index(free[1])
    rows = []
    for i in np.flatnonzero(keep):
        r = grid_result.results[i]
        theta = grid_result.points[i]
        if r is None:
            rows.append([theta[i1], theta[i2], False, None, None, None, None])
        else:
            rows.append([theta[i1], theta[i2], not r.reject, r.T, r.r_hat, r.beta, r.critical])
    return free, rows


def export_slices(grid_result, fixed, path, metadata=None):
    """Write one 2-D slice as CSV (row-major over the two free dimensions)."""
    free, rows = slice_rows(grid_result, fixed)
    try:
        with open(path, "w", newline="") as fh:
            for key, value in sorted((metadata or {}).items()):
                fh.write(f"# {key}: {value}\n")
            for key, value in sorted(fixed.items()):
                fh.write(f"# fixed {key}: {_fmt(value)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([free[0], free[1], "accepted", "T", "r_hat", "beta", "critical"])
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path

