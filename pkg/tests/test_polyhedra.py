import numpy as np
import pytest

from momineq.exceptions import DimensionTooLarge
from momineq.polyhedra import eliminate_nuisance, enumerate_h, nuisance_feasible
from oracles import lp_nuisance_feasible


def test_zero_C_gives_simplex_vertices():
    H = enumerate_h(np.zeros((3, 1)))
    assert np.array_equal(H, np.eye(3))
    B = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]])
    d = np.array([1.0, 2.0, 3.0])
    res = eliminate_nuisance(B, np.zeros((3, 1)), d)
    order = np.argmax(res.H, axis=1)
    assert np.allclose(res.A, B[order])
    assert np.allclose(res.b, d[order])


def test_opposite_rows_cancel():
    # delta >= v1 and -delta >= v2 are jointly feasible iff v1 + v2 <= 0
    C = np.array([[1.0], [-1.0]])
    H = enumerate_h(C)
    assert np.allclose(H, [[0.5, 0.5]])


def test_vertices_satisfy_constraints(rng):
    for _ in range(50):
        k, dN = rng.integers(2, 7), rng.integers(1, 3)
        C = rng.standard_normal((k, dN))
        H = enumerate_h(C)
        if H.shape[0]:
            assert np.all(H >= -1e-12)
            assert np.allclose(H.sum(axis=1), 1.0)
            assert np.allclose(H @ C, 0.0, atol=1e-9)


def test_empty_polyhedron_has_no_vertices():
    # all rows of C positive: C'h = 0 with h >= 0, sum 1 impossible
    H = enumerate_h(np.array([[1.0], [2.0], [0.5]]))
    assert H.shape == (0, 3)


def test_enumeration_is_deterministic(rng):
    C = rng.standard_normal((6, 2))
    assert np.array_equal(enumerate_h(C), enumerate_h(C.copy()))


def test_feasibility_matches_lp_and_elimination(rng):
    disagreements = 0
    for _ in range(60):
        k, dM, dN = rng.integers(2, 7), rng.integers(1, 4), rng.integers(1, 4)
        B = rng.standard_normal((k, dM))
        C = rng.standard_normal((k, dN))
        d = rng.standard_normal(k)
        res = eliminate_nuisance(B, C, d)
        for _ in range(10):
            mu = rng.standard_normal(dM) * 2
            direct = nuisance_feasible(B, C, d, mu)
            lp = lp_nuisance_feasible(B, C, d, mu)
            elim = bool(np.all(res.A @ mu <= res.b + 1e-9)) if res.H.shape[0] else True
            disagreements += (direct != lp) + (direct != elim)
    assert disagreements == 0


def test_feasibility_dimension_guard():
    with pytest.raises(DimensionTooLarge):
        nuisance_feasible(np.ones((9, 1)), np.ones((9, 1)), np.zeros(9), np.zeros(1))
    with pytest.raises(DimensionTooLarge):
        nuisance_feasible(np.ones((3, 1)), np.ones((3, 4)), np.zeros(3), np.zeros(1))


def test_cap_enforced():
    with pytest.raises(DimensionTooLarge):
        enumerate_h(np.ones((16, 1)))
