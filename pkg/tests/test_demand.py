import numpy as np
import pytest

from momineq.demand import (
    DemandData,
    Draws,
    estimate_demand,
    gmm_objective,
    invert_all,
    invert_shares,
    logit_shares,
    simulate_shares,
)
from momineq.exceptions import EmptyData, NoConvergence, NonFiniteUtility, ShapeMismatch
from momineq.market import SynthConfig, synth_dgp


def test_two_equal_products_split_evenly_with_outside_zero_utility():
    s = simulate_shares([0.0])
    assert s[0] == pytest.approx(0.5, abs=1e-15)
    s = simulate_shares([1.0, 1.0])
    assert s[0] == s[1]


def test_known_logit_shares():
    s = simulate_shares([0.0, 1.0])
    denom = 1 + 1 + np.e
    assert s == pytest.approx([1 / denom, np.e / denom], abs=1e-12)
    assert s == pytest.approx([0.2119, 0.5761], abs=1e-4)


def test_extreme_utilities_do_not_overflow():
    s = simulate_shares([700.0, -700.0])
    assert np.all(np.isfinite(s))
    assert s[0] == pytest.approx(1.0)
    assert s[1] == 0.0 or s[1] < 1e-300
    assert np.isfinite(simulate_shares([-700.0])).all()


def test_nonfinite_utility_rejected():
    with pytest.raises(NonFiniteUtility):
        simulate_shares([np.nan, 0.0])
    with pytest.raises(NonFiniteUtility):
        logit_shares(np.array([[np.inf]]))


def test_masked_products_get_zero_share():
    U = np.array([[[1.0], [2.0], [0.5]]])
    s = logit_shares(U, mask=np.array([[True, False, True]]))
    assert s[0, 1] == 0.0
    ref = simulate_shares([1.0, 0.5])
    assert s[0, [0, 2]] == pytest.approx(ref, abs=1e-15)


def test_logit_inversion_matches_closed_form(rng):
    for _ in range(50):
        J = int(rng.integers(1, 8))
        s = rng.dirichlet(np.ones(J + 1))[:J]
        zeta = invert_shares(s)
        closed = np.log(s) - np.log(1 - s.sum())
        assert np.max(np.abs(zeta - closed)) <= 1e-8


def test_single_product_half_share_inverts_to_zero():
    assert invert_shares([0.5])[0] == pytest.approx(0.0, abs=1e-12)


def test_round_trip_with_heterogeneity(rng):
    draws = Draws(R=50, seed=4, sigma=[0.5, 0.3, 0.0, 0.2, 0.4])
    for _ in range(20):
        J = int(rng.integers(1, 6))
        x = rng.standard_normal((J, 4))
        price = rng.uniform(0.5, 3.0, J)
        zeta = rng.normal(-1.0, 1.0, J)
        sh = draws.shifts(x, price)
        s = simulate_shares(zeta, sh)
        back = invert_shares(s, sh)
        assert np.max(np.abs(back - zeta)) <= 1e-8
        assert np.max(np.abs(simulate_shares(back, sh) - s) / s) <= 1e-10


def test_inversion_reports_nonconvergence():
    with pytest.raises(NoConvergence) as info:
        invert_shares([0.3, 0.2], shifts=np.array([[0.0, 2.0], [1.0, -1.0]]), max_iter=2)
    assert info.value.iterations == 2


def test_batched_inversion_matches_per_market(small_dataset):
    data, draws = small_dataset.demand, small_dataset.draws
    zeta = invert_all(data, draws)
    _, inv = data.group_index()
    for g in range(0, inv.max() + 1, 37):
        rows = np.flatnonzero(inv == g)
        one = invert_shares(data.share[rows], draws.shifts(data.x[rows], data.price[rows]))
        assert np.allclose(zeta[rows], one, atol=1e-10)


def _fixture(zeta=None):
    n = 3
    return DemandData(
        market=[1, 1, 2], period=[1, 1, 1], firm=[1, 2, 1], product=[10, 20, 10],
        x=np.array([[1.0, 0, 1, 0], [2.0, 1, 0, 0], [1.5, 0, 0, 1]]),
        price=[1.0, 2.0, 1.5], mc=[0.5, 1.0, 1.0], quantity=[2.0, 3.0, 4.0],
        market_size=[10.0] * n, instruments=np.array([[0.3], [0.7], [-0.2]]),
        zeta=zeta,
    )


def test_gmm_objective_zero_at_zero_residual():
    data = _fixture()
    delta = np.array([0.2, -0.1, 0.3, 0.1, 0.8])
    data = data.with_zeta(data.design() @ delta)
    assert gmm_objective(delta, data) == pytest.approx(0.0, abs=1e-20)


def test_gmm_objective_single_instrument_identity_weight():
    data = _fixture(zeta=np.array([0.4, -0.3, 0.2]))
    delta = np.zeros(5)
    Z = data.Z()
    W = np.zeros((5, 5))
    W[4, 4] = 1.0  # keeps only the excluded instrument
    xi = data.zeta
    assert gmm_objective(delta, data, W) == pytest.approx(float(Z[:, 4] @ xi) ** 2, rel=1e-14)


def test_gmm_objective_matches_dense_formula(rng):
    data = _fixture(zeta=np.array([0.4, -0.3, 0.2]))
    delta = rng.standard_normal(5)
    F = rng.standard_normal((5, 5))
    W = F @ F.T
    xi = data.zeta - (data.x @ delta[:4] - delta[4] * data.price)
    Z = np.column_stack([data.x, data.instruments])
    expected = sum(xi[i] * Z[i] @ W @ Z[j] * xi[j] for i in range(3) for j in range(3))
    assert gmm_objective(delta, data, W) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ShapeMismatch):
        gmm_objective(delta, data, np.eye(4))


def test_demand_data_validation():
    with pytest.raises(EmptyData):
        DemandData(market=[], period=[], firm=[], product=[], x=np.zeros((0, 4)), price=[], mc=[],
                   quantity=[], market_size=[], instruments=np.zeros((0, 1)))
    with pytest.raises(ValueError):
        DemandData(market=[1], period=[1], firm=[1], product=[1], x=np.zeros((1, 4)), price=[1.0],
                   mc=[1.0], quantity=[10.0], market_size=[10.0], instruments=[[0.0]])
    with pytest.raises(ShapeMismatch):
        DemandData(market=[1], period=[1], firm=[1], product=[1], x=np.zeros((1, 3)), price=[1.0],
                   mc=[1.0], quantity=[1.0], market_size=[10.0], instruments=[[0.0]])


@pytest.fixture(scope="module")
def noiseless():
    return synth_dgp(SynthConfig(n_markets=60, xi_sd=0.0, expectation_draws=300), seed=3)


def test_noiseless_first_stage_recovers_truth(noiseless):
    est = estimate_demand(noiseless.demand, noiseless.draws)
    assert est.converged
    assert np.max(np.abs(est.delta_hat - noiseless.delta)) <= 1e-4


def test_start_at_truth_converges_immediately(noiseless):
    est = estimate_demand(noiseless.demand, noiseless.draws, init=noiseless.delta)
    assert est.iterations <= 2
    assert np.max(np.abs(est.delta_hat - noiseless.delta)) <= 1e-4


def test_noisy_first_stage_close_to_truth():
    ds = synth_dgp(SynthConfig(n_markets=200), seed=1)
    est = estimate_demand(ds.demand, ds.draws)
    assert np.max(np.abs(est.delta_hat / ds.delta - 1)) <= 0.05


def test_perturbed_starts_reach_the_same_minimum(small_dataset, rng):
    data, draws = small_dataset.demand, small_dataset.draws
    data = data.with_zeta(invert_all(data, draws))
    ref = estimate_demand(data, draws)
    for _ in range(100):
        start = ref.delta_hat + rng.uniform(-0.5, 0.5, ref.delta_hat.size)
        est = estimate_demand(data, draws, init=start)
        assert np.max(np.abs(est.delta_hat - ref.delta_hat)) <= 1e-4


def test_iteration_cap_raises_with_partial_estimate(small_dataset):
    with pytest.raises(NoConvergence) as info:
        estimate_demand(small_dataset.demand, small_dataset.draws, max_iter=1)
    assert info.value.estimate.converged is False
    assert info.value.estimate.delta_hat.shape == (5,)


def test_nonfinite_start_rejected(small_dataset):
    with pytest.raises(ValueError):
        estimate_demand(small_dataset.demand, small_dataset.draws, init=[np.nan] * 5)
