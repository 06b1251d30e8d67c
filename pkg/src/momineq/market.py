"""Product entry and exit with sunk costs: profits, moment rows and a synthetic DGP.

A firm that adds product ``j`` at period ``t`` reveals
``E[dpi(J_t, J_t minus j) - x_j'eta] >= 0``; a firm that drops it reveals
``E[dpi(J_t, J_t plus j) + lam x_j'eta] >= 0``. Observations are markets:
every event is evaluated in every market, so each event contributes one
moment row and ``p(W_m)`` stacks the product characteristics with the
per-event profit differences in market ``m``.

The economic statements are brought to the canonical ``A kappa <= 0`` form
by writing each as ``(x_j'eta or -lam x_j'eta) - dpi <= 0``: ``B`` carries
``eta'`` (entry) or ``-lam eta'`` (exit) in the column block of the event's
product type, ``C`` is the identity and ``rho`` is zero.
"""

import functools
from dataclasses import asdict, dataclass, field

import numpy as np

from .demand import D_X, DemandData, Draws, logit_shares
from .exceptions import ConfigInvalid, EmptyEvents, SchemaError, UnknownProduct
from .moment_model import MomentModel

ENTRY = "entry"
EXIT = "exit"


@dataclass(frozen=True)
class VehicleEvent:
    firm: object
    period: int
    product: object
    kind: str

    def __post_init__(self):
        if self.kind not in (ENTRY, EXIT):
            raise ValueError(f"event kind must be 'entry' or 'exit', got {self.kind!r}")


@dataclass(frozen=True)
class SunkCostTheta:
    """Salvage fraction ``lam`` and sunk-cost loadings ``eta``."""

    lam: float
    eta: tuple

    def __post_init__(self):
        object.__setattr__(self, "eta", tuple(float(e) for e in self.eta))

    def as_array(self):
        return np.array((self.lam,) + self.eta)

    @classmethod
    def from_array(cls, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        return cls(lam=float(theta[0]), eta=tuple(theta[1:]))


def _theta_parts(theta):
    if isinstance(theta, SunkCostTheta):
        return theta.lam, np.asarray(theta.eta)
    theta = np.asarray(theta, dtype=float).ravel()
    return theta[0], theta[1:]


# --------------------------------------------------------------------------
# profits in a single market


@dataclass
class MarketState:
    """Products available to one firm's decision in one market-period.

    ``zeta`` is NaN for products that are not observed in the data; their
    mean utility is built from ``delta`` with a zero structural residual.
    ``rivals`` are always in the choice set; a firm's own set is passed to
    :func:`profit_delta`.
    """

    keys: list
    x: np.ndarray
    price: np.ndarray
    mc: np.ndarray
    zeta: np.ndarray
    shifts: np.ndarray
    market_size: float
    rivals: frozenset = frozenset()

    def index(self, key):
        try:
            return self.keys.index(key)
        except ValueError:
            raise UnknownProduct(key) from None


def firm_profit(state, own, delta):
    """Variable profit of the products in ``own`` with choice set ``own + rivals``."""
    own = set(own)
    choice = sorted(own | set(state.rivals), key=state.index)
    if not choice:
        return 0.0
    idx = np.array([state.index(k) for k in choice])
    delta = np.asarray(delta, dtype=float)
    zeta = state.zeta[idx].copy()
    missing = np.isnan(zeta)
    if np.any(missing):
        zeta[missing] = state.x[idx][missing] @ delta[:D_X] - delta[D_X] * state.price[idx][missing]
    s = logit_shares(zeta[:, None] + state.shifts[idx])
    margin = (state.price[idx] - state.mc[idx]) * state.market_size
    is_own = np.array([k in own for k in choice])
    return float(np.sum(margin[is_own] * s[is_own]))


def profit_delta(state, J1, J2, delta):
    """``pi(J1) - pi(J2)`` for one firm in one market."""
    return firm_profit(state, J1, delta) - firm_profit(state, J2, delta)


# --------------------------------------------------------------------------
# panel of markets prepared for fast moment evaluation


@dataclass
class _EventBlock:
    U0: np.ndarray
    margin: np.ndarray
    mask1: np.ndarray
    mask2: np.ndarray
    cf_slot: int
    cf_x: np.ndarray
    cf_price: np.ndarray


@dataclass
class MarketPanel:
    """Per-market data arranged for vectorised profit differences."""

    markets: np.ndarray
    types: list
    x_types: np.ndarray
    events: list
    blocks: list = field(repr=False)

    @property
    def n(self):
        return self.markets.size

    @property
    def k(self):
        return len(self.events)


def _x_by_type(data):
    types = sorted(set(data.product.tolist()), key=lambda v: (str(type(v)), v))
    x_types = np.zeros((len(types), D_X))
    for i, t in enumerate(types):
        rows = data.x[data.product == t]
        if np.max(np.abs(rows - rows[0])) > 1e-9:
            raise SchemaError(f"product type {t!r} has varying characteristics")
        x_types[i] = rows[0]
    return types, x_types


def prepare_panel(data, events, draws):
    """Arrange demand data and events for :class:`VehicleMarketModel`.

    ``data.zeta`` must hold the inverted mean utilities. A product added in
    a counterfactual takes the price and marginal cost it had in the
    previous period of the same market.
    """
    if data.zeta is None:
        raise ValueError("demand data needs inverted mean utilities")
    events = list(events)
    markets = np.unique(data.market)
    types, x_types = _x_by_type(data)
    shifts_all = draws.shifts(data.x, data.price)

    cell = {}
    for r, key in enumerate(zip(data.market.tolist(), data.period.tolist())):
        cell.setdefault(key, []).append(r)

    blocks = []
    for ev in events:
        per_market = []
        for m in markets.tolist():
            rows_t = cell.get((m, ev.period), [])
            rows_p = cell.get((m, ev.period - 1), [])
            offered_t = {(data.firm[r], data.product[r]): r for r in rows_t}
            offered_p = {(data.firm[r], data.product[r]): r for r in rows_p}
            key = (ev.firm, ev.product)
            if not rows_p and not rows_t:
                raise SchemaError(f"market {m} has no data around period {ev.period}")
            if ev.kind == ENTRY:
                if key not in offered_t or key in offered_p:
                    raise SchemaError(f"entry {ev} inconsistent with product sets in market {m}")
            else:
                if key in offered_t or key not in offered_p:
                    raise SchemaError(f"exit {ev} inconsistent with product sets in market {m}")
            size = data.market_size[rows_t[0] if rows_t else rows_p[0]]
            per_market.append((rows_t, offered_t, offered_p.get(key), size))

        S = max(len(pm[0]) for pm in per_market) + (1 if ev.kind == EXIT else 0)
        n = markets.size
        U0 = np.zeros((n, S, draws.R))
        margin = np.zeros((n, S))
        mask1 = np.zeros((n, S), bool)
        mask2 = np.zeros((n, S), bool)
        cf_x = np.zeros((n, D_X))
        cf_price = np.zeros(n)
        cf_slot = S - 1 if ev.kind == EXIT else -1
        for i, (rows_t, offered_t, prev_row, size) in enumerate(per_market):
            rows_t = np.array(rows_t, int)
            q = rows_t.size
            if q:
                U0[i, :q] = data.zeta[rows_t, None] + shifts_all[rows_t]
                own = data.firm[rows_t] == ev.firm
                margin[i, :q] = np.where(own, (data.price[rows_t] - data.mc[rows_t]) * size, 0.0)
                mask1[i, :q] = True
                mask2[i, :q] = True
            if ev.kind == ENTRY:
                j = list(offered_t).index((ev.firm, ev.product))
                mask2[i, j] = False
            else:
                U0[i, cf_slot] = shifts_all[prev_row]
                margin[i, cf_slot] = (data.price[prev_row] - data.mc[prev_row]) * size
                mask2[i, cf_slot] = True
                cf_x[i] = data.x[prev_row]
                cf_price[i] = data.price[prev_row]
        blocks.append(_EventBlock(U0, margin, mask1, mask2, cf_slot, cf_x, cf_price))
    return MarketPanel(markets=markets, types=types, x_types=x_types, events=events, blocks=blocks)


def event_profit_deltas(panel, delta):
    """``(n_markets, k)`` matrix of profit differences at ``delta``."""
    delta = np.asarray(delta, dtype=float)
    out = np.zeros((panel.n, panel.k))
    for l, b in enumerate(panel.blocks):
        U = b.U0
        if b.cf_slot >= 0:
            U = U.copy()
            U[:, b.cf_slot] += (b.cf_x @ delta[:D_X] - delta[D_X] * b.cf_price)[:, None]
        p1 = np.sum(b.margin * logit_shares(U, b.mask1), axis=1)
        p2 = np.sum(b.margin * logit_shares(U, b.mask2), axis=1)
        out[:, l] = p1 - p2
    return out


class VehicleMarketModel(MomentModel):
    """Entry/exit moment inequalities over a :class:`MarketPanel`."""

    moments_depend_on_theta = False
    theta_labels = ("lambda",) + tuple(f"eta_{i + 1}" for i in range(D_X))
    theta_bounds = {"lambda": (0.0, 1.0)}

    def __init__(self, types, x_types, events):
        self.types = list(types)
        self.x_types = np.asarray(x_types, dtype=float)
        self.events = list(events)
        if not self.events:
            raise EmptyEvents("no entry or exit events to build moments from")
        self._col = {t: i for i, t in enumerate(self.types)}
        for ev in self.events:
            if ev.product not in self._col:
                raise UnknownProduct(ev.product)

    @classmethod
    def from_panel(cls, panel):
        return cls(panel.types, panel.x_types, panel.events)

    @property
    def k(self):
        return len(self.events)

    @property
    def d_M(self):
        return D_X * len(self.types)

    def B(self, theta):
        lam, eta = _theta_parts(theta)
        B = np.zeros((self.k, self.d_M))
        for l, ev in enumerate(self.events):
            c = self._col[ev.product] * D_X
            B[l, c:c + D_X] = eta if ev.kind == ENTRY else -lam * eta
        return B

    def C(self, theta):
        return np.eye(self.k)

    def rho(self, theta):
        return np.zeros(self.k)

    def M(self, data, theta):
        return np.tile(self.x_types.ravel(), (data.n, 1))

    def N(self, data, theta, delta):
        return event_profit_deltas(data, delta)


def build_moment_rows(panel, theta, delta):
    """Per-market moments ``p(W_m, theta, delta)`` and the ``(A, rho)`` layout."""
    model = VehicleMarketModel.from_panel(panel)
    A, rho = model.constraints(theta)
    return model.moments(panel, theta, delta), A, rho


# --------------------------------------------------------------------------
# synthetic data with known truth


@dataclass(frozen=True)
class SynthConfig:
    n_markets: int = 200
    n_firms: int = 4
    n_types: int = 8
    n_periods: int = 10
    beta: tuple = (1.0, 0.6, -0.4, 0.8)
    alpha: float = 1.0
    lam: float = 0.3
    eta: tuple = (0.5, 0.2, 0.1, 0.3)
    xi_sd: float = 0.3
    cost_sd: float = 0.3
    size_sd: float = 0.2
    price_xi_loading: float = 0.5
    market_size: float = 10.0
    cost_spread: float = 2.0
    cost_drift: float = 0.3
    sigma: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    n_draws: int = 1
    draws_seed: int = 0
    slack: float = 0.0
    event_rate: float = 1.0
    initial_offer_prob: float = 0.6
    expectation_draws: int = 1000
    template_seed: int = None

    def __post_init__(self):
        for name in ("beta", "eta", "sigma"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        def bad(name, why):
            raise ConfigInvalid(f"{name}: {why}")

        if not 0.0 <= self.lam <= 1.0:
            bad("lam", f"salvage fraction must lie in [0, 1], got {self.lam}")
        if not 1 <= self.n_types <= 30:
            bad("n_types", "must be between 1 and 30")
        for name in ("n_markets", "n_firms", "n_draws", "expectation_draws"):
            if int(getattr(self, name)) < 1:
                bad(name, "must be at least 1")
        if self.n_periods < 0:
            bad("n_periods", "must be nonnegative")
        if len(self.beta) != D_X:
            bad("beta", f"needs {D_X} entries")
        if len(self.eta) != D_X:
            bad("eta", f"needs {D_X} entries")
        if len(self.sigma) != D_X + 1:
            bad("sigma", f"needs {D_X + 1} entries")
        for name in ("xi_sd", "cost_sd", "size_sd", "slack", "market_size", "cost_spread", "cost_drift"):
            if getattr(self, name) < 0:
                bad(name, "must be nonnegative")
        if self.market_size <= 0:
            bad("market_size", "must be positive")
        if not self.alpha > 0:
            bad("alpha", "price coefficient must be positive")
        for name in ("event_rate", "initial_offer_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                bad(name, "must lie in [0, 1]")

    @property
    def delta(self):
        return np.array(self.beta + (self.alpha,))

    @property
    def theta(self):
        return SunkCostTheta(lam=self.lam, eta=self.eta)

    def draws(self):
        return Draws(R=self.n_draws, seed=self.draws_seed, sigma=np.array(self.sigma))

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticDataset:
    demand: DemandData
    events: list
    theta: SunkCostTheta
    delta: np.ndarray
    draws: Draws
    config: SynthConfig
    x_types: np.ndarray
    owners: np.ndarray
    lineups: list

    def truth(self):
        return {
            "lambda": self.theta.lam,
            "eta": list(self.theta.eta),
            "delta": self.delta.tolist(),
            "beta": self.delta[:D_X].tolist(),
            "alpha": float(self.delta[D_X]),
            "draws": self.draws.to_dict(),
        }


@dataclass
class _Template:
    x_types: np.ndarray
    owners: np.ndarray
    mc_path: np.ndarray
    lineups: list
    events: list
    expected: dict


def _shocks(cfg, rng, n):
    T1, J = cfg.n_periods + 1, cfg.n_types
    xi = cfg.xi_sd * rng.standard_normal((n, T1, J))
    w = rng.standard_normal((n, T1, J))
    size = cfg.market_size * np.exp(cfg.size_sd * rng.standard_normal((n, T1)) - 0.5 * cfg.size_sd**2)
    return xi, w, size


def _realize(cfg, x_types, owners, mc_path, lineups, shocks, periods, draws, keep_zeta):
    """Demand rows for every market and the requested periods."""
    xi, w, size = shocks
    n = xi.shape[0]
    delta = cfg.delta
    cols = {k: [] for k in ("market", "period", "firm", "product", "x", "price", "mc",
                            "quantity", "size", "inst", "zeta")}
    for t in periods:
        offered = sorted(lineups[t])
        if not offered:
            continue
        j = np.array(offered)
        q = j.size
        x = np.broadcast_to(x_types[j], (n, q, D_X))
        # cost shifter enters marginal cost; w is the excluded price instrument
        mc = mc_path[t, j] * np.exp(cfg.cost_sd * w[:, t, j])
        price = mc + np.exp(cfg.price_xi_loading * xi[:, t, j]) / cfg.alpha
        zeta = x @ delta[:D_X] - delta[D_X] * price + xi[:, t, j]
        sh = draws.shifts(x.reshape(-1, D_X), price.ravel()).reshape(n, q, draws.R)
        share = logit_shares(zeta[..., None] + sh)
        cols["market"].append(np.repeat(np.arange(n), q))
        cols["period"].append(np.full(n * q, t))
        cols["firm"].append(np.tile(owners[j], n))
        cols["product"].append(np.tile(j, n))
        cols["x"].append(x.reshape(-1, D_X))
        cols["price"].append(price.ravel())
        cols["mc"].append(mc.ravel())
        cols["quantity"].append((share * size[:, t, None]).ravel())
        cols["size"].append(np.repeat(size[:, t], q))
        cols["inst"].append(w[:, t, j].ravel())
        cols["zeta"].append(zeta.ravel())
    cat = {k: np.concatenate(v) if v else np.zeros(0) for k, v in cols.items()}
    if cat["price"].size == 0:
        return None
    return DemandData(
        market=cat["market"],
        period=cat["period"],
        firm=cat["firm"],
        product=cat["product"],
        x=cat["x"].reshape(-1, D_X),
        price=cat["price"],
        mc=cat["mc"],
        quantity=cat["quantity"],
        market_size=cat["size"],
        instruments=cat["inst"][:, None],
        zeta=cat["zeta"] if keep_zeta else None,
    )


def _expected_deltas(cfg, tpl_parts, lineups, t, events, shocks, draws):
    data = _realize(cfg, *tpl_parts, lineups, shocks, (t - 1, t), draws, keep_zeta=True)
    panel = prepare_panel(data, events, draws)
    return event_profit_deltas(panel, cfg.delta).mean(axis=0)


@functools.lru_cache(maxsize=8)
def _template(cfg, seed):
    rng = np.random.default_rng([seed, 0xD6E])
    # redraw until the products that ever appear identify all four taste
    # coefficients (impossible with fewer than four types)
    for _ in range(100):
        tpl = _draw_template(cfg, rng)
        seen = sorted(set().union(*tpl.lineups))
        if cfg.n_types < D_X or np.linalg.matrix_rank(tpl.x_types[seen]) == D_X:
            break
    return tpl


def _draw_template(cfg, rng):
    J = cfg.n_types
    x_types = np.column_stack([rng.uniform(0.5, 1.5, J), rng.integers(0, 2, (J, D_X - 1))]).astype(float)
    owners = rng.permutation(J) % cfg.n_firms
    # type-specific cost levels plus a common random walk move products in
    # and out of the band where neither entry nor exit pays
    mc_base = 1.0 + 0.5 * x_types[:, 0] + 0.2 * x_types[:, 1:].sum(axis=1)
    mc_base = mc_base + rng.uniform(0.0, cfg.cost_spread, J)
    drift = cfg.cost_drift * rng.standard_normal((cfg.n_periods + 1, J))
    drift[0] = 0.0
    mc_path = mc_base * np.exp(np.cumsum(drift, axis=0))
    lineups = [frozenset(int(j) for j in np.flatnonzero(rng.random(J) < cfg.initial_offer_prob))]
    draws = cfg.draws()
    shocks = _shocks(cfg, rng, cfg.expectation_draws)
    parts = (x_types, owners, mc_path)
    eta = np.asarray(cfg.eta)
    events, expected = [], {}
    for t in range(1, cfg.n_periods + 1):
        prev = lineups[-1]
        flips = []
        for f in range(cfg.n_firms):
            owned = np.flatnonzero(owners == f)
            if owned.size and rng.random() < cfg.event_rate:
                flips.append(int(rng.choice(owned)))
        while True:
            current = frozenset(prev.symmetric_difference(flips))
            if not flips:
                break
            cand = [VehicleEvent(firm=int(owners[j]), period=t, product=j,
                                 kind=EXIT if j in prev else ENTRY) for j in flips]
            gains = _expected_deltas(cfg, parts, lineups + [current], t, cand, shocks, draws)
            ok = []
            for ev, g in zip(cand, gains):
                sunk = x_types[ev.product] @ eta
                value = g - sunk if ev.kind == ENTRY else g + cfg.lam * sunk
                ok.append(value >= cfg.slack)
            if all(ok):
                for ev, g in zip(cand, gains):
                    expected[ev] = float(g)
                events.extend(cand)
                break
            flips = [j for j, keep in zip(flips, ok) if keep]
        lineups.append(current)
    return _Template(x_types, owners, mc_path, lineups, events, expected)


def synth_dgp(config=None, seed=0):
    """Simulate demand data and entry/exit events with known parameters.

    Product types, ownership, the product line-up path and the events are a
    template drawn from ``config.template_seed`` (``seed`` when unset).
    Events follow a threshold rule on population-expected profit
    differences, computed by Monte Carlo over ``expectation_draws`` market
    realisations, so each moment inequality holds at the truth with at
    least ``slack`` to spare. Market-level shocks for the sample come from
    ``seed``.
    """
    cfg = config or SynthConfig()
    tseed = cfg.template_seed if cfg.template_seed is not None else seed
    tpl = _template(cfg, int(tseed))
    rng = np.random.default_rng([int(seed), 0x5A3])
    draws = cfg.draws()
    shocks = _shocks(cfg, rng, cfg.n_markets)
    demand = _realize(cfg, tpl.x_types, tpl.owners, tpl.mc_path, tpl.lineups, shocks,
                      range(cfg.n_periods + 1), draws, keep_zeta=False)
    return SyntheticDataset(
        demand=demand,
        events=list(tpl.events),
        theta=cfg.theta,
        delta=cfg.delta,
        draws=draws,
        config=cfg,
        x_types=tpl.x_types,
        owners=tpl.owners,
        lineups=list(tpl.lineups),
    )
