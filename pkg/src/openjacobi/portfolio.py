"""Strategy algebra, wealth accounting, and growth optimality.

Strategies are carried in share-per-wealth form: theta_i is the number of
shares of asset i held per unit of wealth, subject to the self-financing
identity theta . x = 1.  Open-market strategies invest directly in the top
N ranked assets and finance the position through the full market portfolio;
they are parameterized by the N-vector of direct holdings and expanded to a
full theta via the canonical representation.

Wealth is accumulated non-anticipatively: theta is evaluated at the left
endpoint of each step and d log V = theta . dX - (1/2) theta^T c theta dt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import mean_and_se, write_csv
from .invariant import rank_normalizer, sample_invariant
from .sde import PathObserver, SimPath, drift, gap_local_time, sum_over_steps
from .simplex import (
    ModelParams,
    ordered_simplex_integral,
    ranking_order,
    tail_sums,
    validate_params,
)

SELF_FINANCING_TOL = 1e-10
INTERIOR_FLOOR = 1e-10


class SelfFinancingError(ValueError):
    """A raw strategy failed the identity theta . x = 1."""


class GrowthConditionError(ValueError):
    """Growth-optimality existence condition fails for the requested market."""

    def __init__(self, message, margins=None):
        super().__init__(message)
        self.margins = margins


# ---------------------------------------------------------------------------
# strategy algebra
# ---------------------------------------------------------------------------

def shift_self_financing(theta, x) -> np.ndarray:
    """Shift by a multiple of the market portfolio so that theta . x = 1.

    The shift changes no wealth increment because the market portfolio's
    holdings of the total market are constant.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    resid = 1.0 - (theta * x).sum(axis=-1, keepdims=True)
    return theta + resid


def expand_open(h, x) -> np.ndarray:
    """Expand direct top-N holdings into a full named strategy vector.

    The asset at rank k <= N receives h_k plus the market-portfolio
    financing component 1 - h . y^N; every other asset receives the
    financing component only.  Satisfies theta . x = 1 identically.
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    d = x.shape[-1]
    n_top = h.shape[-1]
    if not 1 <= n_top < d:
        raise ValueError("need 1 <= N < d")
    order = ranking_order(x)
    y_top = np.take_along_axis(x, order[..., :n_top], axis=-1)
    financing = 1.0 - (h * y_top).sum(axis=-1, keepdims=True)
    theta_by_rank = np.concatenate(
        [h + financing, np.broadcast_to(financing, x.shape[:-1] + (d - n_top,))],
        axis=-1,
    )
    theta = np.empty_like(x)
    np.put_along_axis(theta, order, theta_by_rank, axis=-1)
    return theta


def optimal_share_field(x, params: ModelParams) -> np.ndarray:
    """Share field solving c(x) v = drift(x): v_i = (gamma_i + a_rank(i)) / (2 x_i).

    After a market-portfolio shift this is the closed-market growth-optimal
    strategy.  Undefined on the boundary: zero weights raise.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("share field is undefined at zero weights")
    ranks = np.argsort(np.argsort(-x, axis=-1, kind="stable"), axis=-1)
    return (params.gamma + params.a[ranks]) / (2.0 * x)


def optimal_rank_holdings(y, order, params: ModelParams, n_top: int) -> np.ndarray:
    """Direct holdings of the growth-optimal open-market strategy.

    ``y`` holds ranked weights, ``order`` the 0-based names by rank.  Entry
    k is (a_k + gamma_{n_k}) / (2 y_k) minus the common small-cap term
    (a-tail + gamma of the names below rank N) / (2 * tail weight).
    """
    y = np.asarray(y, dtype=float)
    order = np.asarray(order)
    d = params.d
    if not 1 <= n_top < d:
        raise ValueError("need 1 <= N < d")
    tail = y[..., n_top:].sum(axis=-1, keepdims=True)
    top = y[..., :n_top]
    if np.any(top <= 0.0) or np.any(tail <= 0.0):
        raise ValueError("optimal holdings undefined: vanishing ranked weight")
    gamma_by_rank = params.gamma[order]
    small_cap = (
        params.a[n_top:].sum() + gamma_by_rank[..., n_top:].sum(axis=-1, keepdims=True)
    ) / (2.0 * tail)
    return (params.a[:n_top] + gamma_by_rank[..., :n_top]) / (2.0 * top) - small_cap


def growth_optimal_theta(x, params: ModelParams, n_top: int) -> np.ndarray:
    """Named growth-optimal strategy for the open market of size N.

    Direct closed form: every asset holds 1 - total/2 shares plus its own
    tilt, (a_k + gamma_{n_k}) / (2 X_(k)) in the top N ranks and the common
    small-cap tilt below.  Identical to expanding the optimal direct
    holdings through the open-market representation; both routes are kept
    so they can be checked against each other.

    Exists (as a trading strategy) iff every tail margin for k = 2..N+1 is
    at least one; this function evaluates the closed form regardless, and
    ``growth_exists`` reports the condition.
    """
    x = np.asarray(x, dtype=float)
    d = params.d
    if not 1 <= n_top < d:
        raise ValueError("need 1 <= N < d")
    order = ranking_order(x)
    y = np.take_along_axis(x, order, axis=-1)
    tail = y[..., n_top:].sum(axis=-1, keepdims=True)
    if x.ndim == 1 and (np.any(y[:n_top] <= 0.0) or tail.item() <= 0.0):
        # batched evaluation lets the wealth-loop guard absorb bad rows
        raise ValueError("growth-optimal strategy undefined: vanishing ranked weight")
    gamma_by_rank = params.gamma[order]
    base = 1.0 - 0.5 * params.total_mass
    top_tilt = (params.a[:n_top] + gamma_by_rank[..., :n_top]) / (2.0 * y[..., :n_top])
    small_tilt = (
        params.a[n_top:].sum() + gamma_by_rank[..., n_top:].sum(axis=-1, keepdims=True)
    ) / (2.0 * tail)
    by_rank = np.concatenate(
        [base + top_tilt,
         np.broadcast_to(base + small_tilt, y[..., n_top:].shape)],
        axis=-1,
    )
    theta = np.empty_like(x)
    np.put_along_axis(theta, order, by_rank, axis=-1)
    return theta


def growth_exists(params: ModelParams, n_top: int):
    """Existence verdict for the growth-optimal open-market strategy.

    Returns (exists, report) where the report lists the margin
    a_bar_k + gamma_bar_(k) - 1 for each k = 2..N+1.
    """
    report = validate_params(params, open_market_size=n_top)
    detail = {
        "open_market_size": n_top,
        "margins": report.growth_margins,
        "ks": list(range(2, n_top + 2)),
        "valid_params": report.valid,
    }
    return bool(report.growth_ok and report.valid), detail


def local_growth_rate(y, order, params: ModelParams, n_top: int) -> np.ndarray:
    """Instantaneous optimal growth quadratic h^T kappa^N h, in closed form:
    (sigma^2/4) (sum_{k<=N} (a_k+gamma_{n_k})^2 / y_k + small-cap term - total^2).
    """
    y = np.asarray(y, dtype=float)
    order = np.asarray(order)
    gamma_by_rank = params.gamma[order]
    tail = y[..., n_top:].sum(axis=-1)
    if np.any(y[..., :n_top] <= 0.0) or np.any(tail <= 0.0):
        raise ValueError("local growth undefined at the boundary")
    top_num = params.a[:n_top] + gamma_by_rank[..., :n_top]
    small_num = params.a[n_top:].sum() + gamma_by_rank[..., n_top:].sum(axis=-1)
    s2 = params.sigma ** 2
    return (s2 / 4.0) * (
        (top_num ** 2 / y[..., :n_top]).sum(axis=-1)
        + small_num ** 2 / tail
        - params.total_mass ** 2
    )


def local_growth_direct(y, order, params: ModelParams, n_top: int) -> float:
    """Same quantity by direct matrix algebra (independent of the closed form)."""
    y = np.asarray(y, dtype=float)
    kappa = params.sigma ** 2 * (np.diag(y) - np.outer(y, y))
    h = optimal_rank_holdings(y, order, params, n_top)
    return float(h @ kappa[:n_top, :n_top] @ h)


def foc_residual(y, order, params: ModelParams, n_top: int) -> float:
    """Max-norm residual of the first-order condition kappa^N h = (kappa rho)^N."""
    y = np.asarray(y, dtype=float)
    order = np.asarray(order)
    kappa = params.sigma ** 2 * (np.diag(y) - np.outer(y, y))
    rho = (params.a + params.gamma[order]) / (2.0 * y)
    h = optimal_rank_holdings(y, order, params, n_top)
    lhs = kappa[:n_top, :n_top] @ h
    rhs = (kappa @ rho)[:n_top]
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# strategies as objects
# ---------------------------------------------------------------------------

class Strategy:
    """Feedback strategy: a vectorized map from named states to theta."""

    name = "strategy"

    def theta(self, x) -> np.ndarray:
        raise NotImplementedError

    def guard(self, x) -> np.ndarray | None:
        """Boolean mask of states where evaluation is unreliable (optional)."""
        return None


class MarketPortfolio(Strategy):
    name = "market"

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones_like(x)


class RawStrategy(Strategy):
    """Wraps an arbitrary theta(x) function; validates self-financing."""

    def __init__(self, fn, name="raw", tol=SELF_FINANCING_TOL):
        self.fn = fn
        self.name = name
        self.tol = tol

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(self.fn(x), dtype=float)
        gap = np.abs((theta * x).sum(axis=-1) - 1.0)
        if np.any(gap > self.tol):
            raise SelfFinancingError(
                f"strategy {self.name!r}: max |theta.x - 1| = {gap.max():.3e}"
            )
        return theta


class OpenMarketStrategy(Strategy):
    """Strategy given by direct holdings h(y, order) in the top N ranks."""

    def __init__(self, n_top, h_fn, name="open"):
        self.n_top = int(n_top)
        self.h_fn = h_fn
        self.name = name

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        order = ranking_order(x)
        y = np.take_along_axis(x, order, axis=-1)
        return expand_open(self.h_fn(y, order), x)


class GrowthOptimalStrategy(Strategy):
    """The explicit growth-optimal open-market strategy of the model."""

    def __init__(self, params: ModelParams, n_top: int):
        self.params = params
        self.n_top = int(n_top)
        self.name = f"growth_optimal_N{n_top}"

    def theta(self, x):
        return growth_optimal_theta(x, self.params, self.n_top)

    def guard(self, x):
        x = np.asarray(x, dtype=float)
        y = -np.sort(-x, axis=-1)
        tail = y[..., self.n_top:].sum(axis=-1)
        return (y[..., : self.n_top].min(axis=-1) < INTERIOR_FLOOR) | (tail < INTERIOR_FLOOR)


class GeneratedStrategy(Strategy):
    """Functionally generated strategy theta_i = g_i + 1 - x . g."""

    def __init__(self, generator):
        self.generator = generator
        self.name = f"generated_{generator.name}"

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        g = self.generator.grad_log(x)
        return g + (1.0 - (x * g).sum(axis=-1, keepdims=True))

    def guard(self, x):
        return self.generator.guard(x)


# ---------------------------------------------------------------------------
# wealth accounting
# ---------------------------------------------------------------------------

@dataclass
class WealthLedger:
    """Log-wealth trajectory with its drift/martingale split.

    The split uses the model drift as compensator, so
    log_wealth = drift_part + mart_part holds to accumulation roundoff.
    """

    times: np.ndarray
    log_wealth: np.ndarray
    drift_part: np.ndarray
    mart_part: np.ndarray
    strategy: str
    path_index: int
    n_guarded: int

    @property
    def terminal_rate(self) -> float:
        return float(self.log_wealth[-1] / self.times[-1])

    def to_csv(self, path) -> None:
        rows = zip(self.times, self.log_wealth, self.drift_part, self.mart_part)
        write_csv(path, ["time", "logV", "drift_part", "mart_part"], rows)


def _resolve_guard(theta, states, mask):
    """Replace flagged rows with the previous step's holdings, re-shifted so
    the self-financing identity holds at the current state."""
    n_guarded = 0
    idx = np.flatnonzero(mask)
    for t in idx:
        prev = theta[t - 1] if t > 0 else np.ones(states.shape[-1])
        theta[t] = shift_self_financing(prev, states[t])
        n_guarded += 1
    return n_guarded


def wealth_increments(theta_left, states, dt, sigma):
    """d log V per step from left-evaluated holdings along stored states."""
    dx = np.diff(states, axis=0)
    x_left = states[:-1]
    lin = (theta_left * dx).sum(axis=-1)
    qv = sigma * sigma * (
        (theta_left ** 2 * x_left).sum(axis=-1) - (theta_left * x_left).sum(axis=-1) ** 2
    )
    return lin - 0.5 * qv * dt


def wealth(path: SimPath, strategy: Strategy, tol: float = SELF_FINANCING_TOL) -> WealthLedger:
    """Accumulate the strategy's log wealth along a stored path.

    States flagged by the strategy guard (or yielding non-finite holdings)
    keep the previous step's share counts, shifted back onto the identity
    theta . x = 1; such steps are counted in ``n_guarded``.
    """
    states = path.states
    params = path.params
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        theta = np.array(strategy.theta(states), dtype=float)
    mask = ~np.isfinite(theta).all(axis=-1)
    extra = strategy.guard(states)
    if extra is not None:
        mask |= extra
    n_guarded = _resolve_guard(theta, states, mask)
    gap = np.abs((theta * states).sum(axis=-1) - 1.0)
    if gap.max() > tol:
        raise SelfFinancingError(
            f"strategy {strategy.name!r}: max |theta.x - 1| = {gap.max():.3e}"
        )
    theta_left = theta[:-1]
    dlog = wealth_increments(theta_left, states, path.dt, params.sigma)
    b = drift(states[:-1], params)
    qv = params.sigma ** 2 * (
        (theta_left ** 2 * states[:-1]).sum(axis=-1)
        - (theta_left * states[:-1]).sum(axis=-1) ** 2
    )
    drift_incr = ((theta_left * b).sum(axis=-1) - 0.5 * qv) * path.dt
    zero = np.zeros(1)
    log_wealth = np.concatenate([zero, np.cumsum(dlog)])
    drift_part = np.concatenate([zero, np.cumsum(drift_incr)])
    return WealthLedger(
        times=path.times.copy(),
        log_wealth=log_wealth,
        drift_part=drift_part,
        mart_part=log_wealth - drift_part,
        strategy=strategy.name,
        path_index=path.path_index,
        n_guarded=n_guarded,
    )


class WealthObserver(PathObserver):
    """Streaming per-path wealth accumulation for long-horizon batches."""

    def __init__(self, strategy: Strategy, params: ModelParams):
        self.strategy = strategy
        self.params = params
        self._prev_theta = None
        self._logv = None
        self._drift = None
        self._guarded = None

    def start(self, t0, states):
        P = states.shape[0]
        self._logv = np.zeros(P)
        self._drift = np.zeros(P)
        self._guarded = np.zeros(P, dtype=np.int64)
        self._prev_theta = np.ones_like(states)

    def update(self, times, states):
        dt = float(times[1] - times[0])
        left = states[:-1]                                  # (B, P, d)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            theta = np.array(self.strategy.theta(left), dtype=float)
        mask = ~np.isfinite(theta).all(axis=-1)
        extra = self.strategy.guard(left)
        if extra is not None:
            mask |= extra
        if mask.any():
            for b, p in zip(*np.nonzero(mask)):
                prev = theta[b - 1, p] if b > 0 else self._prev_theta[p]
                theta[b, p] = shift_self_financing(prev, left[b, p])
                self._guarded[p] += 1
        dx = np.diff(states, axis=0)
        lin = (theta * dx).sum(axis=-1)
        qv = self.params.sigma ** 2 * (
            (theta ** 2 * left).sum(axis=-1) - (theta * left).sum(axis=-1) ** 2
        )
        b_model = drift(left, self.params)
        self._logv += sum_over_steps(lin - 0.5 * qv * dt)
        self._drift += sum_over_steps(((theta * b_model).sum(axis=-1) - 0.5 * qv) * dt)
        self._prev_theta = theta[-1].copy()

    def result(self):
        return {
            "wealth": {
                "log_wealth": self._logv.copy(),
                "drift_part": self._drift.copy(),
                "mart_part": self._logv - self._drift,
                "n_guarded": self._guarded.copy(),
            }
        }


# ---------------------------------------------------------------------------
# functional generation (master formula)
# ---------------------------------------------------------------------------

class Generator:
    """Positive generating function G with the pieces the master formula needs."""

    name = "generator"

    def log_value(self, x) -> np.ndarray:
        raise NotImplementedError

    def grad_log(self, x) -> np.ndarray:
        raise NotImplementedError

    def quad_form(self, x_left, dx) -> np.ndarray:
        """sum_ij (d_ij G / G)(x_left) dx_i dx_j against realized increments.

        Accumulated into the finite-variation drift of log G(X) as the
        discrete stand-in for the quadratic-covariation integral.
        """
        raise NotImplementedError

    def guard(self, x):
        return None


class ConstantGenerator(Generator):
    name = "constant"

    def log_value(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def grad_log(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def quad_form(self, x_left, dx):
        dx = np.asarray(dx, dtype=float)
        return np.zeros(dx.shape[:-1])


class ExpLinearGenerator(Generator):
    """G(x) = exp(c . x); smooth on the whole simplex.

    log G is linear, so d_ij G / G = c_i c_j and the quadratic form is
    just (c . dx)^2.
    """

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.name = "exp_linear"

    def log_value(self, x):
        return (np.asarray(x, dtype=float) * self.coeffs).sum(axis=-1)

    def grad_log(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.coeffs, x.shape).copy()

    def quad_form(self, x_left, dx):
        dx = np.asarray(dx, dtype=float)
        return (dx * self.coeffs).sum(axis=-1) ** 2


class RankPowerGenerator(Generator):
    """Rank-based generator of the growth-optimal strategy (rank-based models):
    G(x) = tail^{abar/2} * prod_{k<=N} x_(k)^{a_k/2} with tail the small-cap mass.

    Only piecewise smooth: across rank crossings its wealth representation
    picks up ranked-gap local-time terms, estimated from the path.
    """

    def __init__(self, params: ModelParams, n_top: int):
        if not params.is_rank_based:
            raise ValueError("rank-power generator requires gamma = 0")
        self.params = params
        self.n_top = int(n_top)
        self.name = f"rank_power_N{n_top}"
        self._a_top = params.a[: self.n_top]
        self._a_tail = float(params.a[self.n_top:].sum())

    def _ranked(self, x):
        return -np.sort(-np.asarray(x, dtype=float), axis=-1)

    def log_value(self, x):
        y = self._ranked(x)
        tail = y[..., self.n_top:].sum(axis=-1)
        return 0.5 * (
            (self._a_top * np.log(y[..., : self.n_top])).sum(axis=-1)
            + self._a_tail * np.log(tail)
        )

    def grad_log(self, x):
        x = np.asarray(x, dtype=float)
        order = ranking_order(x)
        y = np.take_along_axis(x, order, axis=-1)
        tail = y[..., self.n_top:].sum(axis=-1, keepdims=True)
        by_rank = np.concatenate(
            [
                self._a_top / (2.0 * y[..., : self.n_top]),
                np.broadcast_to(
                    self._a_tail / (2.0 * tail), y[..., self.n_top:].shape
                ),
            ],
            axis=-1,
        )
        g = np.empty_like(x)
        np.put_along_axis(g, order, by_rank, axis=-1)
        return g

    def quad_form(self, x_left, dx):
        """Realized quadratic form of d_kl F / F in ranked coordinates,
        valid off the rank-crossing set.

        With u the ranked gradient of log F and H its Hessian (diagonal in
        the top block, constant in the small-cap block), the form is
        (u . dy)^2 + dy^T H dy on ranked increments dy.
        """
        y = self._ranked(x_left)
        dy = self._ranked(np.asarray(x_left, dtype=float) + np.asarray(dx, dtype=float)) - y
        n = self.n_top
        top = y[..., :n]
        tail = y[..., n:].sum(axis=-1)
        a = self._a_top
        abar = self._a_tail
        u_dy = (
            (a / (2.0 * top) * dy[..., :n]).sum(axis=-1)
            + abar / (2.0 * tail) * dy[..., n:].sum(axis=-1)
        )
        h_dy = (
            -(a / (2.0 * top ** 2) * dy[..., :n] ** 2).sum(axis=-1)
            - abar / (2.0 * tail ** 2) * dy[..., n:].sum(axis=-1) ** 2
        )
        return u_dy ** 2 + h_dy

    def guard(self, x):
        y = self._ranked(x)
        tail = y[..., self.n_top:].sum(axis=-1)
        return (y[..., : self.n_top].min(axis=-1) < INTERIOR_FLOOR) | (tail < INTERIOR_FLOOR)

    def local_time_drift(self, path: SimPath) -> np.ndarray:
        """Cumulative ranked-gap local-time corrections along a path."""
        n = self.n_top
        a = self.params.a
        total = np.zeros(path.times.size)
        for k in range(1, n):
            lt = gap_local_time(path, k, log_scale=True)
            total[1:] += (a[k - 1] - a[k]) / 8.0 * lt
        y = path.ranked_states()
        tail = y[:, n:].sum(axis=1)
        weight = (a[n - 1] - self._a_tail * y[:, n - 1] / tail) / 8.0
        lt_n = gap_local_time(path, n, log_scale=True)
        d_lt = np.diff(np.concatenate([[0.0], lt_n]))
        total[1:] += np.cumsum(weight[:-1] * d_lt)
        return total


@dataclass
class MasterFormulaResult:
    """Pathwise functional-generation decomposition for one stored path."""

    theta: np.ndarray              # (n+1, d)
    ledger: WealthLedger
    gamma_drift: np.ndarray        # (n+1,) finite-variation part
    identity_gap: np.ndarray       # (n+1,) |logV - (logG(X_t)-logG(X_0)+Gamma)|

    @property
    def sup_gap(self) -> float:
        return float(self.identity_gap.max())


def master_formula(generator: Generator, path: SimPath) -> MasterFormulaResult:
    """Evaluate a generated strategy along a path and check the wealth identity
    log V = log G(X_t) - log G(X_0) + Gamma(t).

    For smooth generators Gamma is minus half the cumulative quadratic form
    of the generator against the realized increments; for the rank-based
    generator the ranked-gap local-time terms are added from their
    occupation-density estimates.
    """
    strategy = GeneratedStrategy(generator)
    ledger = wealth(path, strategy, tol=1e-9)
    dx = np.diff(path.states, axis=0)
    correction = generator.quad_form(path.states[:-1], dx)
    gamma_drift = np.concatenate([[0.0], -0.5 * np.cumsum(correction)])
    if isinstance(generator, RankPowerGenerator):
        gamma_drift = gamma_drift + generator.local_time_drift(path)
    log_g = generator.log_value(path.states)
    identity_gap = np.abs(ledger.log_wealth - (log_g - log_g[0] + gamma_drift))
    theta = strategy.theta(path.states)
    return MasterFormulaResult(
        theta=theta, ledger=ledger, gamma_drift=gamma_drift, identity_gap=identity_gap
    )


# ---------------------------------------------------------------------------
# robust asymptotic growth rate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthReport:
    lambda_hat: float
    stderr: float
    method: str
    condition_margins: np.ndarray       # a_bar_k - 1 for k = 2..N+1
    n: int

    def as_dict(self):
        return {
            "lambda_hat": self.lambda_hat,
            "stderr": self.stderr,
            "method": self.method,
            "condition_margins": self.condition_margins,
            "n": self.n,
        }


def _require_strict_growth(params: ModelParams, n_top: int) -> np.ndarray:
    if not params.is_rank_based:
        raise GrowthConditionError("robust growth rate applies to rank-based models only")
    margins = tail_sums(params.a)[1: n_top + 1] - 1.0
    if np.any(margins <= 0.0):
        raise GrowthConditionError(
            "strict growth condition fails: some tail sum <= 1", margins=margins
        )
    return margins


def growth_rate_integrand(y, params: ModelParams, n_top: int) -> np.ndarray:
    """(sigma^2/8)(sum_{k<=N} a_k^2 / y_k + a-tail^2 / tail mass) on ranked points."""
    y = np.asarray(y, dtype=float)
    a = params.a
    tail = y[..., n_top:].sum(axis=-1)
    s2 = params.sigma ** 2
    return (s2 / 8.0) * (
        (a[:n_top] ** 2 / y[..., :n_top]).sum(axis=-1) + a[n_top:].sum() ** 2 / tail
    )


def robust_growth_rate(params: ModelParams, n_top: int, method: str = "mc",
                       n: int = 10 ** 6, seed: int = 0,
                       rel_tol: float = 1e-7) -> GrowthReport:
    """Best growth rate achievable robustly in the open market of size N:
    the stationary expectation of the growth integrand minus
    (sigma^2/8) * (a_bar_1)^2.

    Requires the strict condition a_bar_k > 1 for k = 2..N+1.  The Monte
    Carlo route uses the exact rejection sampler; quadrature is exact Q-ratio
    algebra plus (for the small-cap term) full ordered-simplex quadrature,
    hence limited to d <= 3 unless N = d-1.
    """
    margins = _require_strict_growth(params, n_top)
    a = params.a
    d = params.d
    s2 = params.sigma ** 2
    offset = (s2 / 8.0) * params.total_mass ** 2
    if method == "mc":
        sample = sample_invariant(params, n, seed, kind="ranked", method="spacing")
        vals = growth_rate_integrand(sample.draws, params, n_top)
        mean, se = mean_and_se(vals)
        return GrowthReport(lambda_hat=mean - offset, stderr=se, method="mc",
                            condition_margins=margins, n=n)
    if method == "quadrature":
        qa = rank_normalizer(a, rel_tol=rel_tol)
        inv_top = 0.0
        for k in range(n_top):
            if a[k] ** 2 != 0.0:
                shifted = a.copy()
                shifted[k] -= 1.0
                inv_top += a[k] ** 2 * rank_normalizer(shifted, rel_tol=rel_tol) / qa
        abar_tail = a[n_top:].sum()
        if n_top == d - 1:
            shifted = a.copy()
            shifted[-1] -= 1.0
            inv_tail = rank_normalizer(shifted, rel_tol=rel_tol) / qa
        else:
            def integrand(y):
                base = np.prod(y ** (a - 1.0))
                return base / y[n_top:].sum()

            inv_tail = ordered_simplex_integral(integrand, d, rel_tol=rel_tol) / qa
        lam = (s2 / 8.0) * (inv_top + abar_tail ** 2 * inv_tail) - offset
        return GrowthReport(lambda_hat=lam, stderr=0.0, method="quadrature",
                            condition_margins=margins, n=0)
    raise ValueError(f"unknown method {method!r}")
