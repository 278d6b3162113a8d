"""Poisson-Dirichlet limits of rank-based stationary laws in high dimension.

Covers: stick-breaking sampling of the Poisson-Dirichlet law PD(theta),
symmetric power sums and their exact moment recursion, importance-sampled
expectations under the power-tilted limit law, d-indexed parameter schedules
whose stationary laws converge to that limit, and the limiting robust
growth rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import mean_and_se, substream, write_csv, z_score
from .invariant import sample_invariant
from .simplex import ModelParams, tail_sums

TAIL_EXPECTATION_BOUND = 1e-6     # required expected truncation mass at length M
ESS_FLOOR_FRACTION = 0.05
STICK_BLOCK = 64
HARD_TAIL_FLOOR = 1e-13


class HeavyTiltError(RuntimeError):
    """Importance sampling effective size fell below the floor."""


@dataclass(frozen=True)
class PDConfig:
    """Poisson-Dirichlet limit parameters: concentration theta plus power
    tilts a_1..a_N applied to the top N ranked entries.

    Valid iff theta > 0, every partial tilt tail sum_{l=k..N} a_l exceeds
    -theta (k = 2..N), and the truncation length M keeps the expected
    leftover stick mass (theta/(1+theta))^M below 1e-6.
    """

    theta: float
    tilt: tuple = ()
    M: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "tilt", tuple(float(a) for a in self.tilt))
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        n = len(self.tilt)
        for k in range(2, n + 1):
            if not sum(self.tilt[k - 1:]) > -self.theta:
                raise ValueError(
                    f"tilt tail sum from position {k} must exceed -theta"
                )
        if self.M < 10:
            raise ValueError("M must be at least 10")
        if (self.theta / (1.0 + self.theta)) ** self.M > TAIL_EXPECTATION_BOUND:
            raise ValueError("M too small: expected truncated tail mass above 1e-6")

    @property
    def n_tilted(self) -> int:
        return len(self.tilt)


@dataclass
class PDSample:
    """Truncated ordered Poisson-Dirichlet draws.

    ``weights`` holds the leading entries of each draw in decreasing order;
    columns beyond the stored width are implicitly zero (the generator stops
    once every draw's leftover stick mass is negligible, well before M).
    ``tail_mass`` is the per-draw leftover, so each row sums to
    1 - tail_mass within roundoff.
    """

    weights: np.ndarray          # (n, K) with K <= M
    tail_mass: np.ndarray        # (n,)
    theta: float
    M: int

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def pd_sample(theta: float, M: int, n: int, seed: int,
              tail_floor: float = HARD_TAIL_FLOOR) -> PDSample:
    """Draw n approximate PD(theta) points by stick breaking and sorting.

    Beta(1, theta) sticks are generated in blocks until every draw's
    remaining mass is below ``tail_floor`` (an error is raised if that
    would take more than M sticks, the configured truncation length).
    """
    cfg = PDConfig(theta=theta, M=M)       # reuse the validity checks
    rng = substream(seed, "pd-sticks")
    blocks = []
    log_rem = np.zeros(n)                  # log of remaining stick mass
    ncols = 0
    while True:
        width = min(STICK_BLOCK, cfg.M - ncols)
        if width <= 0:
            raise ValueError(
                f"truncation length M={M} too small for tail floor {tail_floor}"
            )
        v = rng.beta(1.0, theta, size=(n, width))
        inner = np.cumsum(np.log1p(-v), axis=1)
        w = v * np.exp(log_rem[:, None] + np.concatenate(
            [np.zeros((n, 1)), inner[:, :-1]], axis=1))
        blocks.append(w)
        log_rem = log_rem + inner[:, -1]
        ncols += width
        if np.exp(log_rem.max()) < tail_floor:
            break
    weights = np.concatenate(blocks, axis=1)
    weights = -np.sort(-weights, axis=1)
    return PDSample(weights=weights, tail_mass=np.exp(log_rem), theta=theta, M=M)


def power_sum(y, m: float) -> np.ndarray:
    """Symmetric power sum sum_k y_k^m over the last axis; m = 1 returns 1
    identically (the mass convention, immune to truncation)."""
    y = np.asarray(y, dtype=float)
    if m == 1:
        return np.ones(y.shape[:-1])
    return (y ** m).sum(axis=-1)


_RECURSION_CACHE: dict = {}


def moment_recursion(theta: float, powers) -> float:
    """Exact PD(theta) expectation of a product of power sums by recursion.

    For integer powers m_i >= 2, |m| (|m| + theta - 1) E[prod phi_{m_i}]
    equals the sum of the two collision terms of lower total degree; power
    sums of exponent one are replaced by 1.  Values are memoized per theta
    on the sorted multiset.
    """
    key_powers = tuple(sorted(int(m) for m in powers))
    if any(m < 2 for m in key_powers):
        raise ValueError("recursion needs integer powers >= 2")
    theta = float(theta)

    def rec(multiset) -> float:
        if not multiset:
            return 1.0
        key = (theta, multiset)
        if key in _RECURSION_CACHE:
            return _RECURSION_CACHE[key]
        total_deg = sum(multiset)
        k = len(multiset)
        acc = 0.0
        for i in range(k):
            rest = multiset[:i] + multiset[i + 1:]
            reduced = rest if multiset[i] - 1 < 2 else tuple(sorted(rest + (multiset[i] - 1,)))
            acc += multiset[i] * (multiset[i] - 1) * rec(reduced)
        for i in range(k):
            for j in range(k):
                if i == j:
                    continue
                rest = tuple(multiset[l] for l in range(k) if l not in (i, j))
                merged = tuple(sorted(rest + (multiset[i] + multiset[j] - 1,)))
                acc += multiset[i] * multiset[j] * rec(merged)
        value = acc / (total_deg * (total_deg + theta - 1.0))
        _RECURSION_CACHE[key] = value
        return value

    return rec(key_powers)


@dataclass(frozen=True)
class TiltedEstimate:
    value: float
    se: float
    ess: float
    n: int


def tilted_expect(cfg: PDConfig, fn, n: int, seed: int) -> TiltedEstimate:
    """Self-normalized importance estimate of E[f] under the tilted limit law.

    Draws PD(theta) points, weights them by prod_{k<=N} Y_k^{a_k}, and
    normalizes.  Raises when the effective sample size drops below 5% of n,
    which signals a tilt too heavy for the sample budget.
    """
    sample = pd_sample(cfg.theta, cfg.M, n, seed)
    y = sample.weights
    if cfg.n_tilted:
        logw = np.zeros(n)
        for k, a_k in enumerate(cfg.tilt):
            if a_k != 0.0:
                logw = logw + a_k * np.log(y[:, k])
        logw -= logw.max()
        w = np.exp(logw)
    else:
        w = np.ones(n)
    f_vals = np.asarray(fn(y), dtype=float)
    w_sum = w.sum()
    ess = w_sum ** 2 / (w * w).sum()
    if ess < ESS_FLOOR_FRACTION * n:
        raise HeavyTiltError(
            f"effective sample size {ess:.0f} below {ESS_FLOOR_FRACTION:.0%} of n={n}; "
            "increase n or soften the tilt"
        )
    value = float((w * f_vals).sum() / w_sum)
    se = float(np.sqrt((w * w * (f_vals - value) ** 2).sum()) / w_sum)
    return TiltedEstimate(value=value, se=se, ess=float(ess), n=n)


# ---------------------------------------------------------------------------
# parameter schedules and the convergence experiment
# ---------------------------------------------------------------------------

@dataclass
class ScheduleAd:
    """A d-indexed family of rank-drift vectors approaching the PD limit.

    Every member must have positive tail sums; the leading entries converge
    to the tilts, the small-cap tail sum to theta, and the largest tail
    entry to zero along the d-ladder.
    """

    theta: float
    tilt: tuple
    d_list: tuple
    vectors: dict                 # d -> np.ndarray

    def params_for(self, d: int, sigma: float = 1.0) -> ModelParams:
        a = self.vectors[d]
        return ModelParams(a=a, gamma=np.zeros(d), sigma=sigma)


def make_schedule(theta: float, tilt, d_list, tail: str = "flat",
                  tail_ratio: float = 0.97) -> ScheduleAd:
    """Build and validate a schedule a^d = (tilts..., small-cap tail).

    ``flat`` spreads theta evenly over the d - N tail slots; ``geometric``
    decays at ``tail_ratio`` and rescales to total theta.
    """
    cfg = PDConfig(theta=theta, tilt=tuple(tilt), M=10_000)
    n = cfg.n_tilted
    vectors = {}
    prev_max_tail = None
    for d in sorted(int(v) for v in d_list):
        if d <= n + 1:
            raise ValueError(f"d={d} too small for {n} tilted ranks")
        if tail == "flat":
            tail_vec = np.full(d - n, theta / (d - n))
        elif tail == "geometric":
            raw = tail_ratio ** np.arange(d - n)
            tail_vec = theta * raw / raw.sum()
        else:
            raise ValueError(f"unknown tail shape {tail!r}")
        a = np.concatenate([np.asarray(cfg.tilt), tail_vec])
        abar = tail_sums(a)
        if np.any(abar[1:] <= 0.0):
            raise ValueError(f"schedule member d={d} violates positive tail sums")
        max_tail = float(np.abs(tail_vec).max())
        if prev_max_tail is not None and max_tail > prev_max_tail + 1e-15:
            raise ValueError("largest tail entry must decrease along the d-ladder")
        prev_max_tail = max_tail
        vectors[d] = a
    return ScheduleAd(theta=theta, tilt=tuple(cfg.tilt),
                      d_list=tuple(sorted(vectors)), vectors=vectors)


@dataclass
class ConvergenceRow:
    d: int
    function_id: str
    estimate: float
    se: float
    tilted_limit: float
    limit_se: float
    gap: float


@dataclass
class ConvergenceReport:
    rows: list
    passed: bool
    final_gap_z: dict

    def csv_rows(self):
        return [
            (r.d, r.function_id, r.estimate, r.se, r.tilted_limit, r.gap)
            for r in self.rows
        ]

    def to_csv(self, path):
        write_csv(path, ["d", "function_id", "estimate", "se", "tilted_limit", "gap"],
                  self.csv_rows())


def convergence_experiment(schedule: ScheduleAd, cfg: PDConfig, funcs: dict,
                           n: int, seed: int, limit_overrides: dict | None = None,
                           n_limit: int | None = None) -> ConvergenceReport:
    """Estimate E[f] under each finite-d stationary law and compare with the
    tilted PD limit along the d-ladder.

    Finite-d draws come from the exact rank-based sampler, zero-padded into
    the infinite ordered simplex.  Passes when every function's gap
    sequence decreases along the ladder and the final gap is within three
    combined standard errors.  ``limit_overrides`` may supply exact limit
    values (se 0) for functions with closed forms.
    """
    limit_overrides = limit_overrides or {}
    n_limit = n if n_limit is None else n_limit
    limits = {}
    for name, fn in funcs.items():
        if name in limit_overrides:
            limits[name] = (float(limit_overrides[name]), 0.0)
        else:
            est = tilted_expect(cfg, fn, n_limit, seed)
            limits[name] = (est.value, est.se)
    rows = []
    for d in schedule.d_list:
        params = schedule.params_for(d)
        sample = sample_invariant(params, n, seed + d, kind="ranked",
                                  method="spacing")
        for name, fn in funcs.items():
            vals = np.asarray(fn(sample.draws), dtype=float)
            est, se = mean_and_se(vals)
            lim, lim_se = limits[name]
            rows.append(ConvergenceRow(
                d=d, function_id=name, estimate=est, se=se,
                tilted_limit=lim, limit_se=lim_se, gap=abs(est - lim),
            ))
    passed = True
    final_gap_z = {}
    for name in funcs:
        gaps = [r for r in rows if r.function_id == name]
        gaps.sort(key=lambda r: r.d)
        decreasing = all(gaps[i].gap >= gaps[i + 1].gap for i in range(len(gaps) - 1))
        last = gaps[-1]
        z = z_score(last.estimate, last.se, last.tilted_limit, limits[name][1])
        final_gap_z[name] = z
        passed = passed and decreasing and abs(z) < 3.0
    return ConvergenceReport(rows=rows, passed=passed, final_gap_z=final_gap_z)


def limit_growth_rate(cfg: PDConfig, sigma: float, n_top: int, n: int,
                      seed: int) -> TiltedEstimate:
    """Large-d limit of the robust optimal growth rate:
    (sigma^2/8) E_tilted[sum_{k<=N} a_k^2 / Y_k + theta^2 / tail] minus
    (sigma^2/8)(sum a_k + theta)^2.

    Requires theta > 1 and theta + (tilt tail sums) > 1 for k = 2..N.
    """
    if n_top != cfg.n_tilted:
        raise ValueError("n_top must match the number of tilted ranks")
    if not cfg.theta > 1.0:
        raise ValueError("limit growth rate requires theta > 1")
    for k in range(2, cfg.n_tilted + 1):
        if not cfg.theta + sum(cfg.tilt[k - 1:]) > 1.0:
            raise ValueError("limit growth rate requires theta + tilt tails > 1")
    a = np.asarray(cfg.tilt)
    s2 = sigma * sigma

    def integrand(y):
        top = y[:, :n_top]
        tail = 1.0 - top.sum(axis=1)
        val = (a ** 2 / top).sum(axis=1) if n_top else np.zeros(y.shape[0])
        return val + cfg.theta ** 2 / tail

    est = tilted_expect(cfg, integrand, n, seed)
    offset = (s2 / 8.0) * (sum(cfg.tilt) + cfg.theta) ** 2
    return TiltedEstimate(
        value=(s2 / 8.0) * est.value - offset,
        se=(s2 / 8.0) * est.se,
        ess=est.ess,
        n=n,
    )
