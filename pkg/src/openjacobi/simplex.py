"""Simplex-valued state primitives.

Vectors of market weights live on the standard simplex (nonnegative entries
summing to one); their decreasing rearrangements live on the ordered simplex.
This module provides validated constructors for both, rank/name bookkeeping
with a deterministic lexicographic tie-break, tail sums, index-set sums,
model-parameter validation, the Wright-Fisher-type diffusion matrices, and a
recursive quadrature toolkit for monomial integrals over ordered shells
(the normalizing-constant machinery used by the invariant-density code).

Measure convention: all integrals over the simplex and the ordered simplex
are taken with respect to the pushforward of Lebesgue measure on R^{d-1}
under (x_1, ..., x_{d-1}) -> (x_1, ..., x_{d-1}, 1 - sum x_i).  This is the
plain Dirichlet-integral convention; it omits the sqrt(d) Jacobian of the
geometric surface measure, so comparisons against geometric-surface-measure
references must rescale accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

SUM_TOL = 1e-12          # accepted deviation of sum(x) from 1 after construction
RENORM_TOL = 1e-9        # inputs whose sum is off by at most this get renormalized


class SimplexError(ValueError):
    """Input cannot be interpreted as a point on the (ordered) simplex."""


class DivergentIntegralError(ArithmeticError):
    """Monomial integral over the ordered simplex is infinite."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature could not reach the requested tolerance."""


# ---------------------------------------------------------------------------
# validated constructors
# ---------------------------------------------------------------------------

def as_simplex(x, renorm_tol: float = RENORM_TOL) -> np.ndarray:
    """Validate (and possibly renormalize) a point of the standard simplex.

    Entries must lie in [0, 1] up to tiny arithmetic noise; sums within
    ``renorm_tol`` of 1 are renormalized, anything worse is rejected.
    Returns a fresh float array whose sum is 1 within ``SUM_TOL``.
    """
    v = np.array(x, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise SimplexError("simplex points are 1-d with at least two entries")
    if not np.all(np.isfinite(v)):
        raise SimplexError("simplex entries must be finite")
    if v.min() < -SUM_TOL or v.max() > 1.0 + renorm_tol:
        raise SimplexError(f"entries outside [0, 1]: min={v.min()}, max={v.max()}")
    np.clip(v, 0.0, None, out=v)
    s = v.sum()
    if abs(s - 1.0) > renorm_tol:
        raise SimplexError(f"entries sum to {s}, too far from 1 to renormalize")
    if s != 1.0:
        v /= s
    if abs(v.sum() - 1.0) > SUM_TOL:
        raise SimplexError("renormalization failed to reach unit sum")
    return v


def as_ranked(y, renorm_tol: float = RENORM_TOL) -> np.ndarray:
    """Validate a point of the ordered simplex (non-increasing entries)."""
    v = as_simplex(y, renorm_tol)
    if np.any(np.diff(v) > SUM_TOL):
        raise SimplexError("entries are not non-increasing")
    return v


# ---------------------------------------------------------------------------
# ranks and names
# ---------------------------------------------------------------------------

def ranking_order(x) -> np.ndarray:
    """0-based names listed by rank: ``order[k]`` names the (k+1)-th largest.

    Works on a single vector or a batch with shape (..., d).  Ties are broken
    lexicographically: among equal values the smaller name gets the better
    rank.  Comparison is exact (no epsilon); simulated states essentially
    never tie, and constructed ties resolve deterministically.
    """
    x = np.asarray(x, dtype=float)
    return np.argsort(-x, axis=-1, kind="stable")


def ranks_of_names(x) -> np.ndarray:
    """0-based rank occupied by each name; inverse permutation of order."""
    order = ranking_order(x)
    ranks = np.empty_like(order)
    idx = np.arange(order.shape[-1])
    np.put_along_axis(ranks, order, np.broadcast_to(idx, order.shape), axis=-1)
    return ranks


def rank_of(x, i: int) -> int:
    """Rank (1-based) held by name ``i`` (1-based)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if not 1 <= i <= d:
        raise IndexError(f"name {i} out of range 1..{d}")
    return int(ranks_of_names(x)[i - 1]) + 1


def name_of(x, k: int) -> int:
    """Name (1-based) occupying rank ``k`` (1-based)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if not 1 <= k <= d:
        raise IndexError(f"rank {k} out of range 1..{d}")
    return int(ranking_order(x)[k - 1]) + 1


# ---------------------------------------------------------------------------
# tail sums and index-set sums
# ---------------------------------------------------------------------------

def tail_sums(v) -> np.ndarray:
    """All tail sums: ``out[k-1] = v_k + ... + v_d`` for k = 1..d."""
    v = np.asarray(v, dtype=float)
    return np.cumsum(v[..., ::-1], axis=-1)[..., ::-1]


def tail_sum(v, k: int) -> float:
    """Sum of entries from position ``k`` (1-based) to the end."""
    v = np.asarray(v, dtype=float)
    if not 1 <= k <= v.shape[-1]:
        raise IndexError(f"index {k} out of range 1..{v.shape[-1]}")
    return float(v[k - 1:].sum())


def lambda_sum(x, names) -> float:
    """Sum of the weights of the given 1-based names; the empty set gives 0."""
    x = np.asarray(x, dtype=float)
    idx = _index_set(names, x.shape[-1])
    if idx.size == 0:
        return 0.0
    return float(x[idx - 1].sum())


def _index_set(names, d: int) -> np.ndarray:
    idx = np.asarray(sorted(set(int(i) for i in names)), dtype=int)
    if idx.size and (idx[0] < 1 or idx[-1] > d):
        raise IndexError(f"index set entries must lie in 1..{d}")
    return idx


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Parameters of a hybrid Jacobi market-weight model.

    ``a`` is the rank-indexed drift vector, ``gamma`` the name-indexed drift
    vector and ``sigma`` the common volatility scale.  The model is
    well-posed iff every tail margin a_bar_k + gamma_bar_(k) (k = 2..d) is
    strictly positive, where gamma_bar_(k) sums the d-k+1 smallest entries
    of gamma.
    """

    a: np.ndarray
    gamma: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.array(self.a, dtype=float))
        object.__setattr__(self, "gamma", np.array(self.gamma, dtype=float))
        if self.a.ndim != 1 or self.gamma.shape != self.a.shape:
            raise ValueError("a and gamma must be 1-d vectors of equal length")
        if self.d < 2:
            raise ValueError("need at least two assets")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def d(self) -> int:
        return self.a.size

    @property
    def is_rank_based(self) -> bool:
        return bool(np.all(self.gamma == 0.0))

    @property
    def total_mass(self) -> float:
        """a_bar_1 + gamma_bar_1, the mean-reversion coefficient."""
        return float(self.a.sum() + self.gamma.sum())

    def tail_margins(self) -> np.ndarray:
        """a_bar_k + gamma_bar_(k) for k = 2..d (length d-1)."""
        abar = tail_sums(self.a)
        gbar = tail_sums(np.sort(self.gamma)[::-1])
        return abar[1:] + gbar[1:]


@dataclass(frozen=True)
class ParamReport:
    """Well-posedness report; ``margins[k-2]`` is a_bar_k + gamma_bar_(k)."""

    valid: bool
    margins: np.ndarray
    first_violation: int | None          # 1-based k of the first failing margin
    growth_margins: np.ndarray | None = None   # margins - 1 for k = 2..N+1
    growth_ok: bool | None = None

    def as_dict(self) -> dict:
        out = {
            "valid": self.valid,
            "margins": self.margins,
            "first_violation": self.first_violation,
        }
        if self.growth_margins is not None:
            out["growth_margins"] = self.growth_margins
            out["growth_ok"] = self.growth_ok
        return out


def validate_params(params: ModelParams, open_market_size: int | None = None) -> ParamReport:
    """Check the positivity of every tail margin; never raises.

    With ``open_market_size`` given, additionally reports whether the
    growth-existence thresholds (margin >= 1 for k = 2..N+1) hold.
    """
    margins = params.tail_margins()
    bad = np.flatnonzero(margins <= 0.0)
    first = int(bad[0]) + 2 if bad.size else None
    growth_margins = None
    growth_ok = None
    if open_market_size is not None:
        n = int(open_market_size)
        if not 1 <= n <= params.d - 1:
            raise ValueError("open market size must lie in 1..d-1")
        growth_margins = margins[: n] - 1.0
        growth_ok = bool(np.all(growth_margins >= 0.0))
    return ParamReport(
        valid=bool(bad.size == 0),
        margins=margins,
        first_violation=first,
        growth_margins=growth_margins,
        growth_ok=growth_ok,
    )


# ---------------------------------------------------------------------------
# diffusion matrices
# ---------------------------------------------------------------------------

def diffusion_c(x, sigma: float = 1.0) -> np.ndarray:
    """Named diffusion matrix sigma^2 * x_i (delta_ij - x_j); rows sum to 0."""
    x = np.asarray(x, dtype=float)
    return sigma * sigma * (np.diag(x) - np.outer(x, x))


def diffusion_kappa(y, sigma: float = 1.0) -> np.ndarray:
    """Ranked diffusion matrix; the identical algebra on the ranked vector."""
    return diffusion_c(np.asarray(y, dtype=float), sigma)


def covariation_form(u, v, x, sigma: float = 1.0) -> float:
    """Quadratic covariation shortcut u^T c(x) v without building c.

    Equals sigma^2 * ((u*v) . x - (u . x)(v . x)) where * is the Hadamard
    product; valid whenever x sums to one.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(sigma * sigma * ((u * v * x).sum(-1) - (u * x).sum(-1) * (v * x).sum(-1)))


# ---------------------------------------------------------------------------
# monomial integrals over ordered shells
# ---------------------------------------------------------------------------

def monomial_integral_finite(exponents) -> bool:
    """True iff the monomial prod y_k^{b_k - 1} integrates over the full
    ordered simplex, i.e. iff every tail sum b_bar_k (k >= 2) is positive."""
    b = np.asarray(exponents, dtype=float)
    return bool(np.all(tail_sums(b)[1:] > 0.0))


def monomial_integral(exponents, alpha: float = 1.0, beta: float = 0.0,
                      rel_tol: float = 1e-8, depth_limit: int = 200) -> float:
    """Integral of prod_k y_k^{b_k - 1} over the ordered shell
    {y_1 >= ... >= y_d >= beta, sum y_k = alpha}.

    Evaluated by peeling off the smallest coordinate one adaptive 1-d
    Gauss-Kronrod quadrature at a time; each inner call is rescaled to a
    unit shell through the homogeneity identity
    Q(lam*alpha, lam*beta) = lam^(sum b - 1) Q(alpha, beta) to keep the
    recursion well conditioned.  With beta = 0 divergence is decided
    analytically up front, never by watching the quadrature fail.
    """
    b = np.asarray(exponents, dtype=float)
    if b.ndim != 1 or b.size < 1:
        raise ValueError("exponent vector must be 1-d and nonempty")
    if not alpha > 0 or beta < 0:
        raise ValueError("need alpha > 0 and beta >= 0")
    if beta == 0.0 and b.size > 1 and not monomial_integral_finite(b):
        bad = np.flatnonzero(tail_sums(b)[1:] <= 0.0)[0] + 2
        raise DivergentIntegralError(
            f"tail sum of exponents from position {bad} is nonpositive; integral diverges"
        )
    return _monomial_recurse(b, float(alpha), float(beta), rel_tol, depth_limit)


def _monomial_recurse(b, alpha, beta, rel_tol, limit):
    d = b.size
    if beta > alpha / d:
        return 0.0
    if d == 1:
        # degenerate one-point shell {y_1 = alpha}; pushforward of Lebesgue
        # on R^0 is a unit point mass
        return alpha ** (b[0] - 1.0)
    bp = b[:-1]
    scale_pow = bp.sum() - 1.0

    def integrand(yd):
        rest = alpha - yd
        inner = _monomial_recurse(bp, 1.0, yd / rest, rel_tol, limit)
        return yd ** (b[-1] - 1.0) * rest ** scale_pow * inner

    with np.errstate(divide="ignore", over="ignore"):
        value, abserr = integrate.quad(
            integrand, beta, alpha / d, epsabs=0.0, epsrel=rel_tol, limit=limit
        )
    if not math.isfinite(value):
        raise QuadratureError("quadrature returned a non-finite value")
    if value != 0.0 and abserr > 50 * rel_tol * abs(value):
        raise QuadratureError(
            f"quadrature stalled: estimated error {abserr:.3g} on value {value:.6g}"
        )
    return value


def ordered_simplex_integral(fn, d: int, rel_tol: float = 1e-8) -> float:
    """Integral of a scalar function over the full ordered simplex, d <= 3.

    ``fn`` receives the full d-vector (y_1, ..., y_d).  Used for invariant
    densities and growth-rate integrands that are not pure monomials.
    """
    if d == 2:
        val, _ = integrate.quad(lambda y1: fn(np.array([y1, 1.0 - y1])),
                                0.5, 1.0, epsabs=0.0, epsrel=rel_tol, limit=200)
        return val
    if d == 3:
        def inner(y2, y1):
            return fn(np.array([y1, y2, 1.0 - y1 - y2]))

        val, _ = integrate.dblquad(
            inner, 1.0 / 3.0, 1.0,
            lambda y1: (1.0 - y1) / 2.0,
            lambda y1: min(y1, 1.0 - y1),
            epsabs=0.0, epsrel=rel_tol,
        )
        return val
    raise ValueError("full-simplex quadrature is limited to d <= 3")
