"""Discretized simulation of hybrid Jacobi market-weight dynamics.

The state is advanced by Euler-Maruyama with the exact diffusion coefficient
sigma * (delta_ij - x_i) * sqrt(x_j^+), then clipped to [0, 1] and
renormalized so every stored state is a valid simplex point.  Clipping
events are counted; runs where more than 1% of steps needed projection are
flagged as under-resolved.

Paths are driven by counter-based Philox streams keyed by
(master seed, path index), so batches are bit-reproducible regardless of
block size, worker count, or dispatch order.  Long-horizon experiments
avoid storing full trajectories by attaching observers that consume the
simulation block by block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._util import path_stream, write_csv
from .simplex import ModelParams, as_simplex, ranks_of_names, validate_params

UNDER_RESOLVED_RATE = 0.01


class InvalidModelError(ValueError):
    """Model parameters violate the tail-margin positivity condition."""

    def __init__(self, message: str, violated_index: int | None = None):
        super().__init__(message)
        self.violated_index = violated_index


def require_valid(params: ModelParams) -> None:
    report = validate_params(params)
    if not report.valid:
        raise InvalidModelError(
            f"tail margin at k={report.first_violation} is nonpositive",
            violated_index=report.first_violation,
        )


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def drift(x, params: ModelParams) -> np.ndarray:
    """Drift vector (sigma^2/2) * (gamma_i + a_{rank(i)} - total * x_i).

    Vectorized over leading axes; components sum to zero whenever x does
    sum to one.
    """
    x = np.asarray(x, dtype=float)
    ranks = ranks_of_names(x)
    half = 0.5 * params.sigma * params.sigma
    return half * (params.gamma + params.a[ranks] - params.total_mass * x)


def euler_step(x, params: ModelParams, dt: float, gaussians) -> tuple[np.ndarray, bool]:
    """One Euler-Maruyama step from a single state; returns (state, clipped)."""
    x = np.asarray(x, dtype=float)[None, :]
    z = np.asarray(gaussians, dtype=float)[None, None, :]
    block = np.empty((2,) + x.shape)
    block[0] = x
    clips = _advance_block(block, params, dt, z)
    return block[1, 0], bool(clips[0])


def _advance_block(block, params: ModelParams, dt: float, z) -> np.ndarray:
    """Fill block[1:] from block[0] using the normals z (B, P, d).

    Returns the per-path count of steps where clipping occurred.
    """
    B, P, d = z.shape
    a = params.a
    gamma = params.gamma
    sigma = params.sigma
    half = 0.5 * sigma * sigma
    total = params.total_mass
    sqdt = math.sqrt(dt)
    idx = np.broadcast_to(np.arange(d), (P, d))
    clips = np.zeros(P, dtype=np.int64)
    x = block[0]
    for b in range(B):
        order = np.argsort(-x, axis=1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, idx, axis=1)
        drift_b = half * (gamma + a[ranks] - total * x)
        sq = np.sqrt(x)
        zb = z[b]
        mix = (sq * zb).sum(axis=1, keepdims=True)
        xn = x + drift_b * dt + (sigma * sqdt) * (sq * zb - x * mix)
        bad = (xn < 0.0) | (xn > 1.0)
        if bad.any():
            clips += bad.any(axis=1)
            np.clip(xn, 0.0, 1.0, out=xn)
        xn /= xn.sum(axis=1, keepdims=True)
        block[b + 1] = xn
        x = block[b + 1]
    return clips


# ---------------------------------------------------------------------------
# paths and batches
# ---------------------------------------------------------------------------

@dataclass
class SimPath:
    """A stored trajectory on the simplex with its provenance."""

    times: np.ndarray            # (n+1,)
    states: np.ndarray           # (n+1, d)
    params: ModelParams
    seed: int
    path_index: int
    dt: float
    n_projected: int

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def projection_rate(self) -> float:
        return self.n_projected / max(self.n_steps, 1)

    @property
    def under_resolved(self) -> bool:
        return self.projection_rate > UNDER_RESOLVED_RATE

    def ranked_states(self) -> np.ndarray:
        return -np.sort(-self.states, axis=-1)

    def to_csv(self, path) -> None:
        d = self.states.shape[1]
        header = ["time"] + [f"x_{i}" for i in range(1, d + 1)]
        rows = (
            [self.times[t]] + list(self.states[t])
            for t in range(self.times.size)
        )
        write_csv(path, header, rows)


@dataclass
class BatchResult:
    """Outcome of a multi-path run: terminal states plus observer payloads."""

    params: ModelParams
    seed: int
    n_paths: int
    n_steps: int
    dt: float
    final_states: np.ndarray          # (P, d)
    n_projected: np.ndarray           # (P,)
    paths: list = field(default_factory=list)   # populated when store=True
    observations: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def projection_rate(self) -> float:
        return float(self.n_projected.sum()) / max(self.n_steps * self.n_paths, 1)

    @property
    def under_resolved(self) -> bool:
        return self.projection_rate > UNDER_RESOLVED_RATE

    def summary(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "dt": self.dt,
            "horizon": self.horizon,
            "projection_rate": self.projection_rate,
            "under_resolved": self.under_resolved,
            "per_path_projected": self.n_projected,
        }


def sum_over_steps(arr) -> np.ndarray:
    """Per-path sum of a (B, P) block, reduced along contiguous time rows.

    Summing along axis 0 directly lets numpy's pairwise reduction tree vary
    with P, so splitting a batch across workers would perturb results at
    the last bit.  Reducing each path's contiguous time series keeps float
    accumulation identical for any partition of the paths.
    """
    return np.ascontiguousarray(np.asarray(arr).T).sum(axis=1)


class PathObserver:
    """Block-wise consumer of a simulation.

    ``start`` sees the initial states (P, d); every ``update`` sees times
    (B+1,) and states (B+1, P, d) whose first row repeats the last row of
    the previous call, so increments can be formed across block borders.
    Implementations must count each grid point exactly once: the initial
    state in ``start`` and rows 1..B in ``update``.
    """

    def start(self, t0: float, states: np.ndarray) -> None:  # pragma: no cover
        pass

    def update(self, times: np.ndarray, states: np.ndarray) -> None:
        raise NotImplementedError

    def result(self) -> dict:
        raise NotImplementedError


def run_paths(params: ModelParams, x0, T: float, dt: float, seed: int,
              n_paths: int = 1, observers=(), store: bool = False,
              block_steps: int = 2048, path_offset: int = 0) -> BatchResult:
    """Simulate ``n_paths`` trajectories to horizon T in lockstep blocks.

    The trajectory of path i depends only on (seed, path_offset + i), so a
    batch may be split across workers in any way without changing results.
    """
    require_valid(params)
    if dt <= 0 or T <= 0:
        raise ValueError("need T > 0 and dt > 0")
    x0 = as_simplex(x0)
    d = params.d
    if x0.size != d:
        raise ValueError("x0 dimension does not match the model")
    n_steps = int(math.ceil(T / dt - 1e-12))
    states = np.tile(x0, (n_paths, 1))
    streams = [path_stream(seed, path_offset + i) for i in range(n_paths)]
    for ob in observers:
        ob.start(0.0, states)
    stored = [states[:, None, :].copy()] if store else None
    n_projected = np.zeros(n_paths, dtype=np.int64)
    done = 0
    while done < n_steps:
        b = min(block_steps, n_steps - done)
        z = np.stack([st.standard_normal((b, d)) for st in streams], axis=1)
        block = np.empty((b + 1, n_paths, d))
        block[0] = states
        n_projected += _advance_block(block, params, dt, z)
        times = (done + np.arange(b + 1)) * dt
        for ob in observers:
            ob.update(times, block)
        if store:
            stored.append(block[1:].transpose(1, 0, 2).copy())
        states = block[-1].copy()
        done += b
    result = BatchResult(
        params=params, seed=seed, n_paths=n_paths, n_steps=n_steps, dt=dt,
        final_states=states, n_projected=n_projected,
    )
    if store:
        all_states = np.concatenate(stored, axis=1)   # (P, n+1, d)
        times = np.arange(n_steps + 1) * dt
        result.paths = [
            SimPath(times=times.copy(), states=all_states[i], params=params,
                    seed=seed, path_index=path_offset + i, dt=dt,
                    n_projected=int(n_projected[i]))
            for i in range(n_paths)
        ]
    for ob in observers:
        result.observations.update(ob.result())
    return result


def simulate(params: ModelParams, x0, T: float, dt: float, seed: int,
             path_index: int = 0) -> SimPath:
    """Single stored trajectory; deterministic in (seed, path_index)."""
    batch = run_paths(params, x0, T, dt, seed, n_paths=1, store=True,
                      path_offset=path_index)
    return batch.paths[0]


def simulate_given_noise(params: ModelParams, x0, dt: float, gaussians) -> SimPath:
    """Stored trajectory driven by externally supplied standard normals
    (one (n_steps, d) array).  Used to couple runs across step sizes: the
    same Brownian path can be replayed at a coarser grid by aggregating
    fine increments.
    """
    require_valid(params)
    z = np.asarray(gaussians, dtype=float)[:, None, :]
    x0 = as_simplex(x0)
    n_steps = z.shape[0]
    block = np.empty((n_steps + 1, 1, x0.size))
    block[0, 0] = x0
    clips = _advance_block(block, params, dt, z)
    return SimPath(
        times=np.arange(n_steps + 1) * dt,
        states=block[:, 0, :].copy(),
        params=params,
        seed=-1,
        path_index=0,
        dt=dt,
        n_projected=int(clips[0]),
    )


# ---------------------------------------------------------------------------
# observers
# ---------------------------------------------------------------------------

class TimeAverageObserver(PathObserver):
    """Per-path time averages (1/T) * integral f(X_t) dt for named functions.

    Functions must be vectorized over leading axes of (..., d) states.  The
    integral uses left endpoints, matching the non-anticipative convention
    used everywhere else.
    """

    def __init__(self, funcs: dict):
        self.funcs = dict(funcs)
        self._acc = None
        self._elapsed = 0.0

    def start(self, t0, states):
        self._acc = {name: np.zeros(states.shape[0]) for name in self.funcs}

    def update(self, times, states):
        dt = float(times[1] - times[0])
        left = states[:-1]
        for name, fn in self.funcs.items():
            self._acc[name] += sum_over_steps(fn(left)) * dt
        self._elapsed += dt * (times.size - 1)

    def result(self):
        return {
            "time_averages": {
                name: acc / self._elapsed for name, acc in self._acc.items()
            }
        }


class OccupationObserver(PathObserver):
    """Fractions of grid times spent near collisions and near the boundary.

    For every epsilon in the ladder, counts per path: each adjacent ranked
    gap below epsilon, the minimum weight below epsilon, and any three
    ranked weights within an epsilon window.
    """

    def __init__(self, eps_ladder=(1e-2, 1e-3, 1e-4)):
        self.eps = np.asarray(sorted(eps_ladder, reverse=True), dtype=float)
        self._n = 0
        self._gap = None
        self._min = None
        self._triple = None

    def start(self, t0, states):
        P, d = states.shape
        E = self.eps.size
        self._gap = np.zeros((E, d - 1, P), dtype=np.int64)
        self._min = np.zeros((E, P), dtype=np.int64)
        self._triple = np.zeros((E, P), dtype=np.int64)
        self._count(states[None, :, :])
        self._n = 1

    def update(self, times, states):
        self._count(states[1:])
        self._n += states.shape[0] - 1

    def _count(self, states):
        y = -np.sort(-states, axis=-1)            # (B, P, d)
        gaps = y[..., :-1] - y[..., 1:]           # (B, P, d-1)
        smallest = y[..., -1]                     # (B, P)
        if y.shape[-1] >= 3:
            window = (y[..., :-2] - y[..., 2:]).min(axis=-1)
        else:
            window = np.full(smallest.shape, np.inf)
        for e, eps in enumerate(self.eps):
            self._gap[e] += (gaps < eps).sum(axis=0).T
            self._min[e] += (smallest < eps).sum(axis=0)
            self._triple[e] += (window < eps).sum(axis=0)

    def result(self):
        n = float(self._n)
        return {
            "occupation": {
                "eps": self.eps,
                "gap_fraction": self._gap / n,       # (E, d-1, P)
                "min_weight_fraction": self._min / n,
                "triple_fraction": self._triple / n,
            }
        }


class HitObserver(PathObserver):
    """Whether a path-wise condition is met at any grid time, per epsilon.

    ``condition(states, eps_ladder)`` must return a boolean array of shape
    (n_eps,) + leading axes of the (..., P, d) states; it is evaluated once
    per block so any sorting can be shared across the ladder.
    """

    def __init__(self, condition, eps_ladder):
        self.condition = condition
        self.eps = np.asarray(sorted(eps_ladder, reverse=True), dtype=float)
        self._hit = None

    def start(self, t0, states):
        self._hit = np.zeros((self.eps.size, states.shape[0]), dtype=bool)
        self._scan(states[None, :, :])

    def update(self, times, states):
        self._scan(states[1:])

    def _scan(self, states):
        hits = np.asarray(self.condition(states, self.eps))
        self._hit |= hits.any(axis=1)

    def result(self):
        return {"hits": {"eps": self.eps, "hit": self._hit}}


# ---------------------------------------------------------------------------
# diagnostics on stored paths
# ---------------------------------------------------------------------------

def realized_covariation(path: SimPath, i: int, j: int) -> np.ndarray:
    """Cumulative sum of increment products dX_i dX_j (names 1-based).

    The terminal value approximates the integrated model covariation
    integral of c_ij(X_t) dt along the same path.
    """
    d = path.states.shape[1]
    if not (1 <= i <= d and 1 <= j <= d):
        raise IndexError("names out of range")
    dx = np.diff(path.states, axis=0)
    return np.cumsum(dx[:, i - 1] * dx[:, j - 1])


def model_covariation_integral(path: SimPath, i: int, j: int) -> np.ndarray:
    """Cumulative left-endpoint integral of c_ij(X_t) dt along the path."""
    x = path.states[:-1]
    sig2 = path.params.sigma ** 2
    xi = x[:, i - 1]
    xj = x[:, j - 1]
    rate = sig2 * (xi * ((i == j) - xj))
    return np.cumsum(rate) * path.dt


@dataclass(frozen=True)
class OccupationReport:
    eps: float
    gap_fractions: np.ndarray        # (d-1,)
    min_weight_fraction: float
    triple_fraction: float


def occupation_stats(path: SimPath, eps: float) -> OccupationReport:
    """Fractions of grid times with near-collisions or near-boundary states."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    y = path.ranked_states()
    gaps = y[:, :-1] - y[:, 1:]
    d = y.shape[1]
    triple = (
        float(((y[:, :-2] - y[:, 2:]).min(axis=1) < eps).mean()) if d >= 3 else 0.0
    )
    return OccupationReport(
        eps=eps,
        gap_fractions=(gaps < eps).mean(axis=0),
        min_weight_fraction=float((y[:, -1] < eps).mean()),
        triple_fraction=triple,
    )


def gap_local_time(path: SimPath, k: int, l: int | None = None,
                   eps: float | None = None, log_scale: bool = False) -> np.ndarray:
    """Occupation-density estimate of the local time of the ranked gap
    Y_(k) - Y_(l) at zero (or of the log-gap when ``log_scale``).

    Uses (1/eps) * integral of 1{0 <= gap < eps} against the model
    quadratic-variation rate of the gap.  The default bandwidth eps scales
    with the diffusive step size, eps = 2 sqrt(dt).
    """
    d = path.states.shape[1]
    l = k + 1 if l is None else l
    if not (1 <= k < l <= d):
        raise IndexError("need 1 <= k < l <= d")
    if eps is None:
        eps = 2.0 * math.sqrt(path.dt)
    y = path.ranked_states()[:-1]
    yk = y[:, k - 1]
    yl = y[:, l - 1]
    sig2 = path.params.sigma ** 2
    if log_scale:
        with np.errstate(divide="ignore"):
            gap = np.log(yk) - np.log(yl)
            rate = sig2 * (1.0 / yk + 1.0 / yl)
        rate[~np.isfinite(rate)] = 0.0
    else:
        gap = yk - yl
        rate = sig2 * (yk + yl - gap * gap)
    inside = (gap >= 0.0) & (gap < eps)
    return np.cumsum(inside * rate) * (path.dt / eps)
