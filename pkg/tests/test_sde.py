import numpy as np
import pytest

from openjacobi import (
    InvalidModelError,
    ModelParams,
    OccupationObserver,
    TimeAverageObserver,
    diffusion_c,
    drift,
    euler_step,
    gap_local_time,
    model_covariation_integral,
    occupation_stats,
    realized_covariation,
    run_paths,
    simulate,
    simulate_given_noise,
)
from openjacobi.sde import PathObserver, SimPath


def rank_jacobi(a, sigma=1.0):
    a = np.asarray(a, dtype=float)
    return ModelParams(a=a, gamma=np.zeros(a.size), sigma=sigma)


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------

def test_drift_volatility_stabilized_form():
    d, g = 4, 0.8
    p = ModelParams(a=np.zeros(d), gamma=np.full(d, g), sigma=1.0)
    rng = np.random.default_rng(0)
    x = rng.dirichlet(np.ones(d))
    expected = (g * d / 2.0) * (1.0 / d - x)
    assert np.allclose(drift(x, p), expected, atol=1e-14)


def test_drift_at_uniform_state_rank_model():
    p = rank_jacobi([2.0, 1.0, 0.0])
    x = np.full(3, 1.0 / 3.0)
    # ties broken lexicographically: name i holds rank i
    expected = 0.5 * (p.a - p.a.sum() / 3.0)
    assert np.allclose(drift(x, p), expected, atol=1e-14)


def test_drift_sums_to_zero():
    rng = np.random.default_rng(1)
    p = ModelParams(a=[0.5, 0.2, 0.3, 1.0], gamma=[0.1, 0.4, 0.0, 0.2], sigma=1.4)
    for _ in range(20):
        x = rng.dirichlet(np.ones(4))
        assert abs(drift(x, p).sum()) < 1e-12


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def test_step_fixed_point_without_noise():
    d, g = 3, 1.0
    p = ModelParams(a=np.zeros(d), gamma=np.full(d, g), sigma=1.0)
    x = np.full(d, 1.0 / d)            # drift vanishes here
    new, clipped = euler_step(x, p, 0.01, np.zeros(d))
    assert np.allclose(new, x, atol=1e-15)
    assert not clipped


def test_step_noise_free_drift_example():
    # uniform start, rank drift (2,1,0): half-step moves mass to name 1
    p = rank_jacobi([2.0, 1.0, 0.0])
    x = np.full(3, 1.0 / 3.0)
    new, _ = euler_step(x, p, 0.01, np.zeros(3))
    expected = np.array([1 / 3 + 0.005, 1 / 3, 1 / 3 - 0.005])
    assert np.allclose(new, expected, atol=1e-14)


def test_one_step_increment_moments_match_model():
    # Monte Carlo oracle: replicate one step from a fixed state and compare
    # the empirical increment mean and covariance with drift * dt and
    # c(x) * dt entrywise
    p = rank_jacobi([1.5, 1.0, 0.5])
    x = np.array([0.5, 0.3, 0.2])
    dt = 1e-3
    n = 100_000
    rng = np.random.default_rng(42)
    z = rng.standard_normal((1, n, 3))
    block = np.empty((2, n, 3))
    block[0] = x
    from openjacobi.sde import _advance_block

    _advance_block(block, p, dt, z)
    dx = block[1] - block[0]
    mean_se = dx.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(dx.mean(axis=0) - drift(x, p) * dt) < 4.0 * mean_se)
    target = diffusion_c(x, p.sigma) * dt
    prods = dx[:, :, None] * dx[:, None, :]
    emp = prods.mean(axis=0)
    se = prods.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(emp - target) < 4.0 * se + 1e-9)


# ---------------------------------------------------------------------------
# simulate: determinism and ergodic sanity
# ---------------------------------------------------------------------------

def test_simulate_is_deterministic():
    p = rank_jacobi([1.0, 1.0, 1.0])
    a = simulate(p, [0.5, 0.3, 0.2], T=0.5, dt=1e-3, seed=9)
    b = simulate(p, [0.5, 0.3, 0.2], T=0.5, dt=1e-3, seed=9)
    assert np.array_equal(a.states, b.states)
    c = simulate(p, [0.5, 0.3, 0.2], T=0.5, dt=1e-3, seed=10)
    assert not np.array_equal(a.states, c.states)


def test_simulate_block_size_invariance():
    p = rank_jacobi([1.0, 1.0, 1.0])
    a = run_paths(p, [0.4, 0.35, 0.25], T=0.3, dt=1e-3, seed=5, n_paths=2,
                  store=True, block_steps=7)
    b = run_paths(p, [0.4, 0.35, 0.25], T=0.3, dt=1e-3, seed=5, n_paths=2,
                  store=True, block_steps=4096)
    for pa, pb in zip(a.paths, b.paths):
        assert np.array_equal(pa.states, pb.states)


def test_path_identity_independent_of_batch_partition():
    p = rank_jacobi([1.0, 1.0, 1.0])
    whole = run_paths(p, [0.4, 0.35, 0.25], T=0.2, dt=1e-3, seed=5, n_paths=4,
                      store=True)
    part = run_paths(p, [0.4, 0.35, 0.25], T=0.2, dt=1e-3, seed=5, n_paths=2,
                     store=True, path_offset=2)
    assert np.array_equal(whole.paths[2].states, part.paths[0].states)
    assert np.array_equal(whole.paths[3].states, part.paths[1].states)


def test_simulate_rejects_invalid_params():
    with pytest.raises(InvalidModelError) as err:
        simulate(ModelParams(a=[1.0, -1.0, 0.5], gamma=np.zeros(3)),
                 [0.4, 0.3, 0.3], T=0.1, dt=1e-3, seed=0)
    assert err.value.violated_index == 2


def test_long_run_mean_matches_symmetric_dirichlet():
    # a = 0, symmetric gamma: stationary mean of each weight is 1/d
    d = 3
    p = ModelParams(a=np.zeros(d), gamma=np.full(d, 2.0), sigma=1.0)
    obs = TimeAverageObserver({"x1": lambda s: s[..., 0]})
    batch = run_paths(p, np.full(d, 1.0 / d), T=100.0, dt=1e-3, seed=21,
                      n_paths=4, observers=[obs])
    avg = batch.observations["time_averages"]["x1"]
    assert abs(avg.mean() - 1.0 / d) < 0.02


# ---------------------------------------------------------------------------
# covariation diagnostics
# ---------------------------------------------------------------------------

class _CovariationTerminal(PathObserver):
    """Terminal realized and model-integrated covariations, per path."""

    def __init__(self, i, j, params):
        self.i, self.j, self.params = i - 1, j - 1, params
        self.realized = None
        self.model = None

    def start(self, t0, states):
        P = states.shape[0]
        self.realized = np.zeros(P)
        self.model = np.zeros(P)

    def update(self, times, states):
        dt = float(times[1] - times[0])
        dx = np.diff(states, axis=0)
        self.realized += (dx[..., self.i] * dx[..., self.j]).sum(axis=0)
        left = states[:-1]
        delta = 1.0 if self.i == self.j else 0.0
        rate = self.params.sigma ** 2 * left[..., self.i] * (delta - left[..., self.j])
        self.model += rate.sum(axis=0) * dt

    def result(self):
        return {"cov": {"realized": self.realized, "model": self.model}}


@pytest.mark.parametrize("i,j", [(1, 1), (1, 2)])
def test_realized_covariation_tracks_model_integral(i, j):
    p = rank_jacobi([1.0, 1.0, 1.0])
    diag = _CovariationTerminal(i, j, p)
    scale = _CovariationTerminal(i, i, p)
    batch = run_paths(p, np.full(3, 1 / 3), T=10.0, dt=1e-3, seed=77,
                      n_paths=100, observers=[diag])
    batch2 = run_paths(p, np.full(3, 1 / 3), T=10.0, dt=1e-3, seed=77,
                       n_paths=100, observers=[scale])
    gap = (batch.observations["cov"]["realized"]
           - batch.observations["cov"]["model"]).mean()
    norm = batch2.observations["cov"]["model"].mean()
    assert abs(gap) / norm < 0.05


def test_realized_covariation_rows_sum_to_zero():
    p = rank_jacobi([1.0, 1.0, 1.0])
    path = simulate(p, [0.5, 0.3, 0.2], T=2.0, dt=1e-3, seed=3)
    total = sum(realized_covariation(path, 1, j)[-1] for j in range(1, 4))
    scale = realized_covariation(path, 1, 1)[-1]
    assert abs(total) < 5e-3 * scale + 1e-12


def test_realized_covariation_zero_on_frozen_coordinate():
    p = rank_jacobi([1.0, 1.0])
    states = np.tile([0.6, 0.4], (11, 1))
    path = SimPath(times=np.arange(11) * 0.1, states=states, params=p,
                   seed=0, path_index=0, dt=0.1, n_projected=0)
    assert np.all(realized_covariation(path, 1, 1) == 0.0)


def test_model_covariation_integral_matches_quadratic_form():
    p = rank_jacobi([1.0, 1.0, 1.0])
    path = simulate(p, [0.5, 0.3, 0.2], T=0.5, dt=1e-3, seed=8)
    # cross-check one entry against the generic covariation form
    left = path.states[:-1]
    manual = np.cumsum(p.sigma ** 2 * left[:, 0] * (1.0 - left[:, 0])) * path.dt
    assert np.allclose(model_covariation_integral(path, 1, 1), manual)


# ---------------------------------------------------------------------------
# occupation statistics and local times
# ---------------------------------------------------------------------------

def test_occupation_fraction_one_for_huge_eps():
    p = rank_jacobi([1.0, 1.0, 1.0])
    path = simulate(p, [0.5, 0.3, 0.2], T=0.2, dt=1e-3, seed=2)
    rep = occupation_stats(path, eps=2.0)
    assert np.all(rep.gap_fractions == 1.0)
    assert rep.min_weight_fraction == 1.0
    assert rep.triple_fraction == 1.0


def test_occupation_boundary_fraction_small_when_margins_large():
    # every tail sum >= 1: the smallest weight stays away from zero
    p = rank_jacobi([1.0, 1.0, 1.5])
    path = simulate(p, np.full(3, 1 / 3), T=50.0, dt=1e-3, seed=4)
    rep = occupation_stats(path, eps=1e-3)
    assert rep.min_weight_fraction < 0.01


def test_occupation_observer_matches_stored_stats():
    p = rank_jacobi([1.0, 1.0, 1.0])
    obs = OccupationObserver(eps_ladder=(1e-2,))
    batch = run_paths(p, [0.5, 0.3, 0.2], T=1.0, dt=1e-3, seed=13, n_paths=1,
                      observers=[obs], store=True, block_steps=173)
    stored = occupation_stats(batch.paths[0], eps=1e-2)
    streamed = batch.observations["occupation"]
    assert np.allclose(streamed["gap_fraction"][0, :, 0], stored.gap_fractions)
    assert streamed["min_weight_fraction"][0, 0] == pytest.approx(
        stored.min_weight_fraction)


def test_gap_local_time_zero_when_gap_bounded_away():
    p = rank_jacobi([1.0, 1.0])
    states = np.tile([0.8, 0.2], (101, 1))
    path = SimPath(times=np.arange(101) * 0.01, states=states, params=p,
                   seed=0, path_index=0, dt=0.01, n_projected=0)
    assert gap_local_time(path, 1)[-1] == 0.0


def test_gap_local_time_nonadjacent_negligible():
    # no triple collisions in the interior: the (1,3) pair accumulates far
    # less than the adjacent pairs
    p = rank_jacobi([1.0, 1.0, 1.0])
    path = simulate(p, np.full(3, 1 / 3), T=50.0, dt=1e-3, seed=6)
    wide = gap_local_time(path, 1, l=3)[-1]
    adjacent = gap_local_time(path, 1)[-1] + gap_local_time(path, 2)[-1]
    assert wide < 0.05 * adjacent


def test_gap_local_time_bandwidth_robustness():
    d2 = rank_jacobi([1.0, 1.0])
    path = simulate(d2, [0.5, 0.5], T=50.0, dt=1e-3, seed=15)
    dt = path.dt
    est1 = gap_local_time(path, 1, eps=2.0 * np.sqrt(dt))[-1]
    est2 = gap_local_time(path, 1, eps=4.0 * np.sqrt(dt))[-1]
    assert est1 > 0.0
    assert abs(est1 - est2) / est1 < 0.2


# ---------------------------------------------------------------------------
# storage / export
# ---------------------------------------------------------------------------

def test_path_csv_export(tmp_path):
    p = rank_jacobi([1.0, 1.0, 1.0])
    path = simulate(p, [0.5, 0.3, 0.2], T=0.05, dt=1e-3, seed=1)
    out = tmp_path / "path.csv"
    path.to_csv(out)
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (51, 4)
    assert np.allclose(data[:, 0], path.times)
    assert np.allclose(data[:, 1:], path.states)
    header = out.read_text().splitlines()[0]
    assert header == "time,x_1,x_2,x_3"


def test_simulate_given_noise_matches_stream_draws():
    p = rank_jacobi([1.0, 1.0, 1.0])
    from openjacobi._util import path_stream

    z = path_stream(123, 0).standard_normal((200, 3))
    replay = simulate_given_noise(p, [0.5, 0.3, 0.2], 1e-3, z)
    direct = simulate(p, [0.5, 0.3, 0.2], T=0.2, dt=1e-3, seed=123)
    assert np.allclose(replay.states, direct.states)


def test_under_resolved_flag_for_coarse_dt():
    p = rank_jacobi([1.0, 1.0, 1.0])
    batch = run_paths(p, [0.6, 0.3, 0.1], T=10.0, dt=0.5, seed=2, n_paths=4)
    assert batch.projection_rate > 0.01
    assert batch.under_resolved
