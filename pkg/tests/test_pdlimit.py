import math

import numpy as np
import pytest
from scipy.special import beta as beta_fn

from openjacobi import (
    ModelParams,
    PDConfig,
    convergence_experiment,
    limit_growth_rate,
    make_schedule,
    moment_recursion,
    pd_sample,
    power_sum,
    robust_growth_rate,
    sample_invariant,
    tilted_expect,
)
from openjacobi._util import z_score
from openjacobi.pdlimit import HeavyTiltError


def mc_z(values, target):
    m = values.mean()
    se = values.std(ddof=1) / math.sqrt(values.size)
    return z_score(m, se, target, 0.0)


# ---------------------------------------------------------------------------
# configuration validity
# ---------------------------------------------------------------------------

def test_pdconfig_requires_positive_theta():
    with pytest.raises(ValueError):
        PDConfig(theta=0.0)


def test_pdconfig_tilt_tail_condition_is_strict():
    PDConfig(theta=1.0, tilt=(5.0, -0.99))
    with pytest.raises(ValueError):
        PDConfig(theta=1.0, tilt=(5.0, -1.0))     # tail sum equals -theta
    # the first tilt entry is unconstrained
    PDConfig(theta=1.0, tilt=(-25.0,))


def test_pdconfig_truncation_mass_bound():
    with pytest.raises(ValueError):
        PDConfig(theta=2.0, M=10)     # (2/3)^10 is nowhere near 1e-6
    PDConfig(theta=2.0, M=60)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_pd_sample_draws_are_ordered_and_account_for_mass():
    sample = pd_sample(theta=1.0, M=10_000, n=2_000, seed=0)
    w = sample.weights
    assert np.all(w >= 0.0)
    assert np.all(np.diff(w, axis=1) <= 0.0)
    total = w.sum(axis=1) + sample.tail_mass
    assert np.abs(total - 1.0).max() < 1e-12
    assert sample.tail_mass.max() < 1e-10


def test_pd_sample_deterministic_in_seed():
    a = pd_sample(theta=0.5, M=10_000, n=100, seed=9)
    b = pd_sample(theta=0.5, M=10_000, n=100, seed=9)
    assert np.array_equal(a.weights, b.weights)


def test_pd_sample_top_share_moment():
    sample = pd_sample(theta=1.0, M=10_000, n=50_000, seed=1)
    # E[phi_2] = 1/(1+theta)
    assert abs(mc_z(power_sum(sample.weights, 2), 0.5)) < 3.0


# ---------------------------------------------------------------------------
# power sums
# ---------------------------------------------------------------------------

def test_power_sum_conventions():
    y = np.array([[1.0, 0.0, 0.0], [0.25, 0.25, 0.25]])
    assert np.allclose(power_sum(y, 3), [1.0, 3 * 0.25 ** 3])
    assert np.allclose(power_sum(y, 1), 1.0)       # mass convention
    atoms = np.full(4, 0.25)
    assert power_sum(atoms, 2.5) == pytest.approx(4 ** (1 - 2.5))


# ---------------------------------------------------------------------------
# moment recursion
# ---------------------------------------------------------------------------

def test_moment_recursion_base_cases():
    assert moment_recursion(1.0, [2]) == pytest.approx(0.5)
    # one recursion step: 3 (2 + theta) E[phi_3] = 6 E[phi_2]
    assert moment_recursion(1.0, [3]) == pytest.approx(1 / 3)


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("m", [2, 3, 4, 5, 6])
def test_moment_recursion_singletons_match_beta_integral(theta, m):
    # independent closed form: E[sum Y^m] = theta * B(m, theta)
    assert moment_recursion(theta, [m]) == pytest.approx(
        theta * beta_fn(m, theta), rel=1e-12
    )


def test_moment_recursion_strictly_decreasing_in_power():
    for theta in (0.5, 1.0, 2.0):
        vals = [moment_recursion(theta, [m]) for m in range(2, 9)]
        assert np.all(np.diff(vals) < 0.0)


def test_moment_recursion_products_match_monte_carlo():
    sample = pd_sample(theta=2.0, M=10_000, n=50_000, seed=2)
    w = sample.weights
    for ms in [(2, 2), (2, 3), (2, 2, 2)]:
        vals = np.ones(w.shape[0])
        for m in ms:
            vals = vals * power_sum(w, m)
        assert abs(mc_z(vals, moment_recursion(2.0, ms))) < 3.0, ms


def test_moment_recursion_rejects_low_powers():
    with pytest.raises(ValueError):
        moment_recursion(1.0, [1, 2])


# ---------------------------------------------------------------------------
# tilted expectations
# ---------------------------------------------------------------------------

def test_tilted_expect_without_tilt_is_plain_mean():
    cfg = PDConfig(theta=1.0, tilt=())
    est = tilted_expect(cfg, lambda y: power_sum(y, 2), 30_000, seed=3)
    assert est.ess == pytest.approx(30_000)
    assert abs(z_score(est.value, est.se, 0.5, 0.0)) < 3.0


def test_tilted_expect_constant_function_is_exact():
    cfg = PDConfig(theta=1.0, tilt=(1.0,))
    est = tilted_expect(cfg, lambda y: np.ones(y.shape[0]), 5_000, seed=4)
    assert est.value == pytest.approx(1.0, abs=1e-14)
    assert est.se == pytest.approx(0.0, abs=1e-14)


def test_tilted_expect_split_seed_self_consistency():
    cfg = PDConfig(theta=1.0, tilt=(1.0,))
    a = tilted_expect(cfg, lambda y: power_sum(y, 2), 40_000, seed=5)
    b = tilted_expect(cfg, lambda y: power_sum(y, 2), 40_000, seed=6)
    assert abs(z_score(a.value, a.se, b.value, b.se)) < 3.0


def test_tilted_expect_heavy_tilt_raises():
    cfg = PDConfig(theta=1.0, tilt=(-30.0,))
    with pytest.raises(HeavyTiltError):
        tilted_expect(cfg, lambda y: power_sum(y, 2), 2_000, seed=7)


# ---------------------------------------------------------------------------
# schedules and the convergence experiment
# ---------------------------------------------------------------------------

def test_make_schedule_flat_members_are_valid():
    sched = make_schedule(2.0, (0.5,), d_list=[10, 40, 160])
    assert sched.d_list == (10, 40, 160)
    for d in sched.d_list:
        a = sched.vectors[d]
        assert a.size == d
        assert a[0] == 0.5
        assert a[1:].sum() == pytest.approx(2.0)
        assert np.all(np.cumsum(a[::-1])[::-1][1:] > 0.0)
    # largest tail entry shrinks along the ladder
    tails = [np.abs(sched.vectors[d][1:]).max() for d in sched.d_list]
    assert np.all(np.diff(tails) < 0.0)


def test_make_schedule_geometric_tail():
    sched = make_schedule(1.5, (), d_list=[8, 32], tail="geometric")
    for d in sched.d_list:
        assert sched.vectors[d].sum() == pytest.approx(1.5)


def test_make_schedule_rejects_boundary_tilt():
    with pytest.raises(ValueError):
        make_schedule(1.0, (0.3, -1.0), d_list=[10])   # tail sum equals -theta


def test_convergence_experiment_plain_pd():
    theta = 2.0
    sched = make_schedule(theta, (), d_list=[10, 40, 320])
    cfg = PDConfig(theta=theta, tilt=())
    report = convergence_experiment(
        sched, cfg, {"phi2": lambda y: power_sum(y, 2)}, n=40_000, seed=8,
    )
    rows = sorted(report.rows, key=lambda r: r.d)
    assert rows[0].tilted_limit == pytest.approx(1.0 / (1.0 + theta), abs=3e-3)
    gaps = [r.gap for r in rows]
    assert np.all(np.diff(gaps) < 0.0)
    assert report.passed


def test_degenerate_tilt_concentrates_on_single_atom():
    # tail mass slightly above theta, one unit of theta removed at rank 2:
    # the stationary laws drift toward a single dominant weight as d grows
    theta = 1.0
    means = []
    for d in (20, 80, 320):
        surplus = theta * (1.0 + 1.0 / math.sqrt(d))
        a = np.full(d, surplus / (d - 1))
        a[0] = 0.0
        a[1] -= theta
        params = ModelParams(a=a, gamma=np.zeros(d))
        draws = sample_invariant(params, 20_000, seed=100 + d, kind="ranked").draws
        means.append(draws[:, 0].mean())
    assert np.all(np.diff(means) > 0.0)
    assert means[-1] > 0.9


# ---------------------------------------------------------------------------
# limiting growth rate
# ---------------------------------------------------------------------------

def test_limit_growth_rate_preconditions():
    with pytest.raises(ValueError):
        limit_growth_rate(PDConfig(theta=1.0, tilt=(0.0,)), sigma=1.0,
                          n_top=1, n=1000, seed=9)
    with pytest.raises(ValueError):
        limit_growth_rate(PDConfig(theta=3.0, tilt=(0.0, 0.0)), sigma=1.0,
                          n_top=1, n=1000, seed=9)   # n_top mismatch


def test_limit_growth_rate_untilted_form():
    theta, sigma = 3.0, 1.2
    cfg = PDConfig(theta=theta, tilt=(0.0,))
    est = limit_growth_rate(cfg, sigma=sigma, n_top=1, n=60_000, seed=10)
    # direct reduction: (sigma^2/8) theta^2 (E[1/(1 - Y_1)] - 1)
    plain = tilted_expect(cfg, lambda y: 1.0 / (1.0 - y[:, 0]), 60_000, seed=10)
    expected = sigma ** 2 / 8.0 * theta ** 2 * (plain.value - 1.0)
    assert est.value == pytest.approx(expected, rel=1e-12)
    assert est.se > 0.0


def test_finite_d_growth_rates_approach_limit():
    # cross-module consistency: the finite-d robust rate along a flat
    # schedule approaches the tilted-limit value as d grows
    theta, n_top = 3.0, 1
    cfg = PDConfig(theta=theta, tilt=(0.0,))
    limit = limit_growth_rate(cfg, sigma=1.0, n_top=n_top, n=200_000, seed=11)
    sched = make_schedule(theta, (0.0,), d_list=[12, 48, 192])
    gaps = []
    for d in sched.d_list:
        report = robust_growth_rate(sched.params_for(d), n_top, method="mc",
                                    n=200_000, seed=11)
        gaps.append(abs(report.lambda_hat - limit.value))
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 0.05 * abs(limit.value) + 3.0 * limit.se
