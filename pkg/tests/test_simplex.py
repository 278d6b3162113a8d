import math

import numpy as np
import pytest
from scipy import special

from openjacobi import (
    DivergentIntegralError,
    ModelParams,
    SimplexError,
    as_ranked,
    as_simplex,
    covariation_form,
    diffusion_c,
    diffusion_kappa,
    lambda_sum,
    monomial_integral,
    monomial_integral_finite,
    name_of,
    ordered_simplex_integral,
    rank_of,
    ranking_order,
    ranks_of_names,
    tail_sum,
    validate_params,
)


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def test_as_simplex_renormalizes_small_deviation():
    x = as_simplex([0.5, 0.3, 0.2 + 5e-10])
    assert abs(x.sum() - 1.0) <= 1e-12


def test_as_simplex_rejects_large_deviation():
    with pytest.raises(SimplexError):
        as_simplex([0.5, 0.3, 0.3])


def test_as_simplex_rejects_out_of_range_entries():
    with pytest.raises(SimplexError):
        as_simplex([1.2, -0.2])
    with pytest.raises(SimplexError):
        as_simplex([0.5])


def test_as_ranked_requires_monotone():
    as_ranked([0.5, 0.3, 0.2])
    with pytest.raises(SimplexError):
        as_ranked([0.3, 0.5, 0.2])


# ---------------------------------------------------------------------------
# ranks and names
# ---------------------------------------------------------------------------

def test_rank_of_examples():
    assert rank_of([0.2, 0.5, 0.3], 1) == 3
    assert rank_of([0.4, 0.4, 0.2], 2) == 2      # lexicographic tie-break
    assert rank_of([1 / 3, 1 / 3, 1 / 3], 3) == 3


def test_name_of_examples():
    assert name_of([0.2, 0.5, 0.3], 1) == 2
    assert name_of([0.4, 0.4, 0.2], 1) == 1


def test_rank_name_round_trip_including_ties():
    rng = np.random.default_rng(11)
    for _ in range(200):
        d = rng.integers(2, 9)
        x = rng.dirichlet(np.ones(d))
        if rng.random() < 0.5 and d >= 3:       # force a tie
            x[1] = x[0]
            x /= x.sum()
        for i in range(1, d + 1):
            assert name_of(x, rank_of(x, i)) == i


def test_rank_indices_out_of_range():
    with pytest.raises(IndexError):
        rank_of([0.5, 0.5], 3)
    with pytest.raises(IndexError):
        name_of([0.5, 0.5], 0)


def test_order_and_ranks_are_inverse_batched():
    rng = np.random.default_rng(3)
    x = rng.dirichlet(np.ones(5), size=(4, 7))
    order = ranking_order(x)
    ranks = ranks_of_names(x)
    assert np.array_equal(np.take_along_axis(ranks, order, axis=-1),
                          np.broadcast_to(np.arange(5), order.shape))


# ---------------------------------------------------------------------------
# tail sums / index sets
# ---------------------------------------------------------------------------

def test_tail_sum_examples():
    assert tail_sum([1.0, 2.0, 3.0], 2) == 5.0
    assert tail_sum([0.0, -1 / 3, 1 / 2], 2) == pytest.approx(1 / 6, abs=1e-15)
    x = as_simplex([0.2, 0.5, 0.3])
    assert tail_sum(x, 1) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(IndexError):
        tail_sum([1.0, 2.0], 3)


def test_lambda_sum_examples():
    x = [0.2, 0.5, 0.3]
    assert lambda_sum(x, []) == 0.0
    assert lambda_sum(x, [1, 2, 3]) == pytest.approx(1.0)
    assert lambda_sum(x, [1, 3]) == pytest.approx(0.5)
    with pytest.raises(IndexError):
        lambda_sum(x, [4])


# ---------------------------------------------------------------------------
# parameter validation
# ---------------------------------------------------------------------------

def test_validate_params_mixed_example():
    p = ModelParams(a=[0.0, -1 / 3, 1 / 2], gamma=[1 / 2, 1 / 3, 1 / 4])
    report = validate_params(p)
    assert report.valid
    assert np.allclose(report.margins, [0.75, 0.75])
    assert report.first_violation is None


def test_validate_params_symmetric_gamma():
    for g, valid in [(0.4, True), (0.0, False), (-0.1, False)]:
        p = ModelParams(a=np.zeros(4), gamma=np.full(4, g) if g else np.zeros(4))
        assert validate_params(p).valid is valid


def test_validate_params_growth_thresholds():
    p = ModelParams(a=np.zeros(5), gamma=np.full(5, 0.5))
    report = validate_params(p, open_market_size=2)
    # margins for k = 2, 3 are 4*0.5 - 1 and 3*0.5 - 1
    assert np.allclose(report.growth_margins, [1.0, 0.5])
    assert report.growth_ok


# ---------------------------------------------------------------------------
# diffusion matrices
# ---------------------------------------------------------------------------

def test_diffusion_c_formula_entries():
    c = diffusion_c([0.5, 0.3, 0.2], sigma=1.0)
    assert c[0, 0] == pytest.approx(0.25)
    assert c[0, 1] == pytest.approx(-0.15)
    assert np.allclose(c, c.T)


def test_diffusion_c_rows_sum_to_zero_and_psd():
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.dirichlet(np.ones(4))
        c = diffusion_c(x, sigma=1.3)
        assert np.abs(c.sum(axis=1)).max() < 1e-14
        assert np.linalg.eigvalsh(c).min() > -1e-12


def test_diffusion_c_vertex_is_zero():
    c = diffusion_c([1.0, 0.0, 0.0], sigma=2.0)
    assert np.abs(c).max() == 0.0


def test_diffusion_kappa_mirrors_c():
    y = [0.5, 0.3, 0.2]
    assert np.allclose(diffusion_kappa(y, 1.7), diffusion_c(y, 1.7))
    assert np.abs(diffusion_kappa(y, 1.7).sum(axis=1)).max() < 1e-14


def test_covariation_form_matches_matrix():
    rng = np.random.default_rng(9)
    for _ in range(30):
        d = rng.integers(2, 7)
        x = rng.dirichlet(np.ones(d))
        u = rng.normal(size=d)
        v = rng.normal(size=d)
        sigma = rng.uniform(0.5, 2.0)
        direct = u @ diffusion_c(x, sigma) @ v
        assert covariation_form(u, v, x, sigma) == pytest.approx(direct, abs=1e-12)


# ---------------------------------------------------------------------------
# monomial integrals over ordered shells
# ---------------------------------------------------------------------------

def test_monomial_integral_finite_examples():
    assert monomial_integral_finite([1.0, 1.0, 1.0])
    assert not monomial_integral_finite([5.0, -1.0, 0.5])
    assert monomial_integral_finite([-1e6, -1.0, 1.5])   # tails 1/2 and 3/2


def test_monomial_integral_frozen_values():
    assert monomial_integral([1.0, 1.0]) == pytest.approx(0.5, rel=1e-10)
    assert monomial_integral([1.0, 2.0]) == pytest.approx(0.125, rel=1e-10)
    # ordered cell of the d = 3 simplex has measure (1/2) / 3!
    assert monomial_integral([1.0, 1.0, 1.0]) == pytest.approx(1 / 12, rel=1e-10)


@pytest.mark.parametrize("d,beta", [(2, 1.5), (3, 1.5), (3, 0.7), (4, 1.0), (4, 2.0)])
def test_monomial_integral_symmetric_oracle(d, beta):
    # symmetric case: the full-simplex Dirichlet integral split over d! cells
    oracle = special.gamma(beta) ** d / (math.factorial(d) * special.gamma(d * beta))
    assert monomial_integral([beta] * d) == pytest.approx(oracle, rel=1e-8)


def test_monomial_integral_asymmetric_d2_oracle():
    # direct reduction to an incomplete beta integral over [0, 1/2]
    b1, b2 = 2.3, 0.6
    oracle = special.betainc(b2, b1, 0.5) * special.beta(b2, b1)
    assert monomial_integral([b1, b2]) == pytest.approx(oracle, rel=1e-8)


def test_monomial_integral_homogeneity():
    b = np.array([1.2, 0.8, 1.5])
    lam = 2.7
    ratio = monomial_integral(b, lam, lam * 0.05) / monomial_integral(b, 1.0, 0.05)
    assert ratio == pytest.approx(lam ** (b.sum() - 1.0), rel=1e-8)


@pytest.mark.parametrize("b", [
    [0.5, 0.6], [2.0, 0.1], [1.0, 0.5, 0.7], [3.0, -1.0, 2.0],
    [0.4, 0.4, 0.4, 0.4], [2.0, -0.5, 1.0, 0.6],
])
def test_monomial_integral_converges_when_finite(b):
    assert monomial_integral_finite(b)
    coarse = monomial_integral(b, rel_tol=1e-4)
    fine = monomial_integral(b, rel_tol=1e-7)
    assert fine == pytest.approx(coarse, rel=1e-3)


@pytest.mark.parametrize("b", [
    [1.0, 0.0], [1.0, -0.2], [1.0, 1.0, -1.0], [0.3, -0.2, 0.1],
    [1.0, 1.0, 1.0, -1.0],
])
def test_monomial_integral_divergence_detected_analytically(b):
    assert not monomial_integral_finite(b)
    with pytest.raises(DivergentIntegralError):
        monomial_integral(b)


def test_monomial_integral_positive_beta_always_finite():
    value = monomial_integral([1.0, -2.0], beta=0.05)
    assert math.isfinite(value) and value > 0.0


def test_ordered_simplex_integral_measures():
    assert ordered_simplex_integral(lambda y: 1.0, 2) == pytest.approx(0.5, rel=1e-9)
    assert ordered_simplex_integral(lambda y: 1.0, 3) == pytest.approx(1 / 12, rel=1e-8)


def test_ordered_simplex_integral_matches_monomial_route():
    b = np.array([1.5, 1.2, 0.8])

    def fn(y):
        return float(np.prod(y ** (b - 1.0)))

    assert ordered_simplex_integral(fn, 3) == pytest.approx(
        monomial_integral(b), rel=1e-6
    )
