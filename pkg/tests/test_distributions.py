import math

import numpy as np
import pytest
from scipy import integrate, stats

from bft.distributions import (
    GaussianSpec,
    RandomStream,
    Region,
    StudentTSpec,
    condition_gaussian,
    condition_student,
    invgamma_cdf,
    invgamma_less_prob,
    invgamma_logpdf,
    invgamma_ppf,
    mvn_logpdf,
    mvn_pdf,
    mvn_region_prob,
    mvt_logpdf,
    mvt_region_prob,
    psd_factor,
    sample_inverse_wishart,
    sample_invgamma,
    sample_uniform_corr,
)


def std_normal(dim=1):
    return GaussianSpec(np.zeros(dim), np.eye(dim))


# ---------------------------------------------------------------------------
# densities


def test_standard_normal_density_at_zero():
    np.testing.assert_allclose(mvn_pdf(np.zeros(1), std_normal()),
                               0.3989422804014327, rtol=1e-12)


def test_bivariate_density_at_mean():
    np.testing.assert_allclose(mvn_pdf(np.zeros(2), std_normal(2)),
                               1.0 / (2 * math.pi), rtol=1e-12)


def test_density_shift_invariance():
    g = GaussianSpec(np.array([3.0, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
    x = np.array([2.5, -0.2])
    shifted = GaussianSpec(g.mean + 1.0, g.cov)
    np.testing.assert_allclose(mvn_logpdf(x, g), mvn_logpdf(x + 1.0, shifted),
                               rtol=1e-12)


def test_density_integrates_to_one():
    g = GaussianSpec(np.array([0.5]), np.array([[0.7]]))
    total, _ = integrate.quad(lambda x: mvn_pdf(np.array([x]), g), -30, 30)
    np.testing.assert_allclose(total, 1.0, rtol=1e-9)


def test_mvt_density_matches_scipy():
    loc = np.array([0.3, -0.7])
    scale = np.array([[1.4, 0.5], [0.5, 0.9]])
    t = StudentTSpec(loc, scale, 4.0)
    ref = stats.multivariate_t(loc, scale, df=4)
    for x in ([0.0, 0.0], [1.0, -2.0], [3.3, 0.1]):
        np.testing.assert_allclose(mvt_logpdf(np.array(x), t),
                                   ref.logpdf(np.array(x)), rtol=1e-10)


def test_mvt_df_limit_is_gaussian():
    t = StudentTSpec(np.zeros(2), np.eye(2), 1e8)
    x = np.array([0.7, -0.4])
    np.testing.assert_allclose(mvt_logpdf(x, t), mvn_logpdf(x, std_normal(2)),
                               atol=1e-6)


def test_cauchy_density_at_center():
    # df=1 scale s has density 1/(pi*s) at its center
    for s in (0.5, 1.633089):
        t = StudentTSpec(np.zeros(1), np.array([[s * s]]), 1.0)
        np.testing.assert_allclose(math.exp(mvt_logpdf(np.zeros(1), t)),
                                   1.0 / (math.pi * s), rtol=1e-12)


# ---------------------------------------------------------------------------
# inverse gamma


def test_invgamma_against_scipy():
    for a, c in [(0.5, 1.0), (8.0, 124.16), (2.5, 3.0)]:
        xs = np.array([0.3, 1.0, 5.0, 40.0])
        np.testing.assert_allclose(
            [invgamma_logpdf(x, a, c) for x in xs],
            stats.invgamma.logpdf(xs, a, scale=c), rtol=1e-10)
        np.testing.assert_allclose(invgamma_cdf(xs, a, c),
                                   stats.invgamma.cdf(xs, a, scale=c), rtol=1e-10)


def test_invgamma_cdf_at_scale_shape_one():
    # with shape 1, P(X <= c) = exp(-1)
    np.testing.assert_allclose(invgamma_cdf(np.array(2.0), 1.0, 2.0),
                               math.exp(-1), rtol=1e-12)


def test_invgamma_ppf_round_trip():
    for a, c in [(1.0, 2.0), (8.0, 124.0)]:
        for q in (0.05, 0.5, 0.95):
            x = invgamma_ppf(q, a, c)
            np.testing.assert_allclose(invgamma_cdf(np.array(x), a, c), q,
                                       atol=1e-10)


def test_invgamma_less_prob_symmetric_case():
    np.testing.assert_allclose(invgamma_less_prob(3.0, 5.0, 3.0, 5.0), 0.5,
                               rtol=1e-12)


def test_invgamma_less_prob_beta_identity():
    # against brute-force quadrature (on the gamma scale to tame the tail)
    a1, c1, a2, c2 = 1.0, 2.0, 0.5, 1.0
    # P(c1/W1 < c2/W2) = E[P(W1 > c1 W2 / c2 | W2)]
    f = lambda w2: stats.gamma.pdf(w2, a2) * stats.gamma.sf(c1 * w2 / c2, a1)
    ref = integrate.quad(f, 0, np.inf, limit=400)[0]
    np.testing.assert_allclose(invgamma_less_prob(a1, c1, a2, c2), ref, atol=1e-9)
    # and the closed form seen in the two-cluster case: sqrt(1/3)
    np.testing.assert_allclose(invgamma_less_prob(1.0, 2.0, 0.5, 1.0),
                               1.0 / math.sqrt(3.0), rtol=1e-12)


def test_sample_invgamma_moments():
    rng = np.random.default_rng(0)
    draws = sample_invgamma(8.0, 124.16, rng, 200_000)
    np.testing.assert_allclose(draws.mean(), 124.16 / 7.0, rtol=0.01)


# ---------------------------------------------------------------------------
# region probabilities


def test_orthant_independent():
    region = Region(np.eye(2), np.zeros(2))
    p, se = mvn_region_prob(region, std_normal(2))
    np.testing.assert_allclose(p, 0.25, atol=1e-9)
    assert se == 0.0


def test_orthant_correlated_third():
    # equicorrelated rho = 1/2 orthant probability is exactly 1/3
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    region = Region(np.eye(2), np.zeros(2))
    p, _ = mvn_region_prob(region, GaussianSpec(np.zeros(2), cov))
    np.testing.assert_allclose(p, 1.0 / 3.0, atol=1e-7)


def test_half_space_exact():
    region = Region(np.array([[-1.0]]), np.array([-5.0]))  # x < 5
    g = GaussianSpec(np.array([4.392857]), np.array([[0.3142887462470234 ** 2]]))
    p, se = mvn_region_prob(region, g)
    np.testing.assert_allclose(p, stats.norm.cdf(5, 4.392857, 0.3142887462470234),
                               rtol=1e-10)
    assert se == 0.0


def test_complementary_regions_sum_to_one_mc():
    rng_cov = np.random.default_rng(3)
    A = rng_cov.standard_normal((3, 3))
    g = GaussianSpec(rng_cov.standard_normal(3), A @ A.T + np.eye(3))
    R = rng_cov.standard_normal((3, 3))
    b = rng_cov.standard_normal(3) * 0.5
    p1, se1 = mvn_region_prob(Region(R, b), g, RandomStream(5, 1), 200_000)
    # complement of an intersection is not a cone; compare the first row only
    p2, se2 = mvn_region_prob(Region(-R[:1], -b[:1]), g, RandomStream(5, 2), 200_000)
    p1_row, _ = mvn_region_prob(Region(R[:1], b[:1]), g, RandomStream(5, 3), 200_000)
    assert abs(p1_row + p2 - 1.0) < 1e-9  # both are exact 1-D evaluations


def test_mc_region_matches_exact_bivariate():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    g = GaussianSpec(np.array([0.2, -0.1]), cov)
    # three rows force the Monte Carlo path
    R = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    b = np.array([0.0, 0.0, 0.0])
    p_mc, se = mvn_region_prob(Region(R, b), g, RandomStream(7, 0), 400_000)
    # the third row is implied by the first two, so exact quadrature applies
    p_exact, _ = mvn_region_prob(Region(R[:2], b[:2]), g)
    assert abs(p_mc - p_exact) < 4 * se + 1e-4


def test_infeasible_region_is_zero():
    region = Region(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))  # x>1 & x<-1
    p, se = mvn_region_prob(region, std_normal())
    assert p == 0.0 and se == 0.0


def test_zero_rows_resolved_without_sampling():
    # 0*x > -1 always holds; 0*x > 1 never holds
    region = Region(np.array([[0.0]]), np.array([-1.0]))
    assert mvn_region_prob(region, std_normal()) == (1.0, 0.0)
    region = Region(np.array([[0.0]]), np.array([1.0]))
    assert mvn_region_prob(region, std_normal()) == (0.0, 0.0)


def test_mc_path_requires_stream():
    R = np.array([[1.0, 0.2, 0.1], [0.3, 1.0, -1.0], [0.2, -0.4, 1.0]])
    with pytest.raises(ValueError, match="RandomStream"):
        mvn_region_prob(Region(R, np.zeros(3)), std_normal(3))


def test_t_half_space_matches_scipy():
    t = StudentTSpec(np.array([1.0]), np.array([[4.0]]), 5.0)
    region = Region(np.array([[1.0]]), np.array([2.0]))  # x > 2
    p, se = mvt_region_prob(region, t)
    np.testing.assert_allclose(p, stats.t.sf(2.0, 5.0, loc=1.0, scale=2.0),
                               rtol=1e-10)
    assert se == 0.0


def test_t_region_mc_matches_normal_for_large_df():
    cov = np.array([[1.0, 0.4], [0.4, 1.0]])
    t = StudentTSpec(np.zeros(2), cov, 5e5)
    region = Region(np.eye(2), np.zeros(2))
    p_t, se = mvt_region_prob(region, t, RandomStream(2, 0), 400_000)
    p_n, _ = mvn_region_prob(region, GaussianSpec(np.zeros(2), cov))
    assert abs(p_t - p_n) < 4 * se + 1e-4


def test_t_orthant_small_df_vs_scipy_mc():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    t = StudentTSpec(np.zeros(2), cov, 3.0)
    p, se = mvt_region_prob(Region(np.eye(2), np.zeros(2)), t, RandomStream(4, 0),
                            400_000)
    # centrally symmetric scale mixture keeps the Gaussian orthant value
    np.testing.assert_allclose(p, 1.0 / 3.0, atol=4 * se + 1e-4)


# ---------------------------------------------------------------------------
# conditioning and factorization


def test_condition_gaussian_formula():
    cov = np.array([[2.0, 0.5, 0.1], [0.5, 1.0, 0.3], [0.1, 0.3, 1.5]])
    g = GaussianSpec(np.array([1.0, -1.0, 0.5]), cov)
    A = np.array([[1.0, 0.0, 0.0]])
    r = np.array([2.0])
    mean_c, cov_c = condition_gaussian(g, A, r)
    # classic partitioned formulas conditioning on x0 = 2
    s = cov[0, 0]
    expect_mean = g.mean + cov[:, 0] * (2.0 - 1.0) / s
    expect_cov = cov - np.outer(cov[:, 0], cov[0, :]) / s
    np.testing.assert_allclose(mean_c, expect_mean, atol=1e-12)
    np.testing.assert_allclose(cov_c, expect_cov, atol=1e-12)


def test_condition_student_increases_df():
    t = StudentTSpec(np.zeros(3), np.eye(3), 5.0)
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    loc_c, scale_c, df_c = condition_student(t, A, np.zeros(2))
    assert df_c == 7.0
    np.testing.assert_allclose(loc_c, np.zeros(3), atol=1e-12)


def test_psd_factor_reconstructs():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((4, 2))
    cov = M @ M.T  # rank 2
    N = psd_factor(cov)
    assert N.shape == (4, 2)
    np.testing.assert_allclose(N @ N.T, cov, atol=1e-10)


# ---------------------------------------------------------------------------
# samplers


def test_random_stream_reproducible_and_distinct():
    a = RandomStream(123, 1).generator().standard_normal(5)
    b = RandomStream(123, 1).generator().standard_normal(5)
    c = RandomStream(123, 2).generator().standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    d1 = RandomStream(123, 1).child(3)
    d2 = RandomStream(123, 1).child(4)
    assert d1.stream_id != d2.stream_id


def test_inverse_wishart_dim_one_is_invgamma():
    # IW(c, df) in one dimension is IG(df/2, c/2)
    draws = sample_inverse_wishart(np.array([[6.0]]), 10.0, RandomStream(1, 0),
                                   size=100_000)[:, 0, 0]
    np.testing.assert_allclose(draws.mean(), (6.0 / 2) / (10.0 / 2 - 1), rtol=0.02)
    ref = stats.invgamma.rvs(5.0, scale=3.0, size=100_000,
                             random_state=np.random.default_rng(2))
    ks = stats.ks_2samp(draws, ref)
    assert ks.pvalue > 0.001


def test_inverse_wishart_mean():
    scale = np.array([[2.0, 0.3], [0.3, 1.0]])
    draws = sample_inverse_wishart(scale, 9.0, RandomStream(3, 0), size=100_000)
    expect = scale / (9.0 - 2 - 1)
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - expect) < 3 * se + 1e-3)


def test_inverse_wishart_spd_and_df_guard():
    draws = sample_inverse_wishart(np.eye(3), 4.0, RandomStream(4, 0), size=200)
    for d in draws[:20]:
        np.testing.assert_allclose(d, d.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(d) > 0)
    with pytest.raises(ValueError):
        sample_inverse_wishart(np.eye(3), 2.0, RandomStream(4, 1))


def test_uniform_corr_dim_two_is_uniform():
    mats = sample_uniform_corr(2, RandomStream(5, 0), size=50_000)
    r = mats[:, 1, 0]
    ks = stats.kstest(r, stats.uniform(loc=-1, scale=2).cdf)
    assert ks.pvalue > 0.01


def test_uniform_corr_dim_three_marginal():
    # each off-diagonal of a uniform 3x3 correlation matrix is Beta(3/2, 3/2)
    # rescaled to (-1, 1): mean 0, variance 1/4
    mats = sample_uniform_corr(3, RandomStream(6, 0), size=100_000)
    for i, j in [(1, 0), (2, 0), (2, 1)]:
        r = mats[:, i, j]
        assert abs(r.mean()) < 4 * r.std() / math.sqrt(r.size)
        np.testing.assert_allclose(r.var(), 0.25, atol=0.01)


def test_uniform_corr_dim_three_matches_rejection_oracle():
    """Onion draws agree with brute-force rejection over the PD cube."""
    rng = np.random.default_rng(12)
    cand = rng.uniform(-1, 1, size=(200_000, 3))
    # PD condition for a 3x3 correlation matrix with entries (r12, r13, r23)
    r12, r13, r23 = cand.T
    keep = 1 + 2 * r12 * r13 * r23 - r12 ** 2 - r13 ** 2 - r23 ** 2 > 0
    ref = cand[keep]
    mats = sample_uniform_corr(3, RandomStream(8, 0), size=100_000)
    onion = np.column_stack([mats[:, 1, 0], mats[:, 2, 0], mats[:, 2, 1]])
    for k in range(3):
        se = math.sqrt(ref[:, k].var() / len(ref) + onion[:, k].var() / len(onion))
        assert abs(ref[:, k].mean() - onion[:, k].mean()) < 4 * se + 1e-3
        se2 = math.sqrt(ref[:, k].var() ** 2 * 2 / len(ref)
                        + onion[:, k].var() ** 2 * 2 / len(onion))
        assert abs(ref[:, k].var() - onion[:, k].var()) < 5 * se2 + 2e-3
    # orderings: P(r12 > r13 > r23) should agree too
    p_ref = np.mean((ref[:, 0] > ref[:, 1]) & (ref[:, 1] > ref[:, 2]))
    p_onion = np.mean((onion[:, 0] > onion[:, 1]) & (onion[:, 1] > onion[:, 2]))
    se = math.sqrt(p_ref * (1 - p_ref) / len(ref) + p_onion * (1 - p_onion) / len(onion))
    assert abs(p_ref - p_onion) < 4 * se + 1e-3


def test_uniform_corr_valid_matrices():
    mats = sample_uniform_corr(4, RandomStream(7, 0), size=500)
    np.testing.assert_allclose(mats.diagonal(axis1=1, axis2=2), 1.0, atol=1e-10)
    for m in mats[:50]:
        assert np.min(np.linalg.eigvalsh(m)) > 0
        np.testing.assert_allclose(m, m.T, atol=1e-12)
    with pytest.raises(ValueError):
        sample_uniform_corr(1, RandomStream(7, 1))


def test_region_determinism():
    cov = np.eye(3)
    R = np.array([[1.0, -0.5, 0.2], [0.4, 1.0, -1.0], [-0.3, 0.8, 1.0]])
    region = Region(R, np.zeros(3))
    g = GaussianSpec(np.zeros(3), cov)
    p1 = mvn_region_prob(region, g, RandomStream(42, 7), 50_000)
    p2 = mvn_region_prob(region, g, RandomStream(42, 7), 50_000)
    assert p1 == p2
