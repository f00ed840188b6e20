import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import random_spd

from latentfolio import allocation as al
from latentfolio.clustering import ClusterAssignment

seeds = st.integers(0, 2**31 - 1)


def _assign(labels):
    labels = np.asarray(labels)
    return ClusterAssignment(labels, int(labels.max()) + 1)


def test_covariance_examples(rng):
    x = rng.normal(size=200)
    C = al.estimate_covariance(np.c_[x, 3 * x])
    assert C[0, 1] == pytest.approx(np.std(x, ddof=1) * np.std(3 * x, ddof=1), rel=1e-12)
    assert al.estimate_covariance(x[:, None]).shape == (1, 1)
    big = al.estimate_covariance(rng.normal(size=(10_000, 2)))
    # standard error of a sample covariance of independent unit normals is ~1/sqrt(T)
    assert abs(big[0, 1]) < 3 / np.sqrt(10_000)


@pytest.mark.parametrize(
    "diag, expected", [((0.01, 0.03), (0.75, 0.25)), ((2.0, 2.0, 2.0), (1 / 3,) * 3), ((1, 2, 4), (4 / 7, 2 / 7, 1 / 7))]
)
def test_inverse_variance_examples(diag, expected):
    np.testing.assert_allclose(al.inverse_variance_weights(np.diag(diag)), expected, rtol=1e-12)


def test_risk_contribution_examples(rng):
    np.testing.assert_allclose(al.risk_contributions(np.full(4, 0.25), np.eye(4)), 0.25)
    np.testing.assert_allclose(al.risk_contributions([0, 1.0, 0], random_spd(rng, 3)), [0, 1, 0])


@given(seeds, st.integers(2, 10))
@settings(max_examples=100, deadline=None)
def test_risk_contributions_sum_to_one(seed, d):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, d)
    assert al.risk_contributions(a, random_spd(rng, d)).sum() == pytest.approx(1.0, abs=1e-12)


def test_budget_indicator_limit():
    b = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(al.risk_budgeting_weights(np.diag([0.04, 0.01, 0.09]), b), [1, 0, 0])


def test_diagonal_budget_closed_form():
    b = np.array([0.5, 0.3, 0.2])
    sd = np.array([0.1, 0.2, 0.3])
    a = al.risk_budgeting_weights(np.diag(sd**2), b)
    ref = np.sqrt(b) / sd
    np.testing.assert_allclose(a, ref / ref.sum(), atol=1e-8)


@given(seeds, st.integers(2, 10))
@settings(max_examples=100, deadline=None)
def test_risk_budget_residual(seed, d):
    rng = np.random.default_rng(seed)
    cov = random_spd(rng, d)
    b = rng.dirichlet(np.ones(d))
    a = al.risk_budgeting_weights(cov, b)
    assert np.max(np.abs(al.risk_contributions(a, cov) - b)) <= 1e-8


def test_markowitz_examples(rng):
    np.testing.assert_allclose(al.markowitz_weights(np.diag([1.0, 2.0, 4.0])), (4 / 7, 2 / 7, 1 / 7), atol=1e-12)
    s1, s2 = 0.1, 0.2
    cov = np.array([[s1 * s1, s1 * s2], [s1 * s2, s2 * s2]])
    np.testing.assert_allclose(al.markowitz_weights(cov), [1.0, 0.0], atol=1e-12)


@given(seeds, st.integers(2, 10))
@settings(max_examples=100, deadline=None)
def test_min_variance_bounds(seed, d):
    rng = np.random.default_rng(seed)
    cov = random_spd(rng, d)
    v = lambda a: al.portfolio_variance(a, cov)  # noqa: E731
    mv = v(al.markowitz_weights(cov))
    # the inverse-variance vs equal-weight ordering only holds for diagonal matrices
    assert mv <= v(al.inverse_variance_weights(cov)) + 1e-14
    assert mv <= v(al.equal_weights(d)) + 1e-14
    D = np.diag(np.diag(cov))
    assert al.portfolio_variance(al.inverse_variance_weights(D), D) <= al.portfolio_variance(al.equal_weights(d), D) + 1e-15


def test_hrp_two_uncorrelated_is_inverse_variance():
    cov = np.diag([0.04, 0.01])
    np.testing.assert_allclose(al.hrp_weights(cov), al.inverse_variance_weights(cov), atol=1e-15)


def test_hrp_duplicates_split_equally():
    cov = np.full((2, 2), 0.02)
    np.testing.assert_allclose(al.hrp_weights(cov), [0.5, 0.5])


def test_hrp_first_bisection_separates_blocks():
    blk = np.array([[1.0, 0.8], [0.8, 1.0]])
    corr = np.block([[blk, np.zeros((2, 2))], [np.zeros((2, 2)), blk]])
    perm = [0, 2, 1, 3]
    corr = corr[np.ix_(perm, perm)]
    order = al.quasi_diag_order(corr, corr)
    assert {frozenset(order[:2]), frozenset(order[2:])} == {frozenset({0, 2}), frozenset({1, 3})}


@given(seeds, st.integers(2, 8), st.data())
@settings(max_examples=100, deadline=None)
def test_hrp_permutation_invariant(seed, d, data):
    rng = np.random.default_rng(seed)
    cov = random_spd(rng, d)
    perm = np.array(data.draw(st.permutations(range(d))))
    w = al.hrp_weights(cov)
    wp = al.hrp_weights(cov[np.ix_(perm, perm)])
    np.testing.assert_allclose(wp, w[perm], atol=1e-12)


def test_hcaa_trees():
    blk = np.array([[1.0, 0.8], [0.8, 1.0]])
    balanced = np.block([[blk, 0.1 * np.ones((2, 2))], [0.1 * np.ones((2, 2)), blk]])
    np.testing.assert_allclose(al.hcaa_weights(balanced), 0.25)
    caterpillar = np.array([[1.0, 0.9, 0.2], [0.9, 1.0, 0.2], [0.2, 0.2, 1.0]])
    np.testing.assert_allclose(sorted(al.hcaa_weights(caterpillar)), [0.25, 0.25, 0.5])


def test_kmaa_planted(rng):
    f = rng.normal(size=(300, 2))
    X = f[:, [0, 0, 1, 1]] + 0.1 * rng.normal(size=(300, 4))
    np.testing.assert_allclose(al.kmaa_weights(X, 2), 0.25)


def test_cluster_weight_examples():
    np.testing.assert_allclose(al.factor_cluster_weights(np.diag([0.01, 0.04]), _assign([0, 1])), [0.8, 0.2])
    np.testing.assert_allclose(al.factor_cluster_weights(np.diag([0.02] * 4), _assign([0, 0, 1, 1])), [0.5, 0.5])
    w = al.inverse_variance_weights(np.diag([0.01, 0.01]))
    assert w @ np.diag([0.01, 0.01]) @ w == pytest.approx(0.005)
    c = al.factor_cluster_weights(np.diag([0.01, 0.01, 0.01]), _assign([0, 0, 1]))
    np.testing.assert_allclose(c, np.array([1 / 0.005, 1 / 0.01]) / (1 / 0.005 + 1 / 0.01))


def test_aerp_examples(rng):
    cov = random_spd(rng, 4)
    np.testing.assert_allclose(al.aerp_weights(cov, _assign([0, 0, 0, 0])), al.inverse_variance_weights(cov))
    D = np.diag([0.01, 0.02, 0.05])
    np.testing.assert_allclose(al.aerp_weights(D, _assign([0, 1, 2])), al.inverse_variance_weights(D), atol=1e-15)
    blk = np.kron(np.diag([0.01, 0.04]), np.array([[1.0, 0.5], [0.5, 1.0]]))
    a = al.aerp_weights(blk, _assign([0, 0, 1, 1]))
    assert a[0] == pytest.approx(a[1]) and a[2] == pytest.approx(a[3])


def test_aercw_examples(rng):
    cov = random_spd(rng, 3)
    W = np.full((3, 1), 1 / np.sqrt(3))
    np.testing.assert_allclose(al.aercw_weights(cov, _assign([0, 0, 0]), W), al.risk_budgeting_weights(cov), atol=1e-9)
    D = np.diag([0.01, 0.04])
    W = np.array([[np.sqrt(0.8)], [np.sqrt(0.2)]])
    ref = np.array([np.sqrt(0.8) / 0.1, np.sqrt(0.2) / 0.2])
    np.testing.assert_allclose(al.aercw_weights(D, _assign([0, 0]), W), ref / ref.sum(), atol=1e-9)


@pytest.mark.parametrize(
    "labels, expected", [([0, 0, 1, 1], [0.25] * 4), ([0, 1, 1, 1], [0.5, 1 / 6, 1 / 6, 1 / 6]), ([0, 0, 0], [1 / 3] * 3)]
)
def test_aeaa_examples(labels, expected):
    np.testing.assert_allclose(al.aeaa_weights(_assign(labels)), expected)


def test_equal_examples():
    np.testing.assert_allclose(al.equal_weights(4), 0.25)
    np.testing.assert_allclose(al.equal_class_weights(["A", "B", "B", "B"]), [0.5, 1 / 6, 1 / 6, 1 / 6])
    np.testing.assert_allclose(al.equal_class_weights(["A"] * 5), al.equal_weights(5))


def test_unassigned_assets_get_no_weight():
    a = al.aeaa_weights(ClusterAssignment(np.array([0, -1, 1, 1]), 2))
    np.testing.assert_allclose(a, [0.5, 0, 0.25, 0.25])


@pytest.mark.parametrize("d", [2, 3, 5])
def test_singleton_clusters_coincide(d, rng):
    cov = np.diag(rng.uniform(0.01, 0.1, d))
    A = _assign(range(d))
    W = np.eye(d)
    a_rp, a_cw, a_aa = al.aerp_weights(cov, A), al.aercw_weights(cov, A, W), al.aeaa_weights(A)
    np.testing.assert_allclose(a_rp, a_cw, atol=1e-12)
    np.testing.assert_allclose(a_rp, al.inverse_variance_weights(cov), atol=1e-15)
    # aeaa ignores the covariance, so it joins the other two once variances are equal
    np.testing.assert_allclose(a_aa, 1.0 / d)
    same = np.full(d, 0.05)
    np.testing.assert_allclose(al.aerp_weights(np.diag(same), A), a_aa, atol=1e-15)
