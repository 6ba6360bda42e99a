import json
import math

import numpy as np
import pytest

from lfratio import diagnostics as D
from lfratio.estimators import OracleEstimator, RatioEstimator, Standardization
from lfratio.numcore import MlpNetwork, make_rng
from lfratio.posterior import PosteriorEvaluator
from lfratio.tasks import gauss1d_task, get_task, two_moons_task


# --------------------------------------------------------------------------- ratio MSE


@pytest.mark.parametrize("kind", ["NRE", "DNRE"])
def test_ratio_mse_of_exact_oracle_is_zero(kind):
    task = gauss1d_task(0.3)
    grid = np.linspace(-1, 1, 50)[:, None]
    assert D.ratio_mse(OracleEstimator(task, kind), task, grid, seed=1) == 0.0


def test_ratio_mse_of_zero_network():
    """A zero net predicts log r = 0, so the MSE is the mean squared true log ratio."""
    task = gauss1d_task(0.5)
    est = RatioEstimator("DNRE", MlpNetwork.init([3, 4, 1], zeros=True), 1, 1, Standardization.identity(1, 1))
    grid = np.linspace(-1, 1, 30)[:, None]
    xs = task.simulator(np.zeros((30, 1)), make_rng(2))
    truth = ((xs - grid) ** 2 - xs**2)[:, 0] / (2 * 0.25)
    assert D.ratio_mse(est, task, grid, seed=2) == pytest.approx(np.mean(truth**2), rel=1e-12)


def test_ratio_mse_needs_oracle():
    task = get_task("gl")
    task.log_likelihood = None
    with pytest.raises(ValueError, match="exact"):
        D.ratio_mse(None, task, np.zeros((3, 10)))


def test_theta_sweep_spans_range():
    g = D.theta_sweep(np.array([0.3, -1.2, 2.0]), 5)
    np.testing.assert_allclose(g[:, 0], np.linspace(-1.2, 2.0, 5))


# --------------------------------------------------------------------------- C2ST


def test_c2st_identical_distributions():
    rng = make_rng(0)
    acc = D.c2st(rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2)), seed=0)
    assert 0.45 <= acc <= 0.58


def test_c2st_separated_distributions():
    rng = make_rng(1)
    acc = D.c2st(rng.normal(-5, 1, (1000, 2)), rng.normal(5, 1, (1000, 2)), seed=0)
    assert acc >= 0.98


def test_c2st_label_swap():
    rng = make_rng(2)
    a, b = rng.normal(0, 1, (500, 2)), rng.normal(0.5, 1, (500, 2))
    assert abs(D.c2st(a, b, seed=3) - D.c2st(b, a, seed=3)) <= 0.02


def test_c2st_drops_constant_features():
    rng = make_rng(3)
    a = np.column_stack([rng.normal(size=300), np.ones(300)])
    b = np.column_stack([rng.normal(size=300), np.ones(300)])
    res = D.c2st_details(a, b, seed=0)
    assert res.dropped_features == [1]
    assert len(res.fold_scores) == 5


@pytest.mark.parametrize("shapes", [((50, 2), (50, 2)), ((200, 2), (150, 2)), ((200, 2), (200, 3))])
def test_c2st_input_validation(shapes):
    with pytest.raises(ValueError):
        D.c2st(np.zeros(shapes[0]), np.zeros(shapes[1]))


def test_c2st_exact_mh_on_gaussian_linear():
    from lfratio.samplers import LogRatioTarget, rwmh_sample

    task = get_task("gl")
    x = task.simulator(np.full((1, 10), 0.1), make_rng(4))[0]
    chains = rwmh_sample(LogRatioTarget(OracleEstimator(task, "DNRE"), x, task.prior), n_chains=10, n_draws=100, proposal_std=0.07, thin=20, seed=1)
    ref = task.posterior_sample(x, 1000, make_rng(5))
    assert D.c2st(chains.pooled(), ref, seed=0) <= 0.55


# --------------------------------------------------------------------------- expected coverage


def test_hpd_rank_ties_are_randomized():
    ranks = [D.hpd_rank(0.0, np.zeros(10), make_rng(i)) for i in range(2000)]
    counts = np.bincount(ranks, minlength=11)
    assert counts.min() > 100
    assert D.hpd_rank(1.0, np.array([0.0, 2.0, 0.5]), make_rng(0)) == 2


def test_coverage_from_ranks_is_monotone():
    ranks = make_rng(0).integers(0, 101, 300)
    levels = np.linspace(0, 1, 41)
    cov = D.coverage_from_ranks(ranks, 100, levels)
    assert np.all(np.diff(cov) >= 0)
    assert cov[-1] == 1.0
    assert np.all((cov >= 0) & (cov <= 1))


def test_coverage_levels_align_with_ranks():
    # rank k out of S lies in every region with level >= 1 - k/S
    cov = D.coverage_from_ranks(np.array([90]), 100, np.array([0.09, 0.1, 0.11]))
    np.testing.assert_array_equal(cov, [0.0, 1.0, 1.0])


def _within_binomial(curve, k=3.0):
    se = np.sqrt(curve.levels * (1 - curve.levels) / curve.n_pairs)
    return np.all(np.abs(curve.coverage - curve.levels) <= k * se + 1.0 / curve.n_samples)


def test_exact_posterior_is_calibrated():
    task = get_task("gl")
    thetas, xs = D.joint_pairs(task, 300, seed=1)
    curve = D.expected_coverage(task.posterior_log_prob and (lambda x, t: task.posterior_log_prob(t, x)), task.posterior_sample, thetas, xs, n_samples=200, seed=2)
    assert _within_binomial(curve)


def test_prior_only_evaluator_is_calibrated_on_uniform_prior():
    """A flat density ties every sample; randomized tie-breaking keeps the curve on the diagonal."""
    task = two_moons_task()
    thetas, xs = D.joint_pairs(task, 300, seed=3)
    curve = D.expected_coverage(lambda x, t: task.prior.log_prob(t), lambda x, n, rng: task.prior.sample(rng, n), thetas, xs, n_samples=100, seed=4)
    assert _within_binomial(curve)


def test_overconfident_posterior_falls_below_diagonal():
    task = gauss1d_task(0.5)
    thetas, xs = D.joint_pairs(task, 300, seed=5)
    narrow = lambda x, n, rng: x / 2 + 0.3 * math.sqrt(0.125) * rng.standard_normal((n, 1))
    logp = lambda x, t: -0.5 * (t[:, 0] - x[0] / 2) ** 2 / (0.09 * 0.125)
    curve = D.expected_coverage(logp, narrow, thetas, xs, n_samples=100, seed=6)
    assert np.all(curve.coverage[1:-1] <= curve.levels[1:-1])


def test_coverage_is_independent_of_workers():
    task = gauss1d_task(0.5)
    thetas, xs = D.joint_pairs(task, 40, seed=7)
    logp = lambda x, t: task.posterior_log_prob(t, x)
    a = D.expected_coverage(logp, task.posterior_sample, thetas, xs, n_samples=100, seed=8, workers=1)
    b = D.expected_coverage(logp, task.posterior_sample, thetas, xs, n_samples=100, seed=8, workers=4)
    np.testing.assert_array_equal(a.ranks, b.ranks)


def test_coverage_requires_enough_samples():
    task = gauss1d_task(0.5)
    with pytest.raises(ValueError, match="100"):
        D.expected_coverage(None, None, np.zeros((1, 1)), np.zeros((1, 1)), n_samples=50)


def test_evaluator_coverage_with_exact_oracle():
    task = gauss1d_task(0.5)
    ev = PosteriorEvaluator(OracleEstimator(task, "NRE"), task.prior)
    curve = D.evaluator_coverage(ev, task, n_pairs=100, n_samples=100, seed=3, proposal_std=0.5, n_chains=4, thin=3, burn_in=100)
    assert _within_binomial(curve, k=3.5)


def test_coverage_curve_outputs(tmp_path):
    curve = D.CoverageCurve(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.4, 1.0]), 10, 100, np.arange(10), mc_samples=1000)
    assert curve.max_deviation == pytest.approx(0.1)
    d = curve.to_dict()
    assert d["mc_samples"] == 1000 and d["n_pairs"] == 10
    assert curve.save_csv(tmp_path / "c.csv").read_text().splitlines()[0] == "level,coverage"


# --------------------------------------------------------------------------- log posterior at truth


def test_log_posterior_at_truth_gaussian_linear_entropy():
    """E[log p(theta*|x)] over the joint is minus the posterior entropy: -5 log(2 pi e 0.05)."""
    task = get_task("gl")
    thetas, xs = D.joint_pairs(task, 2000, seed=2)
    res = D.log_posterior_at_truth(lambda x, t: task.posterior_log_prob(t, x), thetas, xs)
    expected = -5 * math.log(2 * math.pi * math.e * 0.05)
    assert res["mean"] == pytest.approx(expected, abs=4 * res["std"] / math.sqrt(res["n"]))
    assert res["n_neg_inf"] == 0


def test_log_posterior_at_truth_zero_net_is_prior():
    task = two_moons_task()
    est = RatioEstimator("DNRE", MlpNetwork.init([6, 3, 1], zeros=True), 2, 2, Standardization.identity(2, 2))
    ev = PosteriorEvaluator(est, task.prior, mc_samples=20)
    res = D.log_posterior_at_truth(ev.log_posterior, np.array([[0.1, 0.2]]), np.array([[0.0, 0.0]]))
    assert res["mean"] == -math.log(4.0)


def test_log_posterior_at_truth_counts_minus_inf():
    res = D.log_posterior_at_truth(lambda x, t: np.where(t[:, 0] > 0, 1.0, -np.inf), np.array([[1.0], [-1.0], [2.0]]), np.zeros((3, 1)))
    assert res["n_neg_inf"] == 1 and res["n"] == 2 and res["mean"] == 1.0
    with pytest.raises(ValueError):
        D.log_posterior_at_truth(lambda x, t: t[:, 0], np.zeros((0, 1)), np.zeros((0, 1)))


# --------------------------------------------------------------------------- ranking


def test_rank_from_scores_ties_by_index():
    np.testing.assert_array_equal(D.rank_from_scores([1.0, 3.0, 3.0, 0.0, 1.0]), [1, 2, 0, 4, 3])


def test_ranking_oracle_mode():
    task = gauss1d_task(0.5)
    cands = np.linspace(-1, 1, 21)[:, None]
    table = D.rank_candidates([OracleEstimator(task, "DNRE")], task.prior, np.array([1.0]), cands, k=3, mc_samples=2000)
    assert table.orders[0, 0] == 15  # theta = 0.5
    assert table.overlap[0, 0] == 3


def test_ranking_full_overlap_and_copies():
    task = gauss1d_task(0.5)
    est = OracleEstimator(task, "NRE")
    cands = make_rng(0).normal(0, 0.5, (30, 1))
    table = D.rank_candidates([est, est], task.prior, np.array([0.2]), cands, k=30)
    np.testing.assert_array_equal(table.overlap, [[30, 30], [30, 30]])
    table = D.rank_candidates([est, est], task.prior, np.array([0.2]), cands, k=5)
    np.testing.assert_array_equal(table.orders[0], table.orders[1])
    assert table.overlap[0, 1] == 5


def test_ranking_shift_invariance():
    cands = np.arange(8.0)[:, None]
    scores = make_rng(1).normal(size=(2, 8))
    a = D.RankingTable(cands, scores, ["a", "b"], 3)
    b = D.RankingTable(cands, scores + 17.5, ["a", "b"], 3)
    np.testing.assert_array_equal(a.orders, b.orders)
    np.testing.assert_array_equal(a.overlap, b.overlap)


def test_ranking_duplicates_and_csv(tmp_path):
    task = gauss1d_task(0.5)
    cands = np.array([[0.1], [0.5], [0.5], [0.1]])
    table = D.rank_candidates([OracleEstimator(task, "NRE")], task.prior, np.array([1.0]), cands, k=2, names=["oracle"])
    np.testing.assert_array_equal(table.orders[0], [1, 2, 0, 3])
    lines = table.save_csv(tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("#") and "index" in lines[0]
    assert lines[1] == "candidate,theta_0,score_oracle,rank_oracle"
    assert lines[3].endswith(",0")


def test_ranking_validation():
    task = gauss1d_task(0.5)
    est = OracleEstimator(task, "NRE")
    with pytest.raises(ValueError):
        D.rank_candidates([est], task.prior, np.array([0.0]), np.zeros((0, 1)), k=1)
    with pytest.raises(ValueError, match="dimension"):
        D.rank_candidates([est], task.prior, np.array([0.0]), np.zeros((3, 2)), k=1)
    two = two_moons_task()
    with pytest.raises(ValueError, match="support"):
        D.rank_candidates([OracleEstimator(two, "DNRE")], two.prior, np.array([0.1, 0.0]), np.array([[2.0, 0.0]]), k=1, mc_samples=10)


# --------------------------------------------------------------------------- report


def test_report_json(tmp_path):
    rep = D.DiagnosticsReport(task={"name": "gauss1d"}, estimators={"e": "abc"}, seeds={"master": 1}, config_digest="ff")
    rep.add("ratio-mse", {"mse": np.float64(0.0), "grid": np.arange(3)})
    doc = json.loads(rep.save(tmp_path / "r.json").read_text())
    assert doc["format_version"] == 1
    assert doc["metrics"]["ratio-mse"] == {"mse": 0.0, "grid": [0, 1, 2]}
    assert doc["seeds"] == {"master": 1}
