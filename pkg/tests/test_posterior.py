import math

import numpy as np
import pytest
from scipy.special import logsumexp

from lfratio.estimators import EstimatorKind, OracleEstimator, RatioEstimator, Standardization
from lfratio.numcore import MlpNetwork, make_rng
from lfratio.posterior import NumericError, PosteriorEvaluator, posterior_grid
from lfratio.tasks import gauss1d_task, two_moons_task


def conjugate_log_post(theta, x, sigma):
    var = sigma**2 / 2
    return -0.5 * (theta - x / 2) ** 2 / var - 0.5 * math.log(2 * math.pi * var)


def test_dnre_oracle_matches_conjugate_posterior():
    task = gauss1d_task(0.5)
    ev = PosteriorEvaluator(OracleEstimator(task, "DNRE"), task.prior, mc_samples=100_000, bank_seed=1)
    got = ev.log_posterior(np.array([1.0]), np.array([[0.5]]))[0]
    assert got == pytest.approx(0.1208, abs=0.02)
    assert got == pytest.approx(conjugate_log_post(0.5, 1.0, 0.5), abs=0.02)


def test_nre_oracle_is_exact():
    task = gauss1d_task(0.5)
    ev = PosteriorEvaluator(OracleEstimator(task, "NRE"), task.prior)
    thetas = np.linspace(-1, 1, 11)[:, None]
    np.testing.assert_allclose(ev.log_posterior(np.array([0.3]), thetas), conjugate_log_post(thetas[:, 0], 0.3, 0.5), atol=1e-12)


def test_single_self_sample_reduces_to_prior():
    task = gauss1d_task(0.5)
    theta = np.array([[0.37]])
    ev = PosteriorEvaluator(OracleEstimator(task, "DNRE"), task.prior, theta_prime_bank=theta)
    assert ev.mc_samples == 1
    assert ev.log_posterior(np.array([2.0]), theta)[0] == pytest.approx(task.prior.log_prob(theta)[0], abs=1e-14)


def test_logsumexp_of_large_negative_inputs():
    expected = -1000 + math.log1p(math.exp(-1))
    assert logsumexp([-1000.0, -1001.0]) == pytest.approx(expected, abs=1e-12)


def test_large_negative_logits_stay_finite():
    """Bank logits near -1000 would underflow exp(); the log-space form keeps the estimate finite."""
    net = MlpNetwork.init([3, 2, 1], zeros=True)
    net.biases[-1][0] = -1000.0
    est = RatioEstimator("DNRE", net, 1, 1, Standardization.identity(1, 1))
    prior = gauss1d_task(1.0).prior
    ev = PosteriorEvaluator(est, prior, mc_samples=2)
    got = ev.log_posterior(np.array([0.0]), np.array([[0.0]]))[0]
    assert got == pytest.approx(-1000.0 + prior.log_prob(np.array([[0.0]]))[0], abs=1e-9)


def test_zero_dnre_on_uniform_prior_gives_flat_grid():
    net = MlpNetwork.init([6, 3, 1], zeros=True)
    est = RatioEstimator("DNRE", net, 2, 2, Standardization.identity(2, 2))
    prior = two_moons_task().prior
    ev = PosteriorEvaluator(est, prior, mc_samples=50)
    grid = posterior_grid(ev, np.array([0.1, 0.1]), (prior.low, prior.high), resolution=9)
    np.testing.assert_allclose(grid.log_density, -math.log(4.0), atol=1e-14)


@pytest.mark.parametrize("kind", ["NRE", "DNRE"])
def test_out_of_support_gives_minus_inf(kind):
    task = two_moons_task()
    if kind == "NRE":
        net = MlpNetwork.init([4, 3, 1], rng=make_rng(0))
    else:
        net = MlpNetwork.init([6, 3, 1], rng=make_rng(0))
    est = RatioEstimator(kind, net, 2, 2, Standardization.identity(2, 2))
    ev = PosteriorEvaluator(est, task.prior, mc_samples=10)
    out = ev.log_posterior(np.array([0.0, 0.0]), np.array([[1.5, 0.0], [0.0, 0.0], [-0.2, -1.01]]))
    assert np.isneginf(out[0]) and np.isneginf(out[2]) and np.isfinite(out[1])


def test_nan_estimator_output_is_an_error():
    net = MlpNetwork.init([2, 3, 1], rng=make_rng(0))
    est = RatioEstimator("NRE", net, 1, 1, Standardization.identity(1, 1))
    est.net.weights[-1][:] = np.nan  # bypass construction-time checks
    ev = PosteriorEvaluator(est, gauss1d_task(0.5).prior)
    with pytest.raises(NumericError):
        ev.log_posterior(np.array([0.0]), np.array([[0.0]]))


def test_bank_is_reproducible_and_shared():
    task = gauss1d_task(0.5)
    a = PosteriorEvaluator(OracleEstimator(task, "DNRE"), task.prior, mc_samples=20, bank_seed=3)
    b = PosteriorEvaluator(OracleEstimator(task, "DNRE"), task.prior, mc_samples=20, bank_seed=3)
    np.testing.assert_array_equal(a.theta_prime_bank, b.theta_prime_bank)
    x, thetas = np.array([0.4]), np.linspace(-1, 1, 5)[:, None]
    np.testing.assert_array_equal(a.log_posterior(x, thetas), b.log_posterior(x, thetas))


def test_chunked_evaluation_matches_direct(monkeypatch):
    import lfratio.posterior as P

    task = gauss1d_task(0.5)
    ev = PosteriorEvaluator(OracleEstimator(task, "DNRE"), task.prior, mc_samples=64, bank_seed=0)
    thetas = np.linspace(-1, 1, 13)[:, None]
    full = ev.log_posterior(np.array([0.2]), thetas)
    monkeypatch.setattr(P, "_MAX_ROWS", 64 * 3)
    np.testing.assert_allclose(ev.log_posterior(np.array([0.2]), thetas), full, atol=1e-13)


def test_error_shrinks_with_bank_size():
    """Median over 50 banks of |estimate - truth| is smaller at M=1e4 than at M=1e2."""
    task = gauss1d_task(0.5)
    oracle = OracleEstimator(task, "DNRE")
    x, theta = np.array([1.0]), np.array([[0.5]])
    truth = conjugate_log_post(0.5, 1.0, 0.5)
    errs = {}
    for m in (100, 10_000):
        errs[m] = np.median([abs(PosteriorEvaluator(oracle, task.prior, m, bank_seed=s).log_posterior(x, theta)[0] - truth) for s in range(50)])
    assert errs[10_000] <= errs[100]


def test_inverse_ratio_average_is_unbiased_for_evidence_ratio():
    """mean_i 1/r(x|t,t'_i) over prior draws t'_i estimates p(x)/p(x|t); relative error <= 2% at M=1e5."""
    task = gauss1d_task(0.5)
    oracle = OracleEstimator(task, "DNRE")
    x, theta = np.array([0.6]), np.array([[0.1]])
    truth = math.exp(task.log_evidence(x[None])[0] - task.log_likelihood(x, theta)[0])
    estimates = []
    for s in range(20):
        bank = task.prior.sample(make_rng(100, s), 100_000)
        lr = oracle.log_ratio(x, np.repeat(theta, len(bank), axis=0), bank)
        estimates.append(np.mean(np.exp(-lr)))
    assert np.mean(estimates) == pytest.approx(truth, rel=0.02)


def test_grid_integrates_to_one():
    task = gauss1d_task(0.5)
    ev = PosteriorEvaluator(OracleEstimator(task, "NRE"), task.prior)
    grid = posterior_grid(ev, np.array([0.7]), ([-3.0], [3.0]), resolution=601)
    assert np.trapezoid(np.exp(grid.log_density), grid.axes[0]) == pytest.approx(1.0, abs=0.1)
    dnre = PosteriorEvaluator(OracleEstimator(task, "DNRE"), task.prior, mc_samples=10_000)
    grid = posterior_grid(dnre, np.array([0.7]), ([-3.0], [3.0]), resolution=201)
    assert np.trapezoid(np.exp(grid.log_density), grid.axes[0]) == pytest.approx(1.0, abs=0.1)


def test_grid_rejects_three_dimensions():
    net = MlpNetwork.init([9, 3, 1], zeros=True)
    est = RatioEstimator("DNRE", net, 3, 3, Standardization.identity(3, 3))
    from lfratio.tasks import DiagGaussianPrior

    ev = PosteriorEvaluator(est, DiagGaussianPrior((0.0,) * 3, (1.0,) * 3), mc_samples=5)
    with pytest.raises(ValueError, match="at most 2"):
        posterior_grid(ev, np.zeros(3), ([-1.0] * 3, [1.0] * 3))


def test_grid_csv_layout(tmp_path):
    task = two_moons_task()
    net = MlpNetwork.init([6, 3, 1], rng=make_rng(1))
    est = RatioEstimator("DNRE", net, 2, 2, Standardization.identity(2, 2))
    ev = PosteriorEvaluator(est, task.prior, mc_samples=10)
    grid = posterior_grid(ev, np.array([0.1, 0.0]), ((-1, -1), (1, 1)), resolution=4)
    path = grid.save_csv(tmp_path / "g.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "theta0,theta1,log_posterior"
    assert len(lines) == 17
    # first axis varies slowest
    assert [float(v) for v in lines[2].split(",")[:2]] == [-1.0, -1 + 2 / 3]
    assert float(lines[2].split(",")[2]) == grid.log_density[0, 1]


def test_mc_samples_validation():
    task = gauss1d_task(0.5)
    with pytest.raises(ValueError):
        PosteriorEvaluator(OracleEstimator(task, "DNRE"), task.prior, mc_samples=0)
