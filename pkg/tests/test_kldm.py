import numpy as np
import pytest
import scipy.stats

from bmistab.errors import InsufficientDataError, NotPositiveDefiniteError
from bmistab.kldm import (
    GaussianSummary,
    gaussian_fit,
    kl_gaussian,
    kl_objective_and_grads,
)
from bmistab.numerics import RngStream, flatten_params, grad_check, unflatten_params


def random_pd_pair(seed: int, dim: int = 3):
    rng = RngStream(seed)
    def one():
        a = rng.normal(0, 1, (dim, dim)) * 0.4
        sigma = np.eye(dim) + a @ a.T
        mu = rng.normal(0, 0.5, dim)
        return GaussianSummary(mu=mu, sigma=sigma)
    return one(), one()


def mc_kl(pk: GaussianSummary, p0: GaussianSummary, n: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal(pk.mu, pk.sigma, size=n)
    logp_k = scipy.stats.multivariate_normal.logpdf(x, pk.mu, pk.sigma)
    logp_0 = scipy.stats.multivariate_normal.logpdf(x, p0.mu, p0.sigma)
    return float(np.mean(logp_k - logp_0))


class TestGaussianFit:
    def test_constant_cloud_is_ridge_only(self):
        z = np.tile([1.0, -2.0], (50, 1))
        summary = gaussian_fit(z)
        assert np.allclose(summary.mu, [1.0, -2.0])
        assert np.allclose(summary.sigma, summary.sigma[0, 0] * np.eye(2))

    def test_monte_carlo_recovery(self):
        rng = RngStream(0)
        true_mu = np.array([0.5, -1.0, 2.0])
        a = rng.normal(0, 1, (3, 3))
        true_sigma = np.eye(3) + 0.5 * a @ a.T
        chol = np.linalg.cholesky(true_sigma)
        z = true_mu + rng.normal(0, 1, (10000, 3)) @ chol.T
        summary = gaussian_fit(z)
        assert np.abs(summary.mu - true_mu).max() <= 0.05 * np.abs(true_mu).max() + 0.05
        assert np.abs(summary.sigma - true_sigma).max() <= 0.05 * np.abs(true_sigma).max()

    def test_order_invariance(self):
        z = RngStream(1).normal(0, 1, (400, 4))
        interleaved = np.concatenate([z[::2], z[1::2]])
        a = gaussian_fit(z)
        b = gaussian_fit(interleaved)
        assert np.allclose(a.mu, b.mu)
        assert np.allclose(a.sigma, b.sigma)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            gaussian_fit(np.zeros((3, 5)))


class TestKlGaussian:
    def test_identical_is_exactly_zero(self):
        p, _ = random_pd_pair(3)
        assert kl_gaussian(p, p) == 0.0

    def test_1d_closed_form(self):
        pk = GaussianSummary(mu=np.array([1.0]), sigma=np.array([[1.0]]))
        p0 = GaussianSummary(mu=np.array([0.0]), sigma=np.array([[1.0]]))
        assert kl_gaussian(pk, p0) == pytest.approx(0.5, abs=1e-14)

    def test_1d_variance_term(self):
        pk = GaussianSummary(mu=np.array([0.0]), sigma=np.array([[2.0]]))
        p0 = GaussianSummary(mu=np.array([0.0]), sigma=np.array([[1.0]]))
        expected = 0.5 * (2.0 - 1.0 + np.log(1.0 / 2.0))
        assert kl_gaussian(pk, p0) == pytest.approx(expected, abs=1e-14)

    def test_nonnegative_and_asymmetric(self):
        asymmetric = 0
        for seed in range(1000):
            pk, p0 = random_pd_pair(seed)
            forward = kl_gaussian(pk, p0)
            backward = kl_gaussian(p0, pk)
            assert forward >= -1e-12
            assert backward >= -1e-12
            if abs(forward - backward) > 1e-6:
                asymmetric += 1
        assert asymmetric > 900

    def test_monte_carlo_agreement(self):
        # acceptance-grade oracle: 100k samples within 5% relative
        for seed in range(20):
            pk, p0 = random_pd_pair(100 + seed)
            exact = kl_gaussian(pk, p0)
            estimate = mc_kl(pk, p0, 100_000, seed)
            assert estimate == pytest.approx(exact, rel=0.05)

    def test_not_pd_raises_with_name(self):
        bad = GaussianSummary(mu=np.zeros(2), sigma=np.array([[1.0, 2.0], [2.0, 1.0]]))
        good = GaussianSummary(mu=np.zeros(2), sigma=np.eye(2))
        with pytest.raises(NotPositiveDefiniteError) as err:
            kl_gaussian(good, bad)
        assert "day-0" in str(err.value)
        with pytest.raises(NotPositiveDefiniteError) as err:
            kl_gaussian(bad, good)
        assert "day-k" in str(err.value)


class TestKlObjectiveGradients:
    def test_matches_finite_differences_through_encoder(self):
        from bmistab.interface import TrainConfig, init_params, _encode_std, _standardize

        cfg = TrainConfig(epochs=1, n_latents=3, hidden=(6, 4), seed=21)
        enc = init_params(8, 2, cfg)
        for key in [k for k in enc.weights if k.startswith(("dec", "lstm_"))]:
            del enc.weights[key]
        rng = RngStream(22)
        x = rng.uniform(0, 10, (40, 8))
        enc.rate_mean = x.mean(axis=0)
        enc.rate_std = np.maximum(x.std(axis=0), 1e-3)
        target = GaussianSummary(
            mu=rng.normal(0, 1, 3), sigma=np.eye(3) * 1.5
        )
        vec, layout = flatten_params(enc.weights)

        def loss(v):
            enc.weights = unflatten_params(v, layout)
            value, grads = kl_objective_and_grads(enc, x, target)
            g, _ = flatten_params(grads)
            return value, g

        report = grad_check(loss, vec, step=1e-5)
        assert report.max_rel_error <= 1e-4
