import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moebma import bayes
from moebma.bayes import GaussianPosterior, PosteriorSamples, SghmcConfig, ViConfig
from moebma.datagen import Dataset
from moebma.models import GlmParams, logreg_prob
from moebma.numerics import make_rng
from oracles import batch_means_se, grid_posterior_1d, intercept_dataset, random_design


class TestConjugate:
    def test_empty_data_returns_prior(self):
        prior = GaussianPosterior(np.array([0.3, -1.0]), np.array([[2.0, 0.5], [0.5, 1.0]]), 0.4)
        post = bayes.blr_posterior(prior, Dataset.empty(2))
        np.testing.assert_array_equal(post.mean, prior.mean)
        np.testing.assert_array_equal(post.cov, prior.cov)

    def test_one_point_grid_oracle(self):
        post = bayes.blr_posterior(GaussianPosterior.standard(1, 1.0), intercept_dataset([1.0]))
        mu, var = grid_posterior_1d([1.0], 1.0)
        assert post.mean[0] == pytest.approx(0.5, abs=1e-12)
        assert post.cov[0, 0] == pytest.approx(0.5, abs=1e-12)
        assert abs(mu - post.mean[0]) < 1e-6 and abs(var - post.cov[0, 0]) < 1e-6

    def test_uninformative_likelihood(self):
        rng = np.random.default_rng(0)
        ds = Dataset(random_design(rng, 40, 3), rng.normal(size=40))
        post = bayes.blr_posterior(GaussianPosterior.standard(3, 1e6), ds)
        assert np.abs(post.mean).max() < 1e-6
        assert np.abs(post.cov - np.eye(3)).max() < 1e-6

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        X = random_design(rng, 30, 3)
        y = rng.normal(size=30)
        prior = GaussianPosterior(rng.normal(size=3), np.diag([1.0, 2.0, 0.5]), 0.7)
        post = bayes.blr_posterior(prior, Dataset(X, y))
        prec = np.linalg.inv(prior.cov) + X.T @ X / 0.49
        cov = np.linalg.inv(prec)
        np.testing.assert_allclose(post.cov, cov, rtol=1e-10)
        np.testing.assert_allclose(post.mean, cov @ (np.linalg.inv(prior.cov) @ prior.mean + X.T @ y / 0.49),
                                   rtol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_precision_monotone(self, seed):
        rng = np.random.default_rng(seed)
        X = random_design(rng, 10, 3)
        ds = Dataset(X, rng.normal(size=10))
        prior = GaussianPosterior.standard(3, 0.5)
        before = np.diag(np.linalg.inv(bayes.blr_posterior(prior, ds).cov))
        more = Dataset(np.vstack([X, random_design(rng, 1, 3)]), np.append(ds.y, 0.0))
        after = np.diag(np.linalg.inv(bayes.blr_posterior(prior, more).cov))
        assert (after >= before - 1e-9).all()

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            bayes.blr_posterior(GaussianPosterior.standard(2), Dataset(np.ones((2, 3)), np.zeros(2)))

    def test_non_spd_prior(self):
        with pytest.raises(Exception):
            GaussianPosterior(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestPredictive:
    def test_prior_plug_in(self):
        mean, var = bayes.blr_predictive(GaussianPosterior.standard(2, 0.1), [1.0, 0.0])
        assert (mean, var) == (0.0, pytest.approx(1.01))

    def test_one_point_posterior(self):
        post = bayes.blr_posterior(GaussianPosterior.standard(1, 1.0), intercept_dataset([1.0]))
        mean, var = bayes.blr_predictive(post, [1.0])
        assert mean == pytest.approx(0.5) and var == pytest.approx(1.5)

    def test_variance_floor(self):
        rng = np.random.default_rng(2)
        post = bayes.blr_posterior(GaussianPosterior.standard(3, 0.3),
                                   Dataset(random_design(rng, 50, 3), rng.normal(size=50)))
        _, var = bayes.blr_predictive(post, random_design(rng, 100, 3))
        assert (var >= 0.09).all()

    def test_monte_carlo_mixture(self):
        rng = np.random.default_rng(3)
        post = bayes.blr_posterior(GaussianPosterior.standard(2, 0.5),
                                   Dataset(random_design(rng, 5, 2), rng.normal(size=5)))
        x = np.array([1.0, 1.5])
        mean, var = bayes.blr_predictive(post, x)
        thetas = make_rng(4).multivariate_normal(post.mean, post.cov, 100000)
        ys = thetas @ x + 0.5 * make_rng(5).standard_normal(100000)
        se_mean = ys.std() / math.sqrt(ys.size)
        se_var = ys.var() * math.sqrt(2 / (ys.size - 1))
        assert abs(ys.mean() - mean) < 3 * se_mean
        assert abs(ys.var() - var) < 3 * se_var


def momentum_reference(theta, X, y, lr, friction, steps, batch_size, perm, sigma=1.0):
    """Heavy-ball SGD written from the update rule, logistic likelihood, N(0, I) prior."""
    theta = theta.copy()
    v = np.zeros_like(theta)
    n = len(y)
    for b in range(steps):
        idx = perm[b * batch_size:(b + 1) * batch_size]
        theta = theta + v
        p = 1 / (1 + np.exp(-X[idx] @ theta))
        grad = theta + (n / len(idx)) * X[idx].T @ (p - y[idx])
        v = v - lr * grad - friction * v
    return theta


class TestSghmc:
    def test_reduces_to_momentum_sgd(self):
        rng = np.random.default_rng(0)
        X = random_design(rng, 320, 3)
        y = (rng.random(320) < 0.5).astype(float)
        ds = Dataset(X, y)
        cfg = SghmcConfig(lr0=1e-4, decay=0.0, burn_in=1, n_samples=1, batch_size=32, seed=7)
        _, trace = bayes.sghmc_sample(ds, cfg, inject_noise=False, return_trace=True)
        init = make_rng(7, "init").normal(0.0, 0.1, 3)
        perm = make_rng(7, "order").permutation(320)
        ref = momentum_reference(init, X, y, 1e-4, 0.9, 10, 32, perm)
        np.testing.assert_allclose(trace[0], ref, rtol=1e-12)

    def test_burn_in_is_noise_free(self):
        rng = np.random.default_rng(1)
        ds = Dataset(random_design(rng, 100, 2), (rng.random(100) < 0.5).astype(float))
        a = bayes.sghmc_sample(ds, SghmcConfig(burn_in=5, n_samples=1, seed=3), return_trace=True)[1]
        b = bayes.sghmc_sample(ds, SghmcConfig(burn_in=5, n_samples=1, seed=3), inject_noise=False,
                               return_trace=True)[1]
        np.testing.assert_array_equal(a[:5], b[:5])
        assert not np.array_equal(a[5], b[5])

    def test_sample_count_and_determinism(self):
        rng = np.random.default_rng(2)
        ds = Dataset(random_design(rng, 200, 3), (rng.random(200) < 0.5).astype(float))
        cfg = SghmcConfig(burn_in=4, n_samples=16, seed=5)
        a = bayes.sghmc_sample(ds, cfg)
        b = bayes.sghmc_sample(ds, cfg)
        assert len(a) == 16 and a.provenance == "sghmc"
        assert np.array_equal(a.thetas, b.thetas)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SghmcConfig(gamma_hat=0.9, friction=0.9)
        with pytest.raises(ValueError):
            SghmcConfig(n_samples=0)

    def test_gaussian_target_mean(self):
        y = np.random.default_rng(5).normal(0.7, 1.0, 50)
        ds = intercept_dataset(y)
        post = bayes.blr_posterior(GaussianPosterior.standard(1, 1.0), ds)
        cfg = SghmcConfig(lr0=0.005, decay=0.0, burn_in=200, n_samples=20000, seed=0)
        th = bayes.sghmc_sample(ds, cfg, likelihood="gaussian", sigma=1.0).thetas[:, 0]
        assert abs(th.mean() - post.mean[0]) < 3 * batch_means_se(th)

    def test_gaussian_target_covariance_2d(self):
        rng = np.random.default_rng(6)
        X = random_design(rng, 40, 2)
        ds = Dataset(X, X @ np.array([0.5, -1.0]) + rng.normal(size=40))
        post = bayes.blr_posterior(GaussianPosterior.standard(2, 1.0), ds)
        cfg = SghmcConfig(lr0=0.002, decay=0.0, burn_in=200, n_samples=20000, seed=1)
        th = bayes.sghmc_sample(ds, cfg, likelihood="gaussian", sigma=1.0).thetas
        ratio = np.linalg.eigvals(np.linalg.solve(post.cov, np.cov(th.T))).real
        assert ((ratio > 0.5) & (ratio < 2.0)).all()


class TestVi:
    def test_no_data_recovers_prior(self):
        cfg = ViConfig(temperature=1.0, epochs=5000, lr=0.003, mc_samples=16, seed=1)
        fit = bayes.vi_fit(Dataset.empty(2), cfg, likelihood="gaussian")
        assert np.linalg.norm(fit.mean) < 0.05
        assert np.abs(fit.std - 1).max() < 0.05

    def test_conjugate_mean(self):
        y = np.random.default_rng(5).normal(0.7, 1.0, 50)
        ds = intercept_dataset(y)
        post = bayes.blr_posterior(GaussianPosterior.standard(1, 1.0), ds)
        fit = bayes.vi_fit(ds, ViConfig(temperature=1.0, seed=0), likelihood="gaussian", sigma=1.0)
        assert abs(fit.mean[0] - post.mean[0]) < 0.05

    def test_elbo_improves(self):
        rng = np.random.default_rng(7)
        X = random_design(rng, 300, 3)
        y = (X @ np.array([0.2, 2.0, -1.0]) + rng.logistic(size=300) > 0).astype(float)
        ds = Dataset(X, y)
        cfg = ViConfig(epochs=30, seed=2)
        fit = bayes.vi_fit(ds, cfg)
        before = bayes.elbo(fit.init_mean, fit.init_std, ds, cfg.temperature, 10000, seed=0)
        after = bayes.elbo(fit.mean, fit.std, ds, cfg.temperature, 10000, seed=0)
        assert after >= before

    def test_elbo_closed_form_no_data(self):
        # with no data and T=1 the ELBO equals -KL(q || prior)
        mean, std = np.array([0.3]), np.array([0.8])
        kl = 0.5 * (std[0] ** 2 + mean[0] ** 2 - 1 - 2 * math.log(std[0]))
        est = bayes.elbo(mean, std, Dataset.empty(1), 1.0, 200000, seed=1)
        assert est == pytest.approx(-kl, abs=0.01)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        ds = Dataset(random_design(rng, 100, 2), (rng.random(100) < 0.5).astype(float))
        cfg = ViConfig(epochs=5, seed=3)
        a, b = bayes.vi_fit(ds, cfg), bayes.vi_fit(ds, cfg)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
        sa, sb = bayes.vi_samples(a, cfg), bayes.vi_samples(b, cfg)
        assert len(sa) == 16 and np.array_equal(sa.thetas, sb.thetas)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ViConfig(temperature=0.0)
        with pytest.raises(ValueError):
            ViConfig(epochs=0)


class TestBma:
    def test_identical_samples(self):
        theta = np.array([0.4, -1.1])
        s = PosteriorSamples(np.tile(theta, (16, 1)), "vi")
        x = np.array([1.0, 0.7])
        assert bayes.bma_predict(s, x) == pytest.approx(logreg_prob(GlmParams(theta, "logistic"), x),
                                                         rel=1e-14)

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2,
                                                                          max_size=2))
    def test_antipodal_pair(self, theta, x):
        theta = np.array(theta)
        s = PosteriorSamples(np.stack([theta, -theta]), "sghmc")
        assert bayes.bma_predict(s, np.array(x)) == pytest.approx(0.5, abs=1e-12)

    def test_open_interval(self):
        rng = np.random.default_rng(0)
        s = PosteriorSamples(rng.normal(0, 2, (16, 3)), "vi")
        p = bayes.bma_predict(s, random_design(rng, 500, 3))
        assert ((p > 0) & (p < 1)).all()

    def test_empty_samples(self):
        with pytest.raises(ValueError):
            PosteriorSamples(np.empty((0, 2)), "vi")

    def test_unknown_provenance(self):
        with pytest.raises(ValueError):
            PosteriorSamples(np.zeros((1, 2)), "mcmc")
