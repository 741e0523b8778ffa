"""Bayesian model averaging: conjugate linear regression, SGHMC and Bayes-by-backprop."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from moebma import kernels
from moebma.datagen import Dataset
from moebma.kernels import CLASSIFICATION, REGRESSION
from moebma.models import DEFAULT_SIGMA, gaussian_nll
from moebma.numerics import cholesky, inv_softplus, make_rng, sigmoid, softplus, solve_spd


@dataclass
class GaussianPosterior:
    """``N(mean, cov)`` over regression coefficients, with likelihood noise ``sigma``."""

    mean: np.ndarray
    cov: np.ndarray
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.array(self.cov, dtype=np.float64, ndmin=2)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean length {d}")
        if not np.allclose(self.cov, self.cov.T, rtol=1e-10, atol=1e-14):
            raise ValueError("covariance must be symmetric")
        cholesky(self.cov)
        if not self.sigma > 0:
            raise ValueError("likelihood sigma must be positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def standard(cls, d: int, sigma: float = DEFAULT_SIGMA) -> "GaussianPosterior":
        return cls(np.zeros(d), np.eye(d), sigma)


def blr_posterior(prior: GaussianPosterior, ds: Dataset) -> GaussianPosterior:
    """Conjugate update with known noise ``prior.sigma``.

    Precision ``L = S0^-1 + X^T X / sigma^2``; covariance is ``L^-1``.
    """
    if ds.dim != prior.dim:
        raise ValueError(f"dimension mismatch: data has {ds.dim} features, prior has {prior.dim}")
    if len(ds) == 0:
        return GaussianPosterior(prior.mean.copy(), prior.cov.copy(), prior.sigma)
    eye = np.eye(prior.dim)
    prior_prec = solve_spd(prior.cov, eye)
    s2 = prior.sigma**2
    precision = prior_prec + ds.X.T @ ds.X / s2
    precision = 0.5 * (precision + precision.T)
    cov = solve_spd(precision, eye)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prior_prec @ prior.mean + ds.X.T @ ds.y / s2)
    return GaussianPosterior(mean, cov, prior.sigma)


def blr_predictive(post: GaussianPosterior, x):
    """Posterior predictive ``(mean, variance)``; vectorized over rows of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != post.dim:
        raise ValueError(f"dimension mismatch: input has {x.shape[-1]} features, posterior has {post.dim}")
    mean = x @ post.mean
    var = np.einsum("...i,ij,...j->...", x, post.cov, x) + post.sigma**2
    if x.ndim == 1:
        return float(mean), float(var)
    return mean, var


def blr_nll(post: GaussianPosterior, X, y) -> float:
    mean, var = blr_predictive(post, X)
    return float(np.mean(gaussian_nll(np.asarray(y), mean, var)))


@dataclass
class PosteriorSamples:
    thetas: np.ndarray
    provenance: str
    seed: int = 0

    def __post_init__(self):
        self.thetas = np.array(self.thetas, dtype=np.float64, ndmin=2)
        if self.thetas.shape[0] == 0:
            raise ValueError("posterior sample set is empty")
        if self.provenance not in ("sghmc", "vi"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self) -> int:
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]


@dataclass
class SghmcConfig:
    friction: float = 0.9
    gamma_hat: float = 1e-4
    lr0: float = 1e-4
    decay: float = 0.05
    burn_in: int = 84
    n_samples: int = 16
    batch_size: int = 64
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma_hat < self.friction:
            raise ValueError(
                f"need 0 < gamma_hat < friction, got gamma_hat={self.gamma_hat}, friction={self.friction}"
            )
        if self.burn_in < 0 or self.n_samples < 1:
            raise ValueError("burn_in must be >= 0 and n_samples >= 1")
        if not self.lr0 > 0 or self.temperature <= 0 or self.batch_size < 1:
            raise ValueError("lr0, temperature and batch_size must be positive")

    def lr(self, epoch: int) -> float:
        return self.lr0 * math.exp(-self.decay * epoch)


@dataclass
class ViConfig:
    temperature: float = 0.1
    epochs: int = 100
    lr: float = 0.01
    batch_size: int = 64
    mc_samples: int = 1
    inference_samples: int = 16
    seed: int = 0
    init_scale: float = 0.05

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 1 or self.mc_samples < 1 or self.inference_samples < 1:
            raise ValueError("epochs, mc_samples and inference_samples must be >= 1")
        if not self.lr > 0 or self.batch_size < 1 or not self.init_scale > 0:
            raise ValueError("lr, batch_size and init_scale must be positive")


def _task(likelihood: str) -> int:
    if likelihood == "logistic":
        return CLASSIFICATION
    if likelihood == "gaussian":
        return REGRESSION
    raise ValueError(f"unknown likelihood {likelihood!r}")


def _n_batches(n: int, batch_size: int) -> int:
    return max(1, -(-n // batch_size))


def sghmc_sample(ds: Dataset, cfg: SghmcConfig, likelihood: str = "logistic",
                 sigma: float = DEFAULT_SIGMA, inject_noise: bool = True,
                 return_trace: bool = False):
    """SGHMC under a N(0, I) prior.

    Burn-in epochs run without injected noise; afterwards one sample is kept
    at the end of each epoch.  Minibatch likelihood gradients are scaled by
    ``n / batch`` so they estimate the full-data gradient.  With
    ``return_trace`` the per-epoch end states are returned too.
    """
    task = _task(likelihood)
    d = ds.dim
    n = len(ds)
    init_rng = make_rng(cfg.seed, "init")
    order_rng = make_rng(cfg.seed, "order")
    noise_rng = make_rng(cfg.seed, "sampler")
    theta = np.ascontiguousarray(init_rng.normal(0.0, 0.1, d))
    v = np.zeros(d)
    nb = _n_batches(n, cfg.batch_size)
    kept, trace = [], []
    for epoch in range(cfg.burn_in + cfg.n_samples):
        perm = order_rng.permutation(n) if n else np.zeros(0, dtype=np.int64)
        noise = noise_rng.standard_normal((nb, d))
        inject = inject_noise and epoch >= cfg.burn_in
        kernels.active.sghmc_epoch(theta, v, ds.X, ds.y, perm, noise, cfg.lr(epoch), cfg.friction,
                                   cfg.gamma_hat, cfg.temperature, task, sigma, cfg.batch_size,
                                   inject)
        if not np.isfinite(theta).all():
            raise FloatingPointError(f"SGHMC diverged at epoch {epoch}; lower lr0")
        trace.append(theta.copy())
        if epoch >= cfg.burn_in:
            kept.append(theta.copy())
    samples = PosteriorSamples(np.array(kept), "sghmc", cfg.seed)
    if return_trace:
        return samples, np.array(trace)
    return samples


@dataclass
class VariationalFit:
    mean: np.ndarray
    std: np.ndarray
    history: list[float]
    init_mean: np.ndarray
    init_std: np.ndarray


def vi_fit(ds: Dataset, cfg: ViConfig, likelihood: str = "logistic",
           sigma: float = DEFAULT_SIGMA) -> VariationalFit:
    """Diagonal-Gaussian Bayes-by-backprop under a N(0, I) prior.

    Minimizes ``E_q[-log p(D, theta) + T log q(theta)]`` with Adam at a
    fixed rate; the scale is ``softplus`` of an unconstrained vector.
    """
    task = _task(likelihood)
    d = ds.dim
    n = len(ds)
    init_rng = make_rng(cfg.seed, "init")
    order_rng = make_rng(cfg.seed, "order")
    noise_rng = make_rng(cfg.seed, "sampler")
    init_mean = init_rng.normal(0.0, 0.1, d)
    init_std = np.full(d, cfg.init_scale)
    P = np.ascontiguousarray(np.stack([init_mean, inv_softplus(init_std)]))
    M = np.zeros_like(P)
    V = np.zeros_like(P)
    step = 0
    nb = _n_batches(n, cfg.batch_size)
    history = []
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n) if n else np.zeros(0, dtype=np.int64)
        eps = noise_rng.standard_normal((nb, cfg.mc_samples, d))
        step, loss = kernels.active.vi_epoch(P, M, V, step, ds.X, ds.y, perm, eps, cfg.lr,
                                             cfg.temperature, task, sigma, cfg.batch_size)
        if not math.isfinite(loss):
            raise FloatingPointError(f"VI diverged at epoch {epoch}")
        history.append(float(loss))
    return VariationalFit(P[0].copy(), softplus(P[1]), history, init_mean, init_std)


def vi_samples(fit: VariationalFit, cfg: ViConfig) -> PosteriorSamples:
    """The fixed set of ``cfg.inference_samples`` draws used for BMA prediction."""
    rng = make_rng(cfg.seed, "inference")
    eps = rng.standard_normal((cfg.inference_samples, fit.mean.shape[0]))
    return PosteriorSamples(fit.mean + fit.std * eps, "vi", cfg.seed)


def elbo(mean, std, ds: Dataset, temperature: float, n_samples: int, seed: int,
         likelihood: str = "logistic", sigma: float = DEFAULT_SIGMA) -> float:
    """Monte-Carlo ``E_q[log p(D, theta) - T log q(theta)]`` including all constants."""
    task = _task(likelihood)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    d = mean.shape[0]
    eps = make_rng(seed, "elbo").standard_normal((n_samples, d))
    thetas = mean + std * eps
    z = ds.X @ thetas.T
    if task == REGRESSION:
        r = z - ds.y[:, None]
        loglik = -0.5 * (r * r).sum(axis=0) / sigma**2 - len(ds) * math.log(sigma * math.sqrt(2 * math.pi))
    else:
        loglik = -(softplus(z) - ds.y[:, None] * z).sum(axis=0)
    logprior = -0.5 * (thetas * thetas).sum(axis=1) - 0.5 * d * math.log(2 * math.pi)
    logq = (-0.5 * eps * eps - np.log(std) - 0.5 * math.log(2 * math.pi)).sum(axis=1)
    return float(np.mean(loglik + logprior - temperature * logq))


def bma_predict(samples: PosteriorSamples, x):
    """Mean over samples of ``sigmoid(x . theta)``; vectorized over rows."""
    if len(samples) == 0:
        raise ValueError("posterior sample set is empty")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != samples.dim:
        raise ValueError(f"dimension mismatch: input has {x.shape[-1]} features, samples have {samples.dim}")
    probs = sigmoid(x @ samples.thetas.T)
    out = np.mean(probs, axis=-1)
    return float(out) if np.ndim(out) == 0 else out
