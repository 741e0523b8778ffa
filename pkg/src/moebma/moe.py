"""Sparse top-k noisy-gated mixture of experts over GLM experts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from moebma import kernels
from moebma.datagen import Dataset
from moebma.kernels import ADAM, CLASSIFICATION, REGRESSION, SGD
from moebma.models import DEFAULT_SIGMA, IDENTITY, GlmParams, gaussian_nll
from moebma.numerics import NEG_INF, make_rng, softmax, softplus

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
INIT_STD = 0.1


def keep_top_k(v, k: int) -> np.ndarray:
    """Keep the k largest entries, set the rest to -inf; ties go to the lower index."""
    v = np.asarray(v, dtype=np.float64)
    if not 1 <= k <= v.shape[0]:
        raise ValueError(f"k={k} out of range for {v.shape[0]} entries")
    keep = np.argsort(-v, kind="stable")[:k]
    out = np.full_like(v, NEG_INF)
    out[keep] = v[keep]
    return out


@dataclass
class GatingParams:
    w_gate: np.ndarray
    w_noise: np.ndarray
    k: int

    def __post_init__(self):
        self.w_gate = np.array(self.w_gate, dtype=np.float64, ndmin=2)
        self.w_noise = np.array(self.w_noise, dtype=np.float64, ndmin=2)
        if self.w_gate.shape != self.w_noise.shape:
            raise ValueError(f"gate shapes differ: {self.w_gate.shape} vs {self.w_noise.shape}")
        if not 1 <= self.k <= self.w_gate.shape[0]:
            raise ValueError(f"k={self.k} must lie in 1..{self.w_gate.shape[0]}")

    @property
    def n_experts(self) -> int:
        return self.w_gate.shape[0]


@dataclass
class MoeModel:
    gating: GatingParams
    experts: list[GlmParams]

    def __post_init__(self):
        if not self.experts:
            raise ValueError("a mixture needs at least one expert")
        e0 = self.experts[0]
        for e in self.experts:
            if e.link != e0.link or e.dim != e0.dim or e.noise_std != e0.noise_std:
                raise ValueError("experts must be homogeneous (same link, dimension and noise)")
        if self.gating.n_experts != len(self.experts):
            raise ValueError("gate rows must match the number of experts")
        if self.gating.w_gate.shape[1] != e0.dim:
            raise ValueError("gate input dimension must match expert dimension")

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def k(self) -> int:
        return self.gating.k

    @property
    def dim(self) -> int:
        return self.experts[0].dim

    @property
    def link(self) -> str:
        return self.experts[0].link

    @property
    def sigma(self) -> float:
        return self.experts[0].noise_std

    @property
    def task(self) -> int:
        return REGRESSION if self.link == IDENTITY else CLASSIFICATION

    def packed(self) -> np.ndarray:
        """Parameters as one ``(3, n_experts, d)`` array: gate, noise, experts."""
        theta = np.stack([e.theta for e in self.experts])
        return np.ascontiguousarray(np.stack([self.gating.w_gate, self.gating.w_noise, theta]))

    @classmethod
    def from_packed(cls, P: np.ndarray, k: int, link: str, sigma: float = DEFAULT_SIGMA) -> "MoeModel":
        gating = GatingParams(P[0].copy(), P[1].copy(), k)
        return cls(gating, [GlmParams(t.copy(), link, sigma) for t in P[2]])


def init_moe(n_experts: int, d: int, k: int = 2, link: str = IDENTITY,
             sigma: float = DEFAULT_SIGMA, seed: int = 0) -> MoeModel:
    """All weights from N(0, 0.1^2) on the ``init`` substream of ``seed``."""
    rng = make_rng(seed, "init")
    P = rng.normal(0.0, INIT_STD, (3, n_experts, d))
    return MoeModel.from_packed(P, min(k, n_experts), link, sigma)


CLASSIFICATION_EPOCHS = 100


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr0: float = 0.2
    decay: float = 0.75
    fixed_lr: bool = False
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    noise: bool = True

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr0 > 0:
            raise ValueError("initial learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")

    @classmethod
    def regression(cls, **kw) -> "TrainConfig":
        return cls(**{"lr0": 0.2, "decay": 0.75, "fixed_lr": False, **kw})

    @classmethod
    def classification(cls, **kw) -> "TrainConfig":
        # Same 100-epoch budget the variational and SGHMC baselines get.
        return cls(**{"lr0": 0.001, "decay": 0.0, "fixed_lr": True, "epochs": CLASSIFICATION_EPOCHS, **kw})


def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """``lr0 * exp(-decay * epoch)``, or ``lr0`` when the rate is fixed; epochs count from 0."""
    if cfg.fixed_lr:
        return cfg.lr0
    return cfg.lr0 * math.exp(-cfg.decay * epoch)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64))


def adam_step(params: np.ndarray, state: AdamState, grad, lr: float):
    """One Adam update; returns ``(new_params, new_state)`` without mutating inputs."""
    grad = np.asarray(grad, dtype=np.float64)
    t = state.t + 1
    m = BETA1 * state.m + (1.0 - BETA1) * grad
    v = BETA2 * state.v + (1.0 - BETA2) * grad * grad
    mhat = m / (1.0 - BETA1**t)
    vhat = v / (1.0 - BETA2**t)
    return params - lr * mhat / (np.sqrt(vhat) + ADAM_EPS), AdamState(m, v, t)


def gate_forward(g: GatingParams, x, mode: str = "eval", rng: np.random.Generator | None = None,
                 noise: bool = True) -> np.ndarray:
    """Gate probabilities for one input; noise is drawn only in train mode."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.w_gate.shape[1],):
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, gate expects {g.w_gate.shape[1]}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = g.w_gate @ x
    if mode == "train" and noise:
        if rng is None:
            raise ValueError("train-mode gating with noise needs an rng")
        h = h + rng.standard_normal(g.n_experts) * softplus(g.w_noise @ x)
    return softmax(keep_top_k(h, g.k))


def _as_matrix(m: MoeModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.ascontiguousarray(x.reshape(1, -1) if single else x)
    if X.shape[1] != m.dim:
        raise ValueError(f"dimension mismatch: input has {X.shape[1]} features, model expects {m.dim}")
    return X, single


def moe_forward(m: MoeModel, X, eps: np.ndarray | None = None):
    """Batch forward pass: ``(gates, expert_outputs, prediction)``."""
    X, _ = _as_matrix(m, X)
    if eps is None:
        eps = np.zeros((X.shape[0], m.n_experts))
    return kernels.active.moe_forward(m.packed(), X, eps, m.k, m.task)


def moe_predict(m: MoeModel, x, mode: str = "eval", rng: np.random.Generator | None = None):
    """Gated mean (regression) or gated probability (classification).

    Accepts one input vector or a design matrix.
    """
    X, single = _as_matrix(m, x)
    eps = None
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode prediction needs an rng")
        eps = rng.standard_normal((X.shape[0], m.n_experts))
    elif mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    _, _, pred = moe_forward(m, X, eps)
    return float(pred[0]) if single else pred


def moe_mixture_nll(m: MoeModel, X, y) -> float:
    """Mean negative log of the gated Gaussian mixture density (eval-mode gate)."""
    if m.link != IDENTITY:
        raise ValueError("mixture density is defined for regression experts")
    G, means, _ = moe_forward(m, X)
    y = np.asarray(y, dtype=np.float64)
    logcomp = -gaussian_nll(y[:, None], means, m.sigma**2)
    with np.errstate(divide="ignore"):
        logw = np.log(G)
    a = logw + logcomp
    shift = a.max(axis=1, keepdims=True)
    return float(-np.mean(shift[:, 0] + np.log(np.exp(a - shift).sum(axis=1))))


@dataclass
class MoeGrad:
    w_gate: np.ndarray
    w_noise: np.ndarray
    theta: np.ndarray

    def packed(self) -> np.ndarray:
        return np.stack([self.w_gate, self.w_noise, self.theta])


def selection_mask(m: MoeModel, X, eps: np.ndarray | None = None) -> np.ndarray:
    X, _ = _as_matrix(m, X)
    if eps is None:
        eps = np.zeros((X.shape[0], m.n_experts))
    H, _ = kernels.active.gate_logits(m.packed(), X, eps)
    return kernels.active.topk_mask(H, m.k)


def moe_loss_and_grad(m: MoeModel, batch: Dataset, rng: np.random.Generator | None = None,
                      noise: bool = True, eps: np.ndarray | None = None,
                      mask: np.ndarray | None = None) -> tuple[float, MoeGrad]:
    """Batch loss and gradients with the top-k selection held constant.

    Regression loss is the mean squared error of the gated mean; classification
    loss is the mean cross-entropy of the gated probability.  ``eps`` (gate
    noise) is drawn from ``rng`` when noise is on and not supplied; ``mask``
    freezes which experts are selected, and defaults to the top-k of the
    noisy logits.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    X = batch.X
    if eps is None:
        if noise:
            if rng is None:
                raise ValueError("noisy gating needs an rng")
            eps = rng.standard_normal((len(batch), m.n_experts))
        else:
            eps = np.zeros((len(batch), m.n_experts))
    if mask is None:
        mask = selection_mask(m, X, eps)
    loss, g = kernels.active.moe_loss_grad(m.packed(), X, batch.y, np.ascontiguousarray(eps),
                                           np.ascontiguousarray(mask), m.task)
    return float(loss), MoeGrad(g[0], g[1], g[2])


def moe_loss(m: MoeModel, ds: Dataset) -> float:
    """Deterministic (noise-free) training objective over a whole dataset."""
    return moe_loss_and_grad(m, ds, noise=False)[0]


def train_moe(m: MoeModel, train: Dataset, cfg: TrainConfig) -> tuple[MoeModel, list[float]]:
    """Minibatch training; returns the trained copy and per-epoch mean batch loss."""
    order_rng = make_rng(cfg.seed, "order")
    noise_rng = make_rng(cfg.seed, "gate-noise")
    P = m.packed().copy()
    M = np.zeros_like(P)
    V = np.zeros_like(P)
    step = 0
    n = len(train)
    optimizer = ADAM if cfg.optimizer == "adam" else SGD
    history = []
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        if cfg.noise:
            eps = noise_rng.standard_normal((n, m.n_experts))
        else:
            eps = np.zeros((n, m.n_experts))
        step, loss = kernels.active.moe_train_epoch(
            P, M, V, step, train.X, train.y, perm, eps, m.k, m.task,
            lr_schedule(cfg, epoch), cfg.batch_size, optimizer,
        )
        if not math.isfinite(loss):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        history.append(float(loss))
    return MoeModel.from_packed(P, m.k, m.link, m.sigma), history


def train_glm(p: GlmParams, train: Dataset, cfg: TrainConfig) -> tuple[GlmParams, list[float]]:
    """Plain minibatch training of a single GLM on the same batch stream as :func:`train_moe`.

    Loss is mean squared error (identity link) or mean cross-entropy
    (logistic link).  Used as the reference a one-expert mixture must match.
    """
    from moebma import models

    order_rng = make_rng(cfg.seed, "order")
    theta = p.theta.copy()
    state = AdamState.zeros_like(theta)
    history = []
    n = len(train)
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        lr = lr_schedule(cfg, epoch)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            batch = Dataset(train.X[idx], train.y[idx])
            cur = GlmParams(theta, p.link, p.noise_std)
            if p.link == IDENTITY:
                loss = models.mse(models.linreg_mean(cur, batch.X), batch.y)
                g = models.mse_grad(cur, batch)
            else:
                loss = models.logreg_cross_entropy(cur, batch)
                g = models.logreg_cross_entropy_grad(cur, batch)
            if cfg.optimizer == "adam":
                theta, state = adam_step(theta, state, g, lr)
            else:
                theta = theta - lr * g
            total += loss * len(idx)
        history.append(total / n)
    return GlmParams(theta, p.link, p.noise_std), history


# ---------------------------------------------------------------------------
# top-expert piecewise hypotheses over the real line


@dataclass(frozen=True)
class HalfOpen:
    """The interval ``[lo, hi)``."""

    lo: float
    hi: float

    def __contains__(self, x: float) -> bool:
        return self.lo <= x < self.hi


REAL_LINE = HalfOpen(-math.inf, math.inf)


@dataclass
class PiecewiseHypothesis:
    """Expert ``j`` answers on cell ``j``; the last cell is the catch-all.

    Cells are unions of half-open intervals.  A point is owned by the
    lowest-indexed cell that contains it, and the final cell takes whatever
    no earlier cell claims, so the cells always partition the line.
    """

    cells: list[tuple[HalfOpen, ...]]
    experts: list[Callable[[float], int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.experts or len(self.cells) != len(self.experts):
            raise ValueError("need exactly one expert per cell")

    def cell_index(self, x: float) -> int:
        for j, cell in enumerate(self.cells[:-1]):
            if any(x in iv for iv in cell):
                return j
        return len(self.cells) - 1

    def __call__(self, x: float) -> int:
        return piecewise_classify(self, x)


def piecewise_classify(h: PiecewiseHypothesis, x: float) -> int:
    return int(h.experts[h.cell_index(float(x))](float(x)))


def single_cell(expert: Callable[[float], int]) -> PiecewiseHypothesis:
    return PiecewiseHypothesis([(REAL_LINE,)], [expert])


__all__ = [
    "AdamState", "GatingParams", "HalfOpen", "MoeGrad", "MoeModel", "PiecewiseHypothesis",
    "REAL_LINE", "TrainConfig", "adam_step", "gate_forward", "init_moe", "keep_top_k",
    "lr_schedule", "moe_forward", "moe_loss", "moe_loss_and_grad", "moe_mixture_nll",
    "moe_predict", "piecewise_classify", "selection_mask", "single_cell", "train_glm",
    "train_moe",
]
