"""Linear/logistic experts, their losses and gradients, and evaluation metrics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from moebma.datagen import Dataset, GeneratorSpec
from moebma.numerics import make_rng, sigmoid

IDENTITY = "identity"
LOGISTIC = "logistic"
PROB_CLAMP = 1e-12
DEFAULT_SIGMA = 0.1
DEFAULT_RISK_SAMPLES = 100_000


@dataclass
class GlmParams:
    theta: np.ndarray
    link: str = IDENTITY
    noise_std: float = DEFAULT_SIGMA

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if self.link not in (IDENTITY, LOGISTIC):
            raise ValueError(f"unknown link {self.link!r}")
        if not np.isfinite(self.theta).all():
            raise ValueError("parameters must be finite")
        if self.link == IDENTITY and not self.noise_std > 0:
            raise ValueError("regression experts need noise_std > 0")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


def _check_dim(p: GlmParams, X: np.ndarray):
    if X.shape[-1] != p.dim:
        raise ValueError(f"dimension mismatch: input has {X.shape[-1]} features, params have {p.dim}")


def linreg_mean(p: GlmParams, x):
    """Predictive mean ``x . theta``; accepts a single row or a matrix."""
    if p.link != IDENTITY:
        raise ValueError("linreg_mean needs an identity-link expert")
    x = np.asarray(x, dtype=np.float64)
    _check_dim(p, x)
    out = x @ p.theta
    return float(out) if out.ndim == 0 else out


def linreg_squared_error(p: GlmParams, ds: Dataset) -> float:
    """The theta-dependent part of the Gaussian NLL: ``sum(r^2) / (2 sigma^2)``."""
    r = ds.y - linreg_mean(p, ds.X)
    return 0.5 * float(r @ r) / p.noise_std**2


def linreg_nll(p: GlmParams, ds: Dataset) -> float:
    """Summed Gaussian negative log-likelihood with known ``noise_std``."""
    const = len(ds) * math.log(p.noise_std * math.sqrt(2.0 * math.pi))
    return linreg_squared_error(p, ds) + const


def linreg_nll_grad(p: GlmParams, ds: Dataset) -> np.ndarray:
    r = linreg_mean(p, ds.X) - ds.y
    return ds.X.T @ r / p.noise_std**2


def logreg_prob(p: GlmParams, x):
    if p.link != LOGISTIC:
        raise ValueError("logreg_prob needs a logistic-link expert")
    x = np.asarray(x, dtype=np.float64)
    _check_dim(p, x)
    return sigmoid(x @ p.theta)


def cross_entropy(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {labels.shape}")
    if probs.size == 0:
        raise ValueError("empty input")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def logreg_cross_entropy(p: GlmParams, ds: Dataset) -> float:
    return cross_entropy(logreg_prob(p, ds.X), ds.y)


def logreg_cross_entropy_grad(p: GlmParams, ds: Dataset) -> np.ndarray:
    """Gradient of the mean cross-entropy (exact away from the clamp)."""
    return ds.X.T @ (logreg_prob(p, ds.X) - ds.y) / len(ds)


def mse(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise ValueError("empty input")
    return float(np.mean((preds - targets) ** 2))


def mse_grad(p: GlmParams, ds: Dataset) -> np.ndarray:
    """Gradient of the mean squared error of ``X theta`` against y."""
    return 2.0 * ds.X.T @ (linreg_mean(p, ds.X) - ds.y) / len(ds)


def accuracy(probs, labels) -> float:
    """Fraction of correct hard predictions; p = 0.5 predicts class 1."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {labels.shape}")
    if probs.size == 0:
        raise ValueError("empty input")
    return float(np.mean((probs >= 0.5) == (labels == 1.0)))


def gaussian_nll(y, mean, var) -> np.ndarray:
    return 0.5 * (np.log(2.0 * np.pi * var) + (y - mean) ** 2 / var)


def frequentist_risk(predictor: Callable[[np.ndarray], np.ndarray], spec: GeneratorSpec,
                     n_mc: int = DEFAULT_RISK_SAMPLES, seed: int = 0,
                     return_se: bool = False):
    """Monte-Carlo expected loss of ``predictor`` under the true generator.

    ``predictor`` maps a design matrix to predictive means (regression) or
    probabilities (classification).  Loss is squared error or cross-entropy
    respectively.  The draws come from a fresh stream seeded by ``seed``.
    With ``return_se`` the Monte-Carlo standard error is returned as well.
    """
    X, y = spec.sample(n_mc, make_rng(seed, "risk"))
    preds = np.asarray(predictor(X), dtype=np.float64)
    if spec.kind == "regression":
        losses = (preds - y) ** 2
    else:
        p = np.clip(preds, PROB_CLAMP, 1.0 - PROB_CLAMP)
        losses = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    risk = float(losses.mean())
    if not return_se:
        return risk
    return risk, float(losses.std(ddof=1) / math.sqrt(n_mc))


CSV_FIELDS = ("model", "degree", "mse", "nll", "accuracy", "risk", "seconds", "seed")


@dataclass
class MetricsRecord:
    model: str
    degree: int
    mse: float | None = None
    nll: float | None = None
    accuracy: float | None = None
    risk: float | None = None
    seconds: float | None = None
    seed: int = 0
    mse_se: float | None = None
    risk_se: float | None = None

    def __post_init__(self):
        for name in ("mse", "nll", "accuracy", "risk", "seconds"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"metric {name} is not finite: {v}")
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy out of range: {self.accuracy}")

    def row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return [self.model, str(self.degree), fmt(self.mse), fmt(self.nll),
                fmt(self.accuracy), fmt(self.risk), fmt(self.seconds), str(self.seed)]

    @classmethod
    def from_row(cls, row: dict) -> "MetricsRecord":
        def num(key):
            v = row.get(key, "")
            return None if v == "" else float(v)

        return cls(model=row["model"], degree=int(row["degree"]), mse=num("mse"), nll=num("nll"),
                   accuracy=num("accuracy"), risk=num("risk"), seconds=num("seconds"),
                   seed=int(row["seed"]))


def records_to_csv(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rec in records:
        writer.writerow(rec.row())
    return buf.getvalue()


def records_from_csv(text: str) -> list[MetricsRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [MetricsRecord.from_row(r) for r in reader]
