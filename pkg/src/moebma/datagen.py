"""Synthetic polynomial datasets for the regression and classification suites."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from moebma.numerics import make_rng

REGRESSION_COEFFS = (2.0, 3.0, -1.0, -1.0, 1.0, 1.0)
REGRESSION_INTERVAL = (-2.0, 1.0)
REGRESSION_NOISE_STD = 0.1
CLASSIFICATION_INTERVAL = (-3.0, 3.0)
# coefficients ~ N(0, 10) read as variance 10; the scale cancels after standardization
CLASSIFICATION_COEFF_STD = float(np.sqrt(10.0))


@dataclass
class GeneratorSpec:
    """Everything needed to regenerate a dataset family and draw fresh samples.

    ``means``/``stds`` are the train-split standardization statistics.  For
    regression they cover ``(x, target)``, for classification ``(x1, x2)``.
    ``noise_std`` is the target noise (regression, standardized scale) or
    the raw-scale x2 noise estimated from the noiseless train column
    (classification).
    """

    kind: str
    degree: int
    coeffs: tuple[float, ...]
    interval: tuple[float, float]
    noise_std: float
    means: tuple[float, ...] = ()
    stds: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("regression", "classification"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if len(self.coeffs) != self.degree + 1:
            raise ValueError(
                f"degree {self.degree} needs {self.degree + 1} coefficients, got {len(self.coeffs)}"
            )
        self.coeffs = tuple(float(c) for c in self.coeffs)
        self.interval = (float(self.interval[0]), float(self.interval[1]))
        self.means = tuple(float(m) for m in self.means)
        self.stds = tuple(float(s) for s in self.stds)

    @property
    def correlated_vc_dimension(self) -> int:
        return correlated_vc_dimension(self.degree)

    def mean_function(self, X: np.ndarray) -> np.ndarray:
        """Noiseless standardized regression target for standardized design rows."""
        if self.kind != "regression":
            raise ValueError("mean_function is defined for regression specs only")
        x_raw = X[:, 1] * self.stds[0] + self.means[0]
        return (poly_eval(self.coeffs, x_raw) - self.means[1]) / self.stds[1]

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Fresh ``(X, y)`` draws from the true process, standardized like training data."""
        lo, hi = self.interval
        if self.kind == "regression":
            x = rng.uniform(lo, hi, n)
            target = (poly_eval(self.coeffs, x) - self.means[1]) / self.stds[1]
            y = target + rng.normal(0.0, self.noise_std, n)
            z = (x - self.means[0]) / self.stds[0]
            return _design(z), y
        x1 = rng.uniform(lo, hi, n)
        curve = poly_eval(self.coeffs, x1)
        x2 = curve + rng.normal(0.0, self.noise_std, n)
        y = (x2 > curve).astype(np.float64)
        z1 = (x1 - self.means[0]) / self.stds[0]
        z2 = (x2 - self.means[1]) / self.stds[1]
        return _design(z1, z2), y


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    spec: GeneratorSpec | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} targets")
        if self.X.shape[0] and not np.all(self.X[:, 0] == 1.0):
            raise ValueError("column 0 must be the identity feature")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.empty((0, d)), np.empty(0))


def correlated_vc_dimension(degree: int, input_dim: int = 2) -> int:
    """VC dimension of degree-``degree`` polynomial classifiers used to label the data."""
    return comb(input_dim + degree, input_dim)


def poly_eval(coeffs, x):
    """Horner evaluation, highest-degree coefficient first."""
    coeffs = list(coeffs)
    if not coeffs:
        raise ValueError("polynomial needs at least one coefficient")
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros_like(x) + coeffs[0]
    for c in coeffs[1:]:
        acc = acc * x + c
    return float(acc) if acc.ndim == 0 else acc


def standardize(column, stats: tuple[float, float] | None = None):
    """Return ``((column - mean) / std, (mean, std))`` using the population std."""
    column = np.asarray(column, dtype=np.float64)
    if stats is None:
        if column.size == 0:
            raise ValueError("cannot standardize an empty column")
        mean, std = float(column.mean()), float(column.std())
    else:
        mean, std = float(stats[0]), float(stats[1])
    if not std > 0:
        raise ValueError("degenerate column")
    return (column - mean) / std, (mean, std)


def _design(*cols: np.ndarray) -> np.ndarray:
    n = cols[0].shape[0]
    return np.column_stack([np.ones(n), *cols])


def gen_regression(degree: int, n_train: int = 10000, n_test: int = 2000, seed: int = 0):
    """Polynomial regression data; returns ``(train, test, spec)``."""
    if not 1 <= degree <= 5:
        raise ValueError(f"regression degree must be in 1..5, got {degree}")
    rng = make_rng(seed)
    coeffs = REGRESSION_COEFFS[: degree + 1]
    lo, hi = REGRESSION_INTERVAL
    x = rng.uniform(lo, hi, n_train + n_test)
    target = poly_eval(coeffs, x)
    z_train, x_stats = standardize(x[:n_train])
    z_test, _ = standardize(x[n_train:], x_stats)
    t_train, t_stats = standardize(target[:n_train])
    t_test, _ = standardize(target[n_train:], t_stats)
    noise = rng.normal(0.0, REGRESSION_NOISE_STD, n_train + n_test)
    spec = GeneratorSpec(
        kind="regression", degree=degree, coeffs=coeffs, interval=REGRESSION_INTERVAL,
        noise_std=REGRESSION_NOISE_STD, means=(x_stats[0], t_stats[0]),
        stds=(x_stats[1], t_stats[1]), seed=seed,
    )
    train = Dataset(_design(z_train), t_train + noise[:n_train], spec)
    test = Dataset(_design(z_test), t_test + noise[n_train:], spec)
    return train, test, spec


def gen_classification(degree: int, n_train: int = 10000, n_test: int = 2000, seed: int = 0):
    """Points scattered around a random polynomial, labelled by side; returns ``(train, test, spec)``."""
    if not 1 <= degree <= 8:
        raise ValueError(f"classification degree must be in 1..8, got {degree}")
    rng = make_rng(seed)
    coeffs = tuple(rng.normal(0.0, CLASSIFICATION_COEFF_STD, degree + 1))
    lo, hi = CLASSIFICATION_INTERVAL
    x1 = rng.uniform(lo, hi, n_train + n_test)
    curve = poly_eval(coeffs, x1)
    noise_std = float(curve[:n_train].std())
    x2 = curve + rng.normal(0.0, noise_std, n_train + n_test)
    # labels on raw coordinates; ties go to 0
    y = (x2 > curve).astype(np.float64)
    z1_train, s1 = standardize(x1[:n_train])
    z1_test, _ = standardize(x1[n_train:], s1)
    z2_train, s2 = standardize(x2[:n_train])
    z2_test, _ = standardize(x2[n_train:], s2)
    spec = GeneratorSpec(
        kind="classification", degree=degree, coeffs=coeffs, interval=CLASSIFICATION_INTERVAL,
        noise_std=noise_std, means=(s1[0], s2[0]), stds=(s1[1], s2[1]), seed=seed,
    )
    train = Dataset(_design(z1_train, z2_train), y[:n_train], spec)
    test = Dataset(_design(z1_test, z2_test), y[n_train:], spec)
    return train, test, spec


def generate(kind: str, degree: int, n_train: int = 10000, n_test: int = 2000, seed: int = 0):
    if kind == "regression":
        return gen_regression(degree, n_train, n_test, seed)
    if kind == "classification":
        return gen_classification(degree, n_train, n_test, seed)
    raise ValueError(f"unknown dataset kind {kind!r}")
