"""Small dense numerics: stable elementwise functions, SPD solves, seeded streams."""
from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np
from scipy import linalg

NEG_INF = -np.inf


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD fails Cholesky factorization."""


def softmax(v) -> np.ndarray:
    """Softmax over a 1-D vector; ``-inf`` entries map to exactly 0."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("softmax expects a nonempty 1-D vector")
    finite = np.isfinite(v)
    if not finite.any():
        raise ValueError("no finite logit")
    if np.isnan(v).any() or np.isposinf(v).any():
        raise ValueError("logits must be finite or -inf")
    shift = v[finite].max()
    e = np.zeros_like(v)
    e[finite] = np.exp(v[finite] - shift)
    return e / e.sum()


def sigmoid(x):
    """Logistic function, branch-stable for large |x|; scalars stay scalars."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def softplus(x):
    arr = np.asarray(x, dtype=np.float64)
    out = np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr)))
    return float(out) if out.ndim == 0 else out


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def solve_spd(A, B) -> np.ndarray:
    """Return ``A^{-1} B`` for symmetric positive-definite ``A`` via Cholesky."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, B is {B.shape}")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise FactorizationError("matrix is not symmetric")
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise FactorizationError(f"Cholesky factorization failed: {exc}") from exc
    return linalg.cho_solve(factor, B, check_finite=False)


def cholesky(A) -> np.ndarray:
    try:
        return np.linalg.cholesky(np.asarray(A, dtype=np.float64))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"Cholesky factorization failed: {exc}") from exc


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed for a named substream of ``master``.

    Uses blake2b over the textual parts, so the value does not depend on
    Python's per-process hash randomization.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def make_rng(seed: int, *parts) -> np.random.Generator:
    """PCG64 generator for ``seed``, or for a named substream when parts are given."""
    if parts:
        seed = derive_seed(seed, *parts)
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_standard_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be nonnegative")
    return rng.standard_normal(n)


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("step h must be positive")
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(theta)
        flat[i] = orig - h
        fm = f(theta)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
