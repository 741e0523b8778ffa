"""Vectorized numpy kernels (fallback path, also the reference for the numba twins).

Parameter layout shared with the numba kernels: a MoE is packed into one
array ``P`` of shape ``(3, n_experts, d)`` holding gate weights, noise
weights and expert coefficients in that order.  Randomness never enters a
kernel; callers pass pre-drawn permutations and noise.
"""
import math

import numpy as np

REGRESSION = 0
CLASSIFICATION = 1

ADAM = 0
SGD = 1

CLAMP = 1e-12
BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


def sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def softplus(a):
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def gate_logits(P, X, eps):
    raw_noise = X @ P[1].T
    return X @ P[0].T + eps * softplus(raw_noise), raw_noise


def topk_mask(H, k):
    # stable sort on -H keeps the lowest index first among ties
    order = np.argsort(-H, axis=1, kind="stable")[:, :k]
    mask = np.zeros(H.shape, dtype=np.bool_)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def masked_softmax(H, mask):
    Hm = np.where(mask, H, -np.inf)
    shift = Hm.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(Hm - shift), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def moe_forward(P, X, eps, k, task):
    """Return ``(gates, expert_outputs, prediction)`` for every row of X."""
    H, _ = gate_logits(P, X, eps)
    G = masked_softmax(H, topk_mask(H, k))
    z = X @ P[2].T
    out = z if task == REGRESSION else sigmoid(z)
    return G, out, (G * out).sum(axis=1)


def moe_loss_grad(P, X, y, eps, mask, task):
    n = X.shape[0]
    H, raw_noise = gate_logits(P, X, eps)
    G = masked_softmax(H, mask)
    z = X @ P[2].T
    if task == REGRESSION:
        out = z
        pred = (G * out).sum(axis=1)
        r = pred - y
        loss = float(np.mean(r * r))
        dpred = 2.0 * r / n
        dz = dpred[:, None] * G
    else:
        out = sigmoid(z)
        pred = (G * out).sum(axis=1)
        pc = np.clip(pred, CLAMP, 1.0 - CLAMP)
        loss = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
        inside = (pred > CLAMP) & (pred < 1.0 - CLAMP)
        dpred = np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0) / n
        dz = dpred[:, None] * G * out * (1.0 - out)
    dG = dpred[:, None] * out
    dH = G * (dG - (G * dG).sum(axis=1, keepdims=True))
    grad = np.empty_like(P)
    grad[0] = dH.T @ X
    grad[1] = (dH * eps * sigmoid(raw_noise)).T @ X
    grad[2] = dz.T @ X
    return loss, grad


def _apply_update(P, g, M, V, step, lr, optimizer):
    if optimizer == SGD:
        P -= lr * g
        return
    M *= BETA1
    M += (1.0 - BETA1) * g
    V *= BETA2
    V += (1.0 - BETA2) * g * g
    mhat = M / (1.0 - BETA1**step)
    vhat = V / (1.0 - BETA2**step)
    P -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def moe_train_epoch(P, M, V, step, X, y, perm, eps, k, task, lr, batch_size, optimizer):
    """One pass over ``perm`` in minibatches; updates P, M, V in place.

    ``eps`` is indexed by position in the permuted order.  Returns the new
    step count and the sample-weighted mean batch loss.
    """
    n = X.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        Xb, yb, eb = X[idx], y[idx], eps[start:start + batch_size]
        H, _ = gate_logits(P, Xb, eb)
        loss, g = moe_loss_grad(P, Xb, yb, eb, topk_mask(H, k), task)
        step += 1
        _apply_update(P, g, M, V, step, lr, optimizer)
        total += loss * idx.shape[0]
    return step, total / n


def nll_sum(theta, X, y, task, sigma):
    z = X @ theta
    if task == REGRESSION:
        r = z - y
        return 0.5 * float(r @ r) / (sigma * sigma)
    return float(np.sum(softplus(z) - y * z))


def nll_grad_sum(theta, X, y, task, sigma):
    z = X @ theta
    if task == REGRESSION:
        r = (z - y) / (sigma * sigma)
    else:
        r = sigmoid(z) - y
    return X.T @ r


def sghmc_epoch(theta, v, X, y, perm, noise, lr, friction, gamma_hat, temperature,
                task, sigma, batch_size, inject):
    """SGHMC over one epoch, prior N(0, I); theta and v updated in place."""
    n = X.shape[0]
    scale = math.sqrt(2.0 * (friction - gamma_hat) * lr * temperature) if inject else 0.0
    for b in range(noise.shape[0]):
        idx = perm[b * batch_size:(b + 1) * batch_size]
        theta += v
        g = theta.copy()
        if idx.shape[0] > 0:
            g += (n / idx.shape[0]) * nll_grad_sum(theta, X[idx], y[idx], task, sigma)
        v += -lr * g - friction * v + scale * noise[b]


def vi_epoch(P, M, V, step, X, y, perm, eps, lr, temperature, task, sigma, batch_size):
    """Bayes-by-backprop over one epoch.

    ``P[0]`` is the variational mean, ``P[1]`` the pre-softplus scale.
    ``eps`` has shape ``(n_batches, mc_samples, d)``.  Returns the new step
    count and the mean per-batch negative ELBO estimate (constants dropped).
    """
    n = X.shape[0]
    n_batches, S = eps.shape[0], eps.shape[1]
    total = 0.0
    for b in range(n_batches):
        idx = perm[b * batch_size:(b + 1) * batch_size]
        m = idx.shape[0]
        Xb, yb = X[idx], y[idx]
        scale = n / m if m > 0 else 0.0
        sd = softplus(P[1])
        gmu = np.zeros_like(P[0])
        gsd = np.zeros_like(P[0])
        loss = 0.0
        for s in range(S):
            e = eps[b, s]
            th = P[0] + sd * e
            g = th.copy()
            loss += 0.5 * float(th @ th)
            if m > 0:
                g += scale * nll_grad_sum(th, Xb, yb, task, sigma)
                loss += scale * nll_sum(th, Xb, yb, task, sigma)
            gmu += g
            gsd += g * e
        gmu /= S
        gsd /= S
        loss = loss / S - temperature * float(np.sum(np.log(sd)))
        grad = np.empty_like(P)
        grad[0] = gmu
        grad[1] = (gsd - temperature / sd) * sigmoid(P[1])
        step += 1
        _apply_update(P, grad, M, V, step, lr, ADAM)
        total += loss
    return step, total / n_batches
