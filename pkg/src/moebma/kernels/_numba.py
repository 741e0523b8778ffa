"""Loop-form numba twins of :mod:`moebma.kernels._numpy`.

Signatures and semantics match the numpy module exactly; results agree to
rounding (summation order differs from BLAS).
"""
import math

import numpy as np
from numba import njit

from moebma.kernels._numpy import (
    ADAM,
    ADAM_EPS,
    BETA1,
    BETA2,
    CLAMP,
    CLASSIFICATION,
    REGRESSION,
    SGD,
)

__all__ = [
    "ADAM", "SGD", "REGRESSION", "CLASSIFICATION",
    "sigmoid", "softplus", "gate_logits", "topk_mask", "masked_softmax",
    "moe_forward", "moe_loss_grad", "moe_train_epoch",
    "nll_sum", "nll_grad_sum", "sghmc_epoch", "vi_epoch",
]


@njit(cache=True)
def _sig(a):
    if a >= 0.0:
        return 1.0 / (1.0 + math.exp(-a))
    ea = math.exp(a)
    return ea / (1.0 + ea)


@njit(cache=True)
def _splus(a):
    return max(a, 0.0) + math.log1p(math.exp(-abs(a)))


@njit(cache=True)
def _sigmoid_arr(a):
    out = np.empty(a.shape)
    flat_in = a.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.shape[0]):
        flat_out[i] = _sig(flat_in[i])
    return out


@njit(cache=True)
def _softplus_arr(a):
    out = np.empty(a.shape)
    flat_in = a.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.shape[0]):
        flat_out[i] = _splus(flat_in[i])
    return out


def sigmoid(a):
    return _sigmoid_arr(np.asarray(a, dtype=np.float64))


def softplus(a):
    return _softplus_arr(np.asarray(a, dtype=np.float64))


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for j in range(a.shape[0]):
        s += a[j] * b[j]
    return s


@njit(cache=True)
def _row_logits(P, x, eps_row, H, raw):
    E = P.shape[1]
    for e in range(E):
        raw[e] = _dot(P[1, e], x)
        H[e] = _dot(P[0, e], x) + eps_row[e] * _splus(raw[e])


@njit(cache=True)
def _row_topk(H, k, mask):
    E = H.shape[0]
    for e in range(E):
        mask[e] = False
    for _ in range(k):
        best = -1
        for e in range(E):
            # strict > keeps the lowest index among ties
            if not mask[e] and (best < 0 or H[e] > H[best]):
                best = e
        mask[best] = True


@njit(cache=True)
def _row_softmax(H, mask, G):
    E = H.shape[0]
    mx = -np.inf
    for e in range(E):
        if mask[e] and H[e] > mx:
            mx = H[e]
    tot = 0.0
    for e in range(E):
        if mask[e]:
            G[e] = math.exp(H[e] - mx)
            tot += G[e]
        else:
            G[e] = 0.0
    for e in range(E):
        G[e] /= tot


@njit(cache=True)
def _gate_logits(P, X, eps):
    n = X.shape[0]
    E = P.shape[1]
    H = np.empty((n, E))
    raw = np.empty((n, E))
    for i in range(n):
        _row_logits(P, X[i], eps[i], H[i], raw[i])
    return H, raw


def gate_logits(P, X, eps):
    return _gate_logits(P, X, eps)


@njit(cache=True)
def topk_mask(H, k):
    mask = np.zeros(H.shape, dtype=np.bool_)
    for i in range(H.shape[0]):
        _row_topk(H[i], k, mask[i])
    return mask


@njit(cache=True)
def masked_softmax(H, mask):
    G = np.empty(H.shape)
    for i in range(H.shape[0]):
        _row_softmax(H[i], mask[i], G[i])
    return G


@njit(cache=True)
def moe_forward(P, X, eps, k, task):
    n = X.shape[0]
    E = P.shape[1]
    G = np.empty((n, E))
    out = np.empty((n, E))
    pred = np.empty(n)
    H = np.empty(E)
    raw = np.empty(E)
    mask = np.empty(E, dtype=np.bool_)
    for i in range(n):
        _row_logits(P, X[i], eps[i], H, raw)
        _row_topk(H, k, mask)
        _row_softmax(H, mask, G[i])
        s = 0.0
        for e in range(E):
            z = _dot(P[2, e], X[i])
            out[i, e] = z if task == REGRESSION else _sig(z)
            s += G[i, e] * out[i, e]
        pred[i] = s
    return G, out, pred


@njit(cache=True)
def _accumulate_grad(P, X, y, eps, mask, task, rows, grad):
    """Add the batch gradient of the mean loss over ``rows`` into grad; return loss."""
    E = P.shape[1]
    d = P.shape[2]
    n = rows.shape[0]
    H = np.empty(E)
    raw = np.empty(E)
    G = np.empty(E)
    out = np.empty(E)
    dG = np.empty(E)
    loss = 0.0
    for r in range(n):
        i = rows[r]
        x = X[i]
        _row_logits(P, x, eps[r], H, raw)
        _row_softmax(H, mask[r], G)
        pred = 0.0
        for e in range(E):
            z = _dot(P[2, e], x)
            out[e] = z if task == REGRESSION else _sig(z)
            pred += G[e] * out[e]
        if task == REGRESSION:
            res = pred - y[i]
            loss += res * res
            dpred = 2.0 * res / n
        else:
            pc = min(max(pred, CLAMP), 1.0 - CLAMP)
            loss -= y[i] * math.log(pc) + (1.0 - y[i]) * math.log(1.0 - pc)
            if pred > CLAMP and pred < 1.0 - CLAMP:
                dpred = (-y[i] / pc + (1.0 - y[i]) / (1.0 - pc)) / n
            else:
                dpred = 0.0
        gdg = 0.0
        for e in range(E):
            dG[e] = dpred * out[e]
            gdg += G[e] * dG[e]
        for e in range(E):
            if G[e] == 0.0:
                continue
            dh = G[e] * (dG[e] - gdg)
            dn = dh * eps[r, e] * _sig(raw[e])
            if task == REGRESSION:
                dz = dpred * G[e]
            else:
                dz = dpred * G[e] * out[e] * (1.0 - out[e])
            for j in range(d):
                grad[0, e, j] += dh * x[j]
                grad[1, e, j] += dn * x[j]
                grad[2, e, j] += dz * x[j]
    return loss / n


@njit(cache=True)
def moe_loss_grad(P, X, y, eps, mask, task):
    grad = np.zeros(P.shape)
    rows = np.arange(X.shape[0])
    loss = _accumulate_grad(P, X, y, eps, mask, task, rows, grad)
    return loss, grad


@njit(cache=True)
def _apply_update(P, g, M, V, step, lr, optimizer):
    fp = P.ravel()
    fg = g.ravel()
    if optimizer == SGD:
        for i in range(fp.shape[0]):
            fp[i] -= lr * fg[i]
        return
    fm = M.ravel()
    fv = V.ravel()
    c1 = 1.0 - BETA1**step
    c2 = 1.0 - BETA2**step
    for i in range(fp.shape[0]):
        fm[i] = BETA1 * fm[i] + (1.0 - BETA1) * fg[i]
        fv[i] = BETA2 * fv[i] + (1.0 - BETA2) * fg[i] * fg[i]
        fp[i] -= lr * (fm[i] / c1) / (math.sqrt(fv[i] / c2) + ADAM_EPS)


@njit(cache=True)
def moe_train_epoch(P, M, V, step, X, y, perm, eps, k, task, lr, batch_size, optimizer):
    n = X.shape[0]
    E = P.shape[1]
    grad = np.empty(P.shape)
    H = np.empty(E)
    raw = np.empty(E)
    total = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        rows = perm[start:stop]
        eb = eps[start:stop]
        mask = np.empty((stop - start, E), dtype=np.bool_)
        for r in range(stop - start):
            _row_logits(P, X[rows[r]], eb[r], H, raw)
            _row_topk(H, k, mask[r])
        grad[:] = 0.0
        loss = _accumulate_grad(P, X, y, eb, mask, task, rows, grad)
        step += 1
        _apply_update(P, grad, M, V, step, lr, optimizer)
        total += loss * (stop - start)
    return step, total / n


@njit(cache=True)
def _nll_sum_rows(theta, X, y, rows, task, sigma):
    s = 0.0
    for r in range(rows.shape[0]):
        i = rows[r]
        z = _dot(theta, X[i])
        if task == REGRESSION:
            s += 0.5 * (z - y[i]) * (z - y[i]) / (sigma * sigma)
        else:
            s += _splus(z) - y[i] * z
    return s


@njit(cache=True)
def _nll_grad_rows(theta, X, y, rows, task, sigma, scale, g):
    d = theta.shape[0]
    for r in range(rows.shape[0]):
        i = rows[r]
        z = _dot(theta, X[i])
        if task == REGRESSION:
            c = (z - y[i]) / (sigma * sigma)
        else:
            c = _sig(z) - y[i]
        for j in range(d):
            g[j] += scale * c * X[i, j]


@njit(cache=True)
def nll_sum(theta, X, y, task, sigma):
    return _nll_sum_rows(theta, X, y, np.arange(X.shape[0]), task, sigma)


@njit(cache=True)
def nll_grad_sum(theta, X, y, task, sigma):
    g = np.zeros(theta.shape[0])
    _nll_grad_rows(theta, X, y, np.arange(X.shape[0]), task, sigma, 1.0, g)
    return g


@njit(cache=True)
def sghmc_epoch(theta, v, X, y, perm, noise, lr, friction, gamma_hat, temperature,
                task, sigma, batch_size, inject):
    n = X.shape[0]
    d = theta.shape[0]
    scale = math.sqrt(2.0 * (friction - gamma_hat) * lr * temperature) if inject else 0.0
    g = np.empty(d)
    for b in range(noise.shape[0]):
        start = min(b * batch_size, n)
        stop = min(start + batch_size, n)
        rows = perm[start:stop]
        for j in range(d):
            theta[j] += v[j]
            g[j] = theta[j]
        m = stop - start
        if m > 0:
            _nll_grad_rows(theta, X, y, rows, task, sigma, n / m, g)
        for j in range(d):
            v[j] += -lr * g[j] - friction * v[j] + scale * noise[b, j]


@njit(cache=True)
def vi_epoch(P, M, V, step, X, y, perm, eps, lr, temperature, task, sigma, batch_size):
    n = X.shape[0]
    d = P.shape[1]
    n_batches = eps.shape[0]
    S = eps.shape[1]
    sd = np.empty(d)
    th = np.empty(d)
    g = np.empty(d)
    gmu = np.empty(d)
    gsd = np.empty(d)
    grad = np.empty(P.shape)
    total = 0.0
    for b in range(n_batches):
        start = min(b * batch_size, n)
        stop = min(start + batch_size, n)
        rows = perm[start:stop]
        m = stop - start
        scale = n / m if m > 0 else 0.0
        for j in range(d):
            sd[j] = _splus(P[1, j])
            gmu[j] = 0.0
            gsd[j] = 0.0
        loss = 0.0
        for s in range(S):
            for j in range(d):
                th[j] = P[0, j] + sd[j] * eps[b, s, j]
                g[j] = th[j]
            loss += 0.5 * _dot(th, th)
            if m > 0:
                _nll_grad_rows(th, X, y, rows, task, sigma, scale, g)
                loss += scale * _nll_sum_rows(th, X, y, rows, task, sigma)
            for j in range(d):
                gmu[j] += g[j]
                gsd[j] += g[j] * eps[b, s, j]
        logsd = 0.0
        for j in range(d):
            logsd += math.log(sd[j])
            grad[0, j] = gmu[j] / S
            grad[1, j] = (gsd[j] / S - temperature / sd[j]) * _sig(P[1, j])
        loss = loss / S - temperature * logsd
        step += 1
        _apply_update(P, grad, M, V, step, lr, ADAM)
        total += loss
    return step, total / n_batches
