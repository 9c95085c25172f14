"""Training kernels for the width-scaling harness.

Two interchangeable backends: numba-compiled loops and pure numpy.  The
FTC_NUMBA environment variable picks one at import time ("1" requires numba,
"0" forces numpy, unset prefers numba when available).  Both backends run the
same update equations in the same order; they agree to float roundoff but are
not bit-identical because the accumulation orders differ.  Determinism is
per-backend: same arrays and hyperparameters, same result.

All kernels train with full-batch momentum gradient descent under a cosine
step-size decay, mutate the parameter arrays in place, and return the final
mean-squared loss.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("FTC_NUMBA", "").strip()
if _FLAG == "0":
    _numba = None
else:
    try:
        import numba as _numba
    except ImportError:
        _numba = None
        if _FLAG == "1":
            raise ImportError("FTC_NUMBA=1 but numba is not installed")

USING_NUMBA = _numba is not None


def backend_name() -> str:
    return "numba" if USING_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def train_two_layer_numpy(X, y, W1, b1, w2, b2, lr, momentum, epochs):
    """d -> h -> 1 ReLU regression; returns final MSE."""
    K = X.shape[0]
    vW1 = np.zeros_like(W1)
    vb1 = np.zeros_like(b1)
    vw2 = np.zeros_like(w2)
    vb2 = 0.0
    for t in range(epochs):
        step = lr * 0.5 * (1.0 + math.cos(math.pi * t / epochs))
        pre = X @ W1 + b1
        H = np.maximum(pre, 0.0)
        err = H @ w2 + b2[0] - y
        dp = (2.0 / K) * err
        gw2 = H.T @ dp
        gb2 = dp.sum()
        dH = np.outer(dp, w2)
        dH[pre <= 0.0] = 0.0
        gW1 = X.T @ dH
        gb1 = dH.sum(axis=0)
        vW1 = momentum * vW1 - step * gW1
        vb1 = momentum * vb1 - step * gb1
        vw2 = momentum * vw2 - step * gw2
        vb2 = momentum * vb2 - step * gb2
        W1 += vW1
        b1 += vb1
        w2 += vw2
        b2[0] += vb2
    err = np.maximum(X @ W1 + b1, 0.0) @ w2 + b2[0] - y
    return float(np.mean(err * err))


def train_three_layer_numpy(X, y, W1, b1, W2, b2, w3, b3, lr, momentum, epochs):
    """d -> d1 -> d2 -> 1 ReLU regression; returns final MSE."""
    K = X.shape[0]
    vW1 = np.zeros_like(W1)
    vb1 = np.zeros_like(b1)
    vW2 = np.zeros_like(W2)
    vb2 = np.zeros_like(b2)
    vw3 = np.zeros_like(w3)
    vb3 = 0.0
    for t in range(epochs):
        step = lr * 0.5 * (1.0 + math.cos(math.pi * t / epochs))
        pre1 = X @ W1 + b1
        H1 = np.maximum(pre1, 0.0)
        pre2 = H1 @ W2 + b2
        H2 = np.maximum(pre2, 0.0)
        err = H2 @ w3 + b3[0] - y
        dp = (2.0 / K) * err
        gw3 = H2.T @ dp
        gb3 = dp.sum()
        dH2 = np.outer(dp, w3)
        dH2[pre2 <= 0.0] = 0.0
        gW2 = H1.T @ dH2
        gb2 = dH2.sum(axis=0)
        dH1 = dH2 @ W2.T
        dH1[pre1 <= 0.0] = 0.0
        gW1 = X.T @ dH1
        gb1 = dH1.sum(axis=0)
        vW1 = momentum * vW1 - step * gW1
        vb1 = momentum * vb1 - step * gb1
        vW2 = momentum * vW2 - step * gW2
        vb2 = momentum * vb2 - step * gb2
        vw3 = momentum * vw3 - step * gw3
        vb3 = momentum * vb3 - step * gb3
        W1 += vW1
        b1 += vb1
        W2 += vW2
        b2 += vb2
        w3 += vw3
        b3[0] += vb3
    H1 = np.maximum(X @ W1 + b1, 0.0)
    H2 = np.maximum(H1 @ W2 + b2, 0.0)
    err = H2 @ w3 + b3[0] - y
    return float(np.mean(err * err))


def predict_two_layer(X, W1, b1, w2, b2):
    return np.maximum(X @ W1 + b1, 0.0) @ w2 + b2[0]


def predict_three_layer(X, W1, b1, W2, b2, w3, b3):
    H1 = np.maximum(X @ W1 + b1, 0.0)
    H2 = np.maximum(H1 @ W2 + b2, 0.0)
    return H2 @ w3 + b3[0]


# ---------------------------------------------------------------------------
# numba backend: same math, explicit loops
# ---------------------------------------------------------------------------

if USING_NUMBA:

    @_numba.njit(cache=True)
    def _train_two_layer_numba(X, y, W1, b1, w2, b2, lr, momentum, epochs):
        K, d = X.shape
        h = b1.shape[0]
        H = np.zeros((K, h))
        mask = np.zeros((K, h))
        dp = np.zeros(K)
        vW1 = np.zeros_like(W1)
        vb1 = np.zeros_like(b1)
        vw2 = np.zeros_like(w2)
        vb2 = 0.0
        for t in range(epochs):
            step = lr * 0.5 * (1.0 + math.cos(math.pi * t / epochs))
            gb2 = 0.0
            for i in range(K):
                p = b2[0]
                for j in range(h):
                    s = b1[j]
                    for k in range(d):
                        s += X[i, k] * W1[k, j]
                    if s > 0.0:
                        H[i, j] = s
                        mask[i, j] = 1.0
                    else:
                        H[i, j] = 0.0
                        mask[i, j] = 0.0
                    p += H[i, j] * w2[j]
                dp[i] = (2.0 / K) * (p - y[i])
                gb2 += dp[i]
            for j in range(h):
                gw2 = 0.0
                for i in range(K):
                    gw2 += H[i, j] * dp[i]
                vw2[j] = momentum * vw2[j] - step * gw2
            for j in range(h):
                gb1 = 0.0
                for i in range(K):
                    gb1 += dp[i] * w2[j] * mask[i, j]
                for k in range(d):
                    g = 0.0
                    for i in range(K):
                        g += X[i, k] * dp[i] * w2[j] * mask[i, j]
                    vW1[k, j] = momentum * vW1[k, j] - step * g
                    W1[k, j] += vW1[k, j]
                vb1[j] = momentum * vb1[j] - step * gb1
                b1[j] += vb1[j]
                w2[j] += vw2[j]
            vb2 = momentum * vb2 - step * gb2
            b2[0] += vb2
        loss = 0.0
        for i in range(K):
            p = b2[0]
            for j in range(h):
                s = b1[j]
                for k in range(d):
                    s += X[i, k] * W1[k, j]
                if s > 0.0:
                    p += s * w2[j]
            e = p - y[i]
            loss += e * e
        return loss / K

    @_numba.njit(cache=True)
    def _train_three_layer_numba(X, y, W1, b1, W2, b2, w3, b3, lr, momentum, epochs):
        K, d = X.shape
        d1 = b1.shape[0]
        d2 = b2.shape[0]
        H1 = np.zeros((K, d1))
        m1 = np.zeros((K, d1))
        H2 = np.zeros((K, d2))
        m2 = np.zeros((K, d2))
        dp = np.zeros(K)
        dH2 = np.zeros((K, d2))
        dH1 = np.zeros((K, d1))
        vW1 = np.zeros_like(W1)
        vb1 = np.zeros_like(b1)
        vW2 = np.zeros_like(W2)
        vb2 = np.zeros_like(b2)
        vw3 = np.zeros_like(w3)
        vb3 = 0.0
        for t in range(epochs):
            step = lr * 0.5 * (1.0 + math.cos(math.pi * t / epochs))
            gb3 = 0.0
            for i in range(K):
                for j in range(d1):
                    s = b1[j]
                    for k in range(d):
                        s += X[i, k] * W1[k, j]
                    if s > 0.0:
                        H1[i, j] = s
                        m1[i, j] = 1.0
                    else:
                        H1[i, j] = 0.0
                        m1[i, j] = 0.0
                p = b3[0]
                for j in range(d2):
                    s = b2[j]
                    for k in range(d1):
                        s += H1[i, k] * W2[k, j]
                    if s > 0.0:
                        H2[i, j] = s
                        m2[i, j] = 1.0
                    else:
                        H2[i, j] = 0.0
                        m2[i, j] = 0.0
                    p += H2[i, j] * w3[j]
                dp[i] = (2.0 / K) * (p - y[i])
                gb3 += dp[i]
            for i in range(K):
                for j in range(d2):
                    dH2[i, j] = dp[i] * w3[j] * m2[i, j]
                for j in range(d1):
                    s = 0.0
                    for k in range(d2):
                        s += dH2[i, k] * W2[j, k]
                    dH1[i, j] = s * m1[i, j]
            for j in range(d2):
                g = 0.0
                for i in range(K):
                    g += H2[i, j] * dp[i]
                vw3[j] = momentum * vw3[j] - step * g
                gb = 0.0
                for i in range(K):
                    gb += dH2[i, j]
                vb2[j] = momentum * vb2[j] - step * gb
                for k in range(d1):
                    g = 0.0
                    for i in range(K):
                        g += H1[i, k] * dH2[i, j]
                    vW2[k, j] = momentum * vW2[k, j] - step * g
                    W2[k, j] += vW2[k, j]
                b2[j] += vb2[j]
                w3[j] += vw3[j]
            for j in range(d1):
                gb = 0.0
                for i in range(K):
                    gb += dH1[i, j]
                vb1[j] = momentum * vb1[j] - step * gb
                for k in range(d):
                    g = 0.0
                    for i in range(K):
                        g += X[i, k] * dH1[i, j]
                    vW1[k, j] = momentum * vW1[k, j] - step * g
                    W1[k, j] += vW1[k, j]
                b1[j] += vb1[j]
            vb3 = momentum * vb3 - step * gb3
            b3[0] += vb3
        loss = 0.0
        for i in range(K):
            for j in range(d1):
                s = b1[j]
                for k in range(d):
                    s += X[i, k] * W1[k, j]
                H1[i, j] = s if s > 0.0 else 0.0
            p = b3[0]
            for j in range(d2):
                s = b2[j]
                for k in range(d1):
                    s += H1[i, k] * W2[k, j]
                if s > 0.0:
                    p += s * w3[j]
            e = p - y[i]
            loss += e * e
        return loss / K

    train_two_layer = _train_two_layer_numba
    train_three_layer = _train_three_layer_numba
else:
    train_two_layer = train_two_layer_numpy
    train_three_layer = train_three_layer_numpy
