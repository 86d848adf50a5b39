"""Brute-force reference implementations used as independent oracles.

Everything here works on plain numpy arrays for a single sequence ``(T, d)``
with explicit Python loops, sharing no code with the autodiff path.
"""

from __future__ import annotations

import math

import numpy as np


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def naive_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n, k = A.shape
    k2, m = B.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += A[i, t] * B[t, j]
            out[i, j] = s
    return out


def naive_layer_norm(x, gamma, beta, eps=1e-5):
    T, d = x.shape
    out = np.zeros_like(x)
    for t in range(T):
        mu = sum(x[t]) / d
        var = sum((v - mu) ** 2 for v in x[t]) / d
        for c in range(d):
            out[t, c] = (x[t, c] - mu) / math.sqrt(var + eps) * gamma[c] + beta[c]
    return out


def naive_depthwise_conv1d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    T, d = x.shape
    k = kernel.shape[0]
    half = k // 2
    out = np.zeros((T, d))
    for c in range(d):
        for t in range(T):
            s = 0.0
            for j in range(k):
                src = t + j - half
                if 0 <= src < T:
                    s += x[src, c] * kernel[j, c]
            out[t, c] = s
    return out


def naive_dynamic_relu(x, G, W1, W2, base_slopes=(1.0, 0.0), base_intercepts=(0.0, 0.0),
                       lambda_slope=1.0, lambda_intercept=0.5):
    T, d = x.shape
    K = len(base_slopes)
    pooled = [sum(G[t, c] for t in range(T)) / T for c in range(d)]
    hidden = [max(0.0, sum(pooled[c] * W1[c, h] for c in range(d))) for h in range(W1.shape[1])]
    theta = [2.0 * _sigmoid(sum(hidden[h] * W2[h, j] for h in range(len(hidden)))) - 1.0
             for j in range(W2.shape[1])]
    out = np.zeros((T, d))
    for t in range(T):
        for c in range(d):
            best = -math.inf
            for k in range(K):
                a = base_slopes[k] + lambda_slope * theta[k * d + c]
                b = base_intercepts[k] + lambda_intercept * theta[(K + k) * d + c]
                best = max(best, a * x[t, c] + b)
            out[t, c] = best
    return out


def naive_squeeze_excitation(x, W_down, W_up):
    T, d = x.shape
    pooled = [sum(x[t, c] for t in range(T)) / T for c in range(d)]
    hidden = [max(0.0, sum(pooled[c] * W_down[c, h] for c in range(d))) for h in range(W_down.shape[1])]
    gates = [_sigmoid(sum(hidden[h] * W_up[h, c] for h in range(len(hidden)))) for c in range(d)]
    out = np.zeros_like(x)
    for t in range(T):
        for c in range(d):
            out[t, c] = x[t, c] * gates[c]
    return out


def sinusoid(offset: float, d: int) -> np.ndarray:
    row = np.zeros(d)
    for i in range(d // 2):
        freq = 10000.0 ** (-(2 * i) / d)
        row[2 * i] = math.sin(offset * freq)
        row[2 * i + 1] = math.cos(offset * freq)
    return row


def naive_relative_attention(x, W_q, W_k, W_v, W_o, W_pos, u, v, heads, mask=None):
    """Per head, per query/key pair scoring with the relative term r_{i-j}."""
    T, d = x.shape
    dk = d // heads
    q, k, val = naive_matmul(x, W_q), naive_matmul(x, W_k), naive_matmul(x, W_v)
    valid = [True] * T if mask is None else [bool(m) for m in mask]
    concat = np.zeros((T, d))
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        for i in range(T):
            scores = []
            for j in range(T):
                r = naive_matmul(sinusoid(i - j, d)[None, :], W_pos)[0, sl]
                content = sum((q[i, sl][m] + u[sl][m]) * k[j, sl][m] for m in range(dk))
                position = sum((q[i, sl][m] + v[sl][m]) * r[m] for m in range(dk))
                scores.append((content + position) / math.sqrt(dk))
            top = max(s for s, ok in zip(scores, valid) if ok)
            weights = [math.exp(s - top) if ok else 0.0 for s, ok in zip(scores, valid)]
            z = sum(weights)
            for m in range(dk):
                concat[i, h * dk + m] = sum(weights[j] / z * val[j, sl][m] for j in range(T))
    return naive_matmul(concat, W_o)


def naive_standard_attention(x, W_q, W_k, W_v, W_o, heads):
    """Plain scaled dot-product multi-head attention without position terms."""
    T, d = x.shape
    dk = d // heads
    q, k, val = naive_matmul(x, W_q), naive_matmul(x, W_k), naive_matmul(x, W_v)
    concat = np.zeros((T, d))
    for h in range(heads):
        cols = range(h * dk, (h + 1) * dk)
        for i in range(T):
            logits = [sum(q[i, c] * k[j, c] for c in cols) / math.sqrt(dk) for j in range(T)]
            top = max(logits)
            w = [math.exp(s - top) for s in logits]
            z = sum(w)
            for c in cols:
                concat[i, c] = sum(w[j] / z * val[j, c] for j in range(T))
    return naive_matmul(concat, W_o)


def naive_sfm_weights(L, G, W_f, W_u1, W_u2):
    T, d = L.shape
    X = [[*L[t], *G[t]] for t in range(T)]
    I = [sum(X[t][m] for t in range(T)) / T for m in range(2 * d)]
    c = W_f.shape[1]
    Xhat = [max(0.0, sum(I[m] * W_f[m, h] for m in range(2 * d))) for h in range(c)]
    X1 = [sum(Xhat[h] * W_u1[h, j] for h in range(c)) for j in range(d)]
    X2 = [sum(Xhat[h] * W_u2[h, j] for h in range(c)) for j in range(d)]
    alpha = []
    for j in range(d):
        top = max(X1[j], X2[j])
        e1, e2 = math.exp(X1[j] - top), math.exp(X2[j] - top)
        alpha.append(e1 / (e1 + e2))
    return np.array(alpha)


def naive_sfm(L, G, W_f, W_u1, W_u2, W_down, W_up):
    T, d = L.shape
    alpha = naive_sfm_weights(L, G, W_f, W_u1, W_u2)
    Y = np.zeros((T, d))
    for t in range(T):
        for j in range(d):
            Y[t, j] = alpha[j] * L[t, j] + (1.0 - alpha[j]) * G[t, j]
    return naive_squeeze_excitation(Y, W_down, W_up)


def naive_conv2d_stride2(x, W, b):
    """x: (T, F, Cin); W: (3, 3, Cin, Cout); zero padding 1, stride 2."""
    T, F, cin = x.shape
    cout = W.shape[3]
    To, Fo = (T + 1) // 2, (F + 1) // 2
    out = np.zeros((To, Fo, cout))
    for i in range(To):
        for j in range(Fo):
            for o in range(cout):
                s = b[o]
                for a in range(3):
                    for c in range(3):
                        ti, fj = 2 * i + a - 1, 2 * j + c - 1
                        if 0 <= ti < T and 0 <= fj < F:
                            for ch in range(cin):
                                s += x[ti, fj, ch] * W[a, c, ch, o]
                out[i, j, o] = s
    return out


def naive_subsample(features, conv1_W, conv1_b, conv2_W, conv2_b, proj_W, proj_b):
    h = np.maximum(naive_conv2d_stride2(features[:, :, None], conv1_W, conv1_b), 0.0)
    h = np.maximum(naive_conv2d_stride2(h, conv2_W, conv2_b), 0.0)
    flat = h.reshape(h.shape[0], -1)
    return naive_matmul(flat, proj_W) + proj_b
