"""Hot loops: batched rollouts, row softmax, and per-token gradient scatter.

Each kernel has a loop implementation compiled with numba and a vectorized
numpy implementation. The public functions pick one according to
``RLVR_LAB_DISABLE_NUMBA``; both are importable for benchmarking and
cross-checks.
"""

import numpy as np

from ._accel import USE_NUMBA, optional_njit

LOCK = 0
CHAIN = 1


@optional_njit(cache=True)
def _encode(kind, table, row, t, last, L, V):
    if kind == 0:
        return row * L + t
    return (t * V + table[row, t]) * (V + 1) + last


@optional_njit(cache=True)
def rollout_loops(logits, inv_temp, kind, table, rows, uniforms):
    n, L = uniforms.shape
    V = logits.shape[1]
    tokens = np.empty((n, L), dtype=np.int64)
    probs = np.empty((n, L), dtype=np.float64)
    states = np.empty((n, L), dtype=np.int64)
    buf = np.empty(V, dtype=np.float64)
    for i in range(n):
        row = rows[i]
        last = V
        for t in range(L):
            s = _encode(kind, table, row, t, last, L, V)
            m = logits[s, 0] * inv_temp
            for v in range(1, V):
                z = logits[s, v] * inv_temp
                if z > m:
                    m = z
            total = 0.0
            for v in range(V):
                e = np.exp(logits[s, v] * inv_temp - m)
                buf[v] = e
                total += e
            target = uniforms[i, t] * total
            acc = 0.0
            chosen = V - 1
            for v in range(V):
                acc += buf[v]
                if acc > target:
                    chosen = v
                    break
            tokens[i, t] = chosen
            probs[i, t] = buf[chosen] / total
            states[i, t] = s
            last = chosen
    return tokens, probs, states


def rollout_numpy(logits, inv_temp, kind, table, rows, uniforms):
    n, L = uniforms.shape
    V = logits.shape[1]
    tokens = np.empty((n, L), dtype=np.int64)
    probs = np.empty((n, L), dtype=np.float64)
    states = np.empty((n, L), dtype=np.int64)
    last = np.full(n, V, dtype=np.int64)
    idx = np.arange(n)
    for t in range(L):
        if kind == LOCK:
            s = rows * L + t
        else:
            s = (t * V + table[rows, t]) * (V + 1) + last
        z = logits[s] * inv_temp
        e = np.exp(z - z.max(axis=1, keepdims=True))
        total = e.sum(axis=1)
        hit = np.cumsum(e, axis=1) > (uniforms[:, t] * total)[:, None]
        chosen = np.where(hit.any(axis=1), hit.argmax(axis=1), V - 1)
        tokens[:, t] = chosen
        probs[:, t] = e[idx, chosen] / total
        states[:, t] = s
        last = chosen
    return tokens, probs, states


@optional_njit(cache=True)
def softmax_loops(logits, inv_temp):
    S, V = logits.shape
    out = np.empty((S, V), dtype=np.float64)
    for s in range(S):
        m = logits[s, 0] * inv_temp
        for v in range(1, V):
            z = logits[s, v] * inv_temp
            if z > m:
                m = z
        total = 0.0
        for v in range(V):
            e = np.exp(logits[s, v] * inv_temp - m)
            out[s, v] = e
            total += e
        for v in range(V):
            out[s, v] /= total
    return out


def softmax_numpy(logits, inv_temp):
    z = logits * inv_temp
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@optional_njit(cache=True)
def scatter_loops(probs, states, tokens, weights):
    """grad[s, v] = sum over tokens at s of w * (1[v == token] - p[s, v])."""
    S, V = probs.shape
    grad = np.zeros((S, V), dtype=np.float64)
    n, L = weights.shape
    for i in range(n):
        for t in range(L):
            w = weights[i, t]
            if w == 0.0:
                continue
            s = states[i, t]
            for v in range(V):
                grad[s, v] -= w * probs[s, v]
            grad[s, tokens[i, t]] += w
    return grad


def scatter_numpy(probs, states, tokens, weights):
    S, V = probs.shape
    grad = np.zeros((S, V), dtype=np.float64)
    np.add.at(grad, (states.ravel(), tokens.ravel()), weights.ravel())
    per_state = np.bincount(states.ravel(), weights=weights.ravel(), minlength=S)
    grad -= per_state[:, None] * probs
    return grad


if USE_NUMBA:
    rollout = rollout_loops
    softmax_rows = softmax_loops
    scatter_token_grad = scatter_loops
else:
    rollout = rollout_numpy
    softmax_rows = softmax_numpy
    scatter_token_grad = scatter_numpy
