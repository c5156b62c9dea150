"""Independent oracles and helpers shared by the test modules.

Everything here deliberately avoids the package's computation paths:
plain Python loops and direct numpy formulas only.
"""

from __future__ import annotations

import math

import numpy as np

from mssan.tensor import Tensor


def matmul_loops(a, b):
    """Triple-loop matrix product."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def softmax_scalar(row):
    """Scalar exp/sum softmax of one sequence."""
    m = max(row)
    es = [math.exp(v - m) for v in row]
    s = sum(es)
    return [e / s for e in es]


def floyd_warshall(heads):
    """All-pairs shortest paths on the undirected tree edges."""
    l = len(heads)
    inf = float("inf")
    d = [[0.0 if i == j else inf for j in range(l)] for i in range(l)]
    for i, h in enumerate(heads):
        if h:
            d[i][h - 1] = 1.0
            d[h - 1][i] = 1.0
    for k in range(l):
        for i in range(l):
            for j in range(l):
                if d[i][k] + d[k][j] < d[i][j]:
                    d[i][j] = d[i][k] + d[k][j]
    return np.asarray(d)


def random_tree_heads(rng, l):
    """Random rooted tree over l tokens, root at a random position."""
    parent = [0] * l
    for v in range(1, l):
        parent[v] = int(rng.integers(0, v))
    order = [int(v) for v in rng.permutation(l)]
    pos = {v: p for p, v in enumerate(order)}
    return [0 if v == 0 else pos[parent[v]] + 1 for v in order]


def mha_reference(x, query, key, value, out, masks=None):
    """Straightforward multi-head attention in plain numpy."""
    n = len(query)
    heads = []
    for h in range(n):
        q = x @ query[h]
        k = x @ key[h]
        v = x @ value[h]
        logits = q @ k.T / math.sqrt(q.shape[1])
        if masks is not None:
            logits = logits + masks[h]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        heads.append(w @ v)
    return np.concatenate(heads, axis=1) @ out


def relative_error(a, n):
    """Max abs difference scaled by the largest magnitude (floor 1)."""
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(n).max(initial=0.0)))
    return float(np.abs(a - n).max(initial=0.0)) / scale


def numeric_gradient(loss_fn, tensor: Tensor, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued closure wrt one tensor."""
    flat = tensor.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = loss_fn()
        flat[i] = keep - step
        down = loss_fn()
        flat[i] = keep
        out[i] = (up - down) / (2.0 * step)
    return out.reshape(tensor.data.shape)
