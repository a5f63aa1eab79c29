"""Independent reference computations used as test oracles.

Nothing here imports the library's numerical code paths.
"""
import math

import numpy as np


def mcc_gorodkin(c):
    """R_K via the triple-sum definition over a square confusion matrix."""
    c = [[int(v) for v in row] for row in c]
    k = len(c)
    num = 0
    for a in range(k):
        for b in range(k):
            for m in range(k):
                num += c[a][a] * c[b][m] - c[a][b] * c[m][a]
    left = 0
    right = 0
    total = sum(map(sum, c))
    for a in range(k):
        row = sum(c[a])
        col = sum(c[b][a] for b in range(k))
        left += row * (total - row)
        right += col * (total - col)
    if left == 0 or right == 0:
        return 0.0
    return num / (math.sqrt(left) * math.sqrt(right))


def mcc_binary(tp, tn, fp, fn):
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def central_difference(f, arr, h=1e-6):
    """Numerical gradient of scalar f() w.r.t. array ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def brute_pool(values, strategy):
    """Pool by explicit loops over layers and tokens."""
    n_layers, n_tokens, hdim = values.shape

    def layer_mean(layer):
        acc = [0.0] * hdim
        for t in range(n_tokens):
            for d in range(hdim):
                acc[d] += float(values[layer, t, d])
        return [a / n_tokens for a in acc]

    if strategy == "4-sum":
        means = [layer_mean(n_layers - 4 + i) for i in range(4)]
        vec = [sum(m[d] for m in means) / 4 for d in range(hdim)]
    elif strategy == "4-cat":
        vec = [x for i in range(4) for x in layer_mean(n_layers - 4 + i)]
    elif strategy == "last":
        vec = layer_mean(n_layers - 1)
    else:
        vec = layer_mean(n_layers - 2)
    norm = math.sqrt(sum(v * v for v in vec))
    return np.array([v / norm for v in vec])


def scalar_forward(x, p, eps=1e-5):
    """Eval-mode SE-MLP forward on one row using only Python floats."""

    def matvec(w, v, b):
        return [sum(wi * vi for wi, vi in zip(row, v)) + bi for row, bi in zip(w, b)]

    relu = lambda v: [max(0.0, a) for a in v]
    a1 = relu(matvec(p["se1_w"], x, p["se1_b"]))
    gate = [1.0 / (1.0 + math.exp(-z)) for z in matvec(p["se2_w"], a1, p["se2_b"])]
    xs = [xi * gi for xi, gi in zip(x, gate)]
    u = matvec(p["fc1_w"], xs, p["fc1_b"])
    v = [
        g * (ui - m) / math.sqrt(var + eps) + b
        for ui, m, var, g, b in zip(u, p["bn_running_mean"], p["bn_running_var"], p["bn_gamma"], p["bn_beta"])
    ]
    logits = matvec(p["fc2_w"], relu(v), p["fc2_b"])
    mx = max(logits)
    e = [math.exp(z - mx) for z in logits]
    s = sum(e)
    return [ei / s for ei in e]


def gradient_relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor), maximum over the array.

    The floor keeps exactly-zero gradients (e.g. a bias feeding batch norm)
    from turning finite-difference round-off (~1e-11) into a large ratio.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
