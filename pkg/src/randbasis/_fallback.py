"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from scipy.special import expit

GAUSS_CUTOFF_SQ = 707.0


def _gauss(s):
    s2 = s * s
    out = np.exp(-np.minimum(s2, GAUSS_CUTOFF_SQ))
    out[s2 > GAUSS_CUTOFF_SQ] = 0.0
    return out


def _sigmoid(s):
    # 1 / (1 + e^s), accurate in both tails
    return expit(-s)


def _activate(s, kind):
    return _gauss(s) if kind == 0 else _sigmoid(s)


def scan_candidates(w, b, nodes, resid, offset, threshold, cell_weight, kind):
    if len(b) == 0:
        return -1, np.inf, -1, np.inf
    G = _activate(w @ nodes.T + b[:, None], kind)
    vals = cell_weight * (G @ resid) - offset
    best = int(np.argmin(vals))
    hits = np.flatnonzero(vals < threshold)
    if hits.size:
        first = int(hits[0])
        # the compiled scan stops at the first hit, so "best" only covers the prefix
        best = int(np.argmin(vals[: first + 1]))
        return first, float(vals[first]), best, float(vals[best])
    return -1, np.inf, best, float(vals[best])


def tabulate_many(w, b, nodes, kind):
    return _activate(w @ nodes.T + b[:, None], kind)


def mlp_forward(x, w, b, c):
    return _sigmoid(x @ w.T + b) @ c


def mlp_loss_grad(x, y, w, b, c):
    m = x.shape[0]
    sig = _sigmoid(x @ w.T + b)
    r = sig @ c - y
    loss = float(r @ r) / m
    r2 = 2.0 * r / m
    gc = sig.T @ r2
    ds = -(r2[:, None] * c) * sig * (1.0 - sig)
    gb = ds.sum(axis=0)
    gw = ds.T @ x
    return loss, gw, gb, gc
