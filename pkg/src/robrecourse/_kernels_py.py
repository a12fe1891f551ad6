"""Pure numpy implementation of the hot kernels (fallback backend)."""

import numpy as np


def mlp_forward(X, weights, biases, activation):
    acts = []
    h = X
    for W, b in zip(weights[:-1], biases[:-1]):
        z = h @ W
        z += b
        if activation == "tanh":
            np.tanh(z, out=z)
        elif activation == "relu":
            np.maximum(z, 0.0, out=z)
        else:
            raise ValueError(f"unknown activation {activation!r}")
        acts.append(z)
        h = z
    out = h @ weights[-1][:, 0] + biases[-1][0]
    return out, acts


def mlp_backward(gout, X, weights, acts, activation, need_x, need_params):
    L = len(weights)
    gWs = [None] * L
    gbs = [None] * L
    g = gout[:, None]
    last_in = acts[-1] if acts else X
    if need_params:
        gWs[-1] = last_in.T @ g
        gbs[-1] = np.array([gout.sum()])
    if L == 1:
        return (g @ weights[0].T if need_x else None), gWs, gbs
    gh = g @ weights[-1].T
    for l in range(L - 2, -1, -1):
        a = acts[l]
        if activation == "tanh":
            gz = gh * (1.0 - a * a)
        else:
            gz = gh * (a > 0)
        inp = acts[l - 1] if l > 0 else X
        if need_params:
            gWs[l] = inp.T @ gz
            gbs[l] = gz.sum(axis=0)
        if l > 0 or need_x:
            gh = gz @ weights[l].T
    return (gh if need_x else None), gWs, gbs
