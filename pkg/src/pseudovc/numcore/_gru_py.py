"""Pure-numpy GRU scan; the reference the compiled kernel must match.

Gate layout along the last axis of the 3H projections is ``[reset, update, candidate]``.
"""

import numpy as np


def _sig(v):
    return 0.5 * (np.tanh(0.5 * v) + 1)


def gru_forward(xproj, w_hh, b_hh, reverse):
    B, T, H3 = xproj.shape
    H = H3 // 3
    dt = xproj.dtype
    hs = np.empty((B, T, H), dtype=dt)
    r_all = np.empty((B, T, H), dtype=dt)
    z_all = np.empty((B, T, H), dtype=dt)
    n_all = np.empty((B, T, H), dtype=dt)
    hn_all = np.empty((B, T, H), dtype=dt)
    h = np.zeros((B, H), dtype=dt)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        gh = h @ w_hh + b_hh
        x = xproj[:, t]
        r = _sig(x[:, :H] + gh[:, :H])
        z = _sig(x[:, H:2 * H] + gh[:, H:2 * H])
        hn = gh[:, 2 * H:]
        n = np.tanh(x[:, 2 * H:] + r * hn)
        h = (1 - z) * n + z * h
        hs[:, t] = h
        r_all[:, t] = r
        z_all[:, t] = z
        n_all[:, t] = n
        hn_all[:, t] = hn
    return hs, (r_all, z_all, n_all, hn_all)


def gru_backward(dhs, hs, cache, w_hh, reverse):
    r_all, z_all, n_all, hn_all = cache
    B, T, H = hs.shape
    dt = hs.dtype
    dx = np.empty((B, T, 3 * H), dtype=dt)
    dw = np.zeros_like(w_hh)
    db = np.zeros(3 * H, dtype=dt)
    dh_next = np.zeros((B, H), dtype=dt)
    zeros = np.zeros((B, H), dtype=dt)
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        prev_t = t + 1 if reverse else t - 1
        h_prev = hs[:, prev_t] if 0 <= prev_t < T else zeros
        r, z, n, hn = r_all[:, t], z_all[:, t], n_all[:, t], hn_all[:, t]
        dh = dhs[:, t] + dh_next
        dn = dh * (1 - z)
        dz = dh * (h_prev - n)
        dan = dn * (1 - n * n)
        daz = dz * z * (1 - z)
        dar = dan * hn * r * (1 - r)
        gh = np.concatenate([dar, daz, dan * r], axis=1)
        dx[:, t, :H] = dar
        dx[:, t, H:2 * H] = daz
        dx[:, t, 2 * H:] = dan
        dw += h_prev.T @ gh
        db += gh.sum(axis=0)
        dh_next = dh * z + gh @ w_hh.T
    return dx, dw, db
