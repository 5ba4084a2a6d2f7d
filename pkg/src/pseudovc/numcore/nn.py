"""Layer primitives (conv1d, GRU) and parameter initialisation."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .tensor import ShapeError, Tensor, _make, add, linear

__all__ = ["conv1d", "gru", "bigru", "dense", "conv", "init_linear", "init_conv", "init_gru"]



def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """'Same'-padded 1-D convolution over time.

    x: (B, T, Cin), w: (K, Cin, Cout) with K odd, b: (Cout,).
    """
    if x.ndim != 3 or w.ndim != 3 or x.dims[2] != w.dims[1] or w.dims[0] % 2 == 0:
        raise ShapeError(
            f"conv1d: operand from '{x.op}' has dims {x.dims}, "
            f"operand from '{w.op}' has dims {w.dims}"
        )
    B, T, cin = x.dims
    K, _, cout = w.dims
    pad = K // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    # (B, T, Cin, K) -> (B*T, K*Cin)
    cols = sliding_window_view(xp, K, axis=1).transpose(0, 1, 3, 2).reshape(B * T, K * cin)
    wmat = w.data.reshape(K * cin, cout)
    out = (cols @ wmat).reshape(B, T, cout)

    def bw(g):
        g2 = g.reshape(B * T, cout)
        gw = (cols.T @ g2).reshape(K, cin, cout)
        gcols = (g2 @ wmat.T).reshape(B, T, K, cin)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, k:k + T] += gcols[:, :, k]
        return gxp[:, pad:pad + T], gw

    y = _make(out, (x, w), "conv1d", bw)
    return y if b is None else add(y, b)


def _gru_scan(xproj: Tensor, w_hh: Tensor, b_hh: Tensor, reverse: bool) -> Tensor:
    H = w_hh.dims[0]
    if xproj.ndim != 3 or xproj.dims[2] != 3 * H or w_hh.dims != (H, 3 * H) or b_hh.dims != (3 * H,):
        raise ShapeError(
            f"gru: operand from '{xproj.op}' has dims {xproj.dims}, "
            f"operand from '{w_hh.op}' has dims {w_hh.dims}"
        )
    hs, cache = kernels.gru_forward(xproj.data, w_hh.data, b_hh.data, reverse)

    def bw(g):
        dx, dw, db = kernels.gru_backward(g, hs, cache, w_hh.data, reverse)
        return dx, dw, db

    return _make(hs, (xproj, w_hh, b_hh), "gru", bw)


def gru(x: Tensor, p, prefix: str, reverse: bool = False) -> Tensor:
    """Single-direction GRU over (B, T, Cin) -> (B, T, H), zero initial state."""
    xproj = linear(x, p[f"{prefix}.w_ih"], p[f"{prefix}.b_ih"])
    return _gru_scan(xproj, p[f"{prefix}.w_hh"], p[f"{prefix}.b_hh"], reverse)


def bigru(x: Tensor, p, prefix: str) -> tuple[Tensor, Tensor]:
    return gru(x, p, f"{prefix}.fwd"), gru(x, p, f"{prefix}.bwd", reverse=True)


# ---------------------------------------------------------------------------
# initialisation (parameters are plain arrays; forward code wraps them)


def _uniform(rng: np.random.Generator, bound: float, shape, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_linear(p, name: str, n_in: int, n_out: int, rng, dtype=np.float32, bias=True):
    bound = np.sqrt(6.0 / (n_in + n_out))
    p[f"{name}.w"] = _uniform(rng, bound, (n_in, n_out), dtype)
    if bias:
        p[f"{name}.b"] = np.zeros(n_out, dtype=dtype)


def init_conv(p, name: str, k: int, c_in: int, c_out: int, rng, dtype=np.float32):
    bound = np.sqrt(6.0 / (k * c_in + c_out))
    p[f"{name}.w"] = _uniform(rng, bound, (k, c_in, c_out), dtype)
    p[f"{name}.b"] = np.zeros(c_out, dtype=dtype)


def init_gru(p, name: str, n_in: int, hidden: int, rng, dtype=np.float32):
    bound = 1.0 / np.sqrt(hidden)
    p[f"{name}.w_ih"] = _uniform(rng, bound, (n_in, 3 * hidden), dtype)
    p[f"{name}.b_ih"] = _uniform(rng, bound, (3 * hidden,), dtype)
    p[f"{name}.w_hh"] = _uniform(rng, bound, (hidden, 3 * hidden), dtype)
    p[f"{name}.b_hh"] = _uniform(rng, bound, (3 * hidden,), dtype)


def dense(x: Tensor, p, name: str) -> Tensor:
    return linear(x, p[f"{name}.w"], p.get(f"{name}.b"))


def conv(x: Tensor, p, name: str) -> Tensor:
    return conv1d(x, p[f"{name}.w"], p[f"{name}.b"])

