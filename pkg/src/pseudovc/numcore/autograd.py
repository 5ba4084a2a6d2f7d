"""Whole-graph evaluation helpers: value + gradients, and finite-difference checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .tensor import ShapeError, Tensor, backward, no_grad

Graph = Callable[[dict[str, Tensor]], Tensor]


def _leaves(inputs: Mapping[str, np.ndarray], wrt: set[str], dtype=None) -> dict[str, Tensor]:
    out = {}
    for name, arr in inputs.items():
        arr = np.asarray(arr)
        if dtype is not None and arr.dtype.kind == "f":
            arr = arr.astype(dtype)
        out[name] = Tensor(arr, requires_grad=name in wrt, op=name)
    return out


def forward_backward(
    graph: Graph,
    inputs: Mapping[str, np.ndarray],
    wrt: Iterable[str] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``graph`` on ``inputs`` and return (value, grads for ``wrt``).

    ``wrt`` defaults to every input.  Inputs not reached by the graph get a zero
    gradient.
    """
    names = set(inputs) if wrt is None else set(wrt)
    leaves = _leaves(inputs, names)
    for t in leaves.values():
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"input {t.op!r} contains non-finite values")
    out = graph(leaves)
    if out.data.size != 1:
        raise ShapeError(f"forward_backward: graph output from '{out.op}' is not scalar, dims {out.dims}")
    backward(out)
    grads = {}
    for name in inputs:
        if name in names:
            g = leaves[name].grad
            grads[name] = np.zeros_like(leaves[name].data) if g is None else g
    return float(out.data), grads


@dataclass
class GradReport:
    per_param: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3
    checked: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    graph: Graph,
    inputs: Mapping[str, np.ndarray],
    h: float = 1e-3,
    tol: float = 1e-3,
    wrt: Iterable[str] | None = None,
    max_per_input: int | None = None,
    seed: int = 0,
    dtype=np.float64,
) -> GradReport:
    """Compare analytic gradients against central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``.  Both sides
    are evaluated in ``dtype`` (float64 by default, so the comparison measures
    gradient correctness rather than float32 cancellation noise).  With
    ``max_per_input`` only a seeded random subset of each input's elements is
    perturbed.
    """
    if h <= 0 or tol <= 0:
        raise ValueError("h and tol must be positive")
    names = list(inputs) if wrt is None else list(wrt)
    arrays = {k: (np.array(v, dtype=dtype) if np.asarray(v).dtype.kind == "f" else np.asarray(v))
              for k, v in inputs.items()}
    _, analytic = forward_backward(graph, arrays, wrt=names)

    def f() -> float:
        with no_grad():
            return float(graph(_leaves(arrays, set())).data)

    rng = np.random.default_rng(seed)
    report = GradReport(tol=tol)
    for name in names:
        x = arrays[name]
        flat = x.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_input is not None and flat.size > max_per_input:
            idx = np.sort(rng.choice(flat.size, max_per_input, replace=False))
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = float(a_flat[i])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
        report.per_param[name] = worst
        report.checked += len(idx)
    return report
