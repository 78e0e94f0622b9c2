"""Central finite-difference gradient oracle.

Uses forward passes only, so it stays independent of the backward rules it
checks. Perturbing a parameter of layer ``L`` cannot change anything upstream
of ``L``, so those evaluations re-run only layers ``L:`` from a cached input.

Piecewise-linear layers (ReLU, max-pool) make the loss non-differentiable on
a measure-zero set. A central difference whose stencil straddles such a kink
measures a secant, not the gradient; each component records whether any ReLU
gate or pool winner changed inside its stencil (``crossed``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor import _windows


@dataclass
class FDComponent:
    where: str
    index: int
    analytic: float
    numeric: float
    crossed: bool

    @property
    def magnitude(self) -> float:
        return max(abs(self.analytic), abs(self.numeric))

    @property
    def rel_error(self) -> float:
        m = self.magnitude
        return abs(self.analytic - self.numeric) / m if m > 0 else 0.0


def _pattern(net: nn.Network, start: int, inputs, pre) -> list[np.ndarray]:
    out = []
    for spec, x_in, z in zip(net.layers[start:], inputs, pre):
        if z is not None and (isinstance(spec, nn.ReLU) or getattr(spec, "activation", None) == "relu"):
            out.append(z > 0)
        elif isinstance(spec, nn.MaxPool):
            w = _windows(x_in, spec.size, spec.size, spec.stride)
            n, oh, ow, _, _, c = w.shape
            out.append(w.transpose(0, 1, 2, 5, 3, 4).reshape(n, oh, ow, c, -1).argmax(-1))
    return out


def _loss(probs: np.ndarray, label: int) -> float:
    return float(-np.log(max(float(probs[0, label]), nn.PROB_FLOOR)))


def finite_difference_check(net: nn.Network, x: np.ndarray, label: int, step: float = 1e-2) -> list[FDComponent]:
    """Compare ``backward`` against central differences for every input and parameter component.

    Works in eval mode (dropout off). The network and ``x`` are restored on return.
    """
    probs, trace = nn.forward(net, x, "eval")
    grads = nn.backward(net, trace, label)

    # cache layer inputs and base activation patterns from one plain forward
    base_probs, inputs, pre = nn.forward_from(net, x[None], 0)
    base_pat = _pattern(net, 0, inputs, pre)

    def evaluate(start: int, h_in: np.ndarray):
        p, ins, zs = nn.forward_from(net, h_in, start)
        return _loss(p, label), _pattern(net, start, ins, zs)

    def same(start, pat):
        # the pattern list for layers start: is a suffix of the base list
        tail = base_pat[len(base_pat) - len(pat):]
        return all(np.array_equal(a, b) for a, b in zip(pat, tail))

    out: list[FDComponent] = []

    xf = np.array(x, copy=True)
    flat = xf.reshape(-1)
    g_in = grads.input_grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        lp, sp = evaluate(0, xf[None])
        flat[j] = orig - step
        lm, sm = evaluate(0, xf[None])
        flat[j] = orig
        num = (lp - lm) / (2 * step)
        out.append(FDComponent("input", j, float(g_in[j]), num, not (same(0, sp) and same(0, sm))))

    for i, p in enumerate(net.params):
        h_in = inputs[i]
        for key in ("kernel", "bias"):
            if key not in p:
                continue
            arr = p[key].reshape(-1)
            g = grads.param_grads[i][key].reshape(-1)
            for j in range(arr.size):
                orig = arr[j]
                arr[j] = orig + step
                lp, sp = evaluate(i, h_in)
                arr[j] = orig - step
                lm, sm = evaluate(i, h_in)
                arr[j] = orig
                num = (lp - lm) / (2 * step)
                out.append(FDComponent(f"layer{i}.{key}", j, float(g[j]), num, not (same(i, sp) and same(i, sm))))
    return out
