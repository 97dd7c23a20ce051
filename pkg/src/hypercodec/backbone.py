"""Frame-wise adapter and a diagonal selective state-space sequence model.

Each SSM layer computes, per channel,

    delta_t = softplus(W_delta u_t + b_delta)
    abar_t  = exp(delta_t * a),          a = -exp(a_log) < 0
    s_t     = abar_t * s_{t-1} + delta_t * (W_B u_t) * u_t,   s_0 = 0
    y_t     = (W_C u_t) * s_t + skip * u_t

followed by a residual add and layer norm.  ``z_t`` depends on ``u_1..u_t`` only.
"""

from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .diffcore import Node, Param
from .errors import StructuralError

# abar = 0.9 at delta = softplus(0) = ln 2
A_LOG_INIT = math.log(-math.log(0.9) / math.log(2.0))


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Adapter:
    def __init__(self, input_dim: int, model_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.weight = Param("adapter.weight", uniform_init(rng, (model_dim, input_dim), input_dim))
        self.bias = Param("adapter.bias", np.zeros(model_dim))

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def __call__(self, tape, x: Node) -> Node:
        if x.value.ndim != 2 or x.shape[1] != self.input_dim:
            raise StructuralError(f"adapter expects (T, {self.input_dim}) features, got {x.shape}")
        if x.shape[0] < 1:
            raise StructuralError("feature sequence must contain at least one frame")
        return dc.linear(tape, x, self.weight, self.bias)


def selective_scan(tape, delta: Node, a_log: Node, bu: Node, cu: Node, u: Node, skip: Node) -> Node:
    """The gated recurrence of one layer as a single primitive with a hand-written backward."""
    a = -np.exp(a_log.value)
    abar = np.exp(delta.value * a)
    drive = delta.value * bu.value * u.value
    T, d = drive.shape
    states = np.empty((T, d))
    s = np.zeros(d)
    for t in range(T):
        s = abar[t] * s + drive[t]
        states[t] = s
    y = cu.value * states + skip.value * u.value
    out = dc._out(y, tape, delta, a_log, bu, cu, u, skip)
    if out.requires_grad:
        def back():
            if not dc._live(out):
                return
            gy = out.grad
            gcs = gy * cu.value
            gs = np.empty((T, d))
            carry = np.zeros(d)
            for t in range(T - 1, -1, -1):
                carry = gcs[t] + carry
                gs[t] = carry
                carry = carry * abar[t]
            prev = np.vstack([np.zeros((1, d)), states[:-1]])
            gabar = gs * prev * abar
            cu.accumulate(gy * states)
            skip.accumulate(np.sum(gy * u.value, axis=0))
            delta.accumulate(gabar * a + gs * bu.value * u.value)
            a_log.accumulate(np.sum(gabar * delta.value, axis=0) * a)
            bu.accumulate(gs * delta.value * u.value)
            u.accumulate(gy * skip.value + gs * delta.value * bu.value)
        tape.record(back)
    return out


class SsmLayer:
    def __init__(self, index: int, dim: int, rng: np.random.Generator):
        p = f"ssm.{index}."
        self.a_log = Param(p + "a_log", np.full(dim, A_LOG_INIT))
        self.w_delta = Param(p + "w_delta", uniform_init(rng, (dim, dim), dim))
        self.b_delta = Param(p + "b_delta", np.zeros(dim))
        self.w_b = Param(p + "w_b", uniform_init(rng, (dim, dim), dim))
        self.w_c = Param(p + "w_c", uniform_init(rng, (dim, dim), dim))
        self.skip = Param(p + "skip", np.ones(dim))
        self.ln_gain = Param(p + "ln_gain", np.ones(dim))
        self.ln_shift = Param(p + "ln_shift", np.zeros(dim))

    def params(self) -> list[Param]:
        return [self.a_log, self.w_delta, self.b_delta, self.w_b, self.w_c,
                self.skip, self.ln_gain, self.ln_shift]

    def __call__(self, tape, u: Node) -> Node:
        delta = dc.softplus(tape, dc.linear(tape, u, self.w_delta, self.b_delta))
        bu = dc.linear(tape, u, self.w_b)
        cu = dc.linear(tape, u, self.w_c)
        y = selective_scan(tape, delta, self.a_log, bu, cu, u, self.skip)
        return dc.layer_norm(tape, dc.add(tape, u, y), self.ln_gain, self.ln_shift)


class Backbone:
    def __init__(self, n_layers: int, dim: int, rng: np.random.Generator):
        self.layers = [SsmLayer(i, dim, rng) for i in range(n_layers)]

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def __call__(self, tape, u: Node) -> Node:
        z = u
        for layer in self.layers:
            z = layer(tape, z)
        return z
