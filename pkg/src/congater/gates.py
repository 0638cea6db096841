"""Gated adapter modules with a trajectory-sigmoid activation.

The trajectory sigmoid interpolates, via a sensitivity knob omega in [0, 1],
between a constant open gate (omega = 0, the module vanishes) and a standard
sigmoid gate (omega = 1, full effect):

    t_sigmoid(x, omega) = 1 - log2(omega + 1) / (1 + exp(x))

which rearranges to (1 - c) + c * sigmoid(x) with c = log2(omega + 1).  The
rearranged form is what we compute: at omega = 1, c is exactly 1.0 and the
expression collapses to sigmoid(x) with no extra rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from congater import tensor
from congater.tensor import Tensor


@dataclass(frozen=True)
class GateSensitivity:
    """A validated omega value; construction rejects anything outside [0, 1]."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (math.isfinite(v) and 0.0 <= v <= 1.0):
            raise ValueError(f"gate sensitivity must lie in [0, 1], got {self.value!r}")
        object.__setattr__(self, "value", v)


def check_omega(omega: float | GateSensitivity) -> float:
    if isinstance(omega, GateSensitivity):
        return omega.value
    return GateSensitivity(omega).value


def t_sigmoid(x: Tensor, omega: float | GateSensitivity) -> Tensor:
    """Trajectory sigmoid: constant 1 at omega = 0, plain sigmoid at omega = 1."""
    w = check_omega(omega)
    if w == 0.0:
        # The gate is exactly all-ones and carries no gradient to x.
        return Tensor(np.ones_like(x.values))
    c = math.log2(w + 1.0)
    return tensor.sigmoid(x) * c + (1.0 - c)


class ConGaterLayer:
    """Bottleneck gate: h -> h * t_sigmoid(W2 tanh(W1 h + b1) + b2, omega).

    The second bias starts at +4 so the initial gate sits near 1 (sigmoid(4)
    is about 0.982) and training starts close to the identity.
    """

    def __init__(self, hidden: int, bottleneck_factor: int, rng: np.random.Generator):
        if hidden < 1 or bottleneck_factor < 1:
            raise ValueError(f"bad gate dimensions: hidden={hidden}, factor={bottleneck_factor}")
        bottleneck = max(1, hidden // bottleneck_factor)
        self.hidden = hidden
        self.bottleneck = bottleneck
        scale_in = 1.0 / math.sqrt(hidden)
        scale_mid = 1.0 / math.sqrt(bottleneck)
        self.w1 = Tensor(rng.uniform(-scale_in, scale_in, (hidden, bottleneck)), requires_grad=True)
        self.b1 = Tensor(np.zeros(bottleneck), requires_grad=True)
        self.w2 = Tensor(rng.uniform(-scale_mid, scale_mid, (bottleneck, hidden)), requires_grad=True)
        self.b2 = Tensor(np.full(hidden, 4.0), requires_grad=True)

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def gate(self, h: Tensor, omega: float | GateSensitivity) -> Tensor:
        """The gate vector itself; all-ones (exactly) at omega = 0."""
        w = check_omega(omega)
        if w == 0.0:
            return Tensor(np.ones_like(h.values))
        pre = tensor.tanh(h @ self.w1 + self.b1) @ self.w2 + self.b2
        return t_sigmoid(pre, w)

    def __call__(self, h: Tensor, omega: float | GateSensitivity) -> Tensor:
        w = check_omega(omega)
        if w == 0.0:
            # Bit-identical pass-through: the module is absent at omega = 0.
            return h
        return h * self.gate(h, w)


def fuse_gates(gates: list[Tensor]) -> Tensor:
    """Elementwise product of gates from several attribute modules.

    The reduction multiplies in a canonical order derived from the gate
    values, so permuting the input list cannot change the result even at
    the last bit.
    """
    if not gates:
        raise ValueError("fuse_gates needs at least one gate")
    shapes = {g.shape for g in gates}
    if len(shapes) != 1:
        raise tensor.ShapeError(f"gates must share a shape, got {sorted(shapes)}")
    order = sorted(range(len(gates)), key=lambda i: gates[i].values.tobytes())
    fused = gates[order[0]]
    for i in order[1:]:
        fused = fused * gates[i]
    return fused


class AdapterLayer:
    """Plain bottleneck adapter baseline: h -> h + up(tanh(down(h))).

    The up-projection starts at zero, so a freshly built adapter is the
    identity.  There is no omega knob; the module is always fully on.
    """

    def __init__(self, hidden: int, bottleneck_factor: int, rng: np.random.Generator):
        if hidden < 1 or bottleneck_factor < 1:
            raise ValueError(f"bad adapter dimensions: hidden={hidden}, factor={bottleneck_factor}")
        bottleneck = max(1, hidden // bottleneck_factor)
        self.hidden = hidden
        self.bottleneck = bottleneck
        scale_in = 1.0 / math.sqrt(hidden)
        self.down = Tensor(rng.uniform(-scale_in, scale_in, (hidden, bottleneck)), requires_grad=True)
        self.down_bias = Tensor(np.zeros(bottleneck), requires_grad=True)
        self.up = Tensor(np.zeros((bottleneck, hidden)), requires_grad=True)
        self.up_bias = Tensor(np.zeros(hidden), requires_grad=True)

    def params(self) -> list[Tensor]:
        return [self.down, self.down_bias, self.up, self.up_bias]

    def __call__(self, h: Tensor) -> Tensor:
        return h + (tensor.tanh(h @ self.down + self.down_bias) @ self.up + self.up_bias)
