"""Fully-connected layers, initialization, and SGD with momentum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import (
    DimensionError,
    NonFiniteError,
    Tensor,
    activation,
    linear,
    log_softmax,
    sigmoid,
)

INIT_SCHEMES = ("glorot_uniform", "he_uniform")
OUTPUT_ACTIVATIONS = ("none", "sigmoid", "log_softmax")


@dataclass
class LinearLayer:
    weight: Tensor  # [out_dim, in_dim]
    bias: Tensor  # [out_dim]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def init_linear(
    in_dim: int, out_dim: int, scheme: str, rng: np.random.Generator
) -> LinearLayer:
    """Uniform fan-based init; bias starts at zero.

    glorot_uniform: bound = sqrt(6 / (in + out)); he_uniform: sqrt(6 / in).
    """
    if in_dim < 1 or out_dim < 1:
        raise ValueError(f"layer dims must be >= 1, got ({in_dim}, {out_dim})")
    if scheme == "glorot_uniform":
        bound = np.sqrt(6.0 / (in_dim + out_dim))
    elif scheme == "he_uniform":
        bound = np.sqrt(6.0 / in_dim)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    layer = LinearLayer(
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros(out_dim), requires_grad=True),
    )
    return layer


@dataclass
class Mlp:
    """A stack of linear layers with a shared hidden activation.

    ``output_activation`` is applied after the last layer; ``forward_logits``
    skips it so losses can work on raw logits.
    """

    layers: list[LinearLayer]
    hidden_activation: str = "relu"
    output_activation: str = "none"

    def __post_init__(self):
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward_logits(self, x: Tensor) -> Tensor:
        h = x
        for layer in self.layers[:-1]:
            h = activation(layer(h), self.hidden_activation)
        if self.layers:
            h = self.layers[-1](h)
        return h

    def forward(self, x: Tensor) -> Tensor:
        h = self.forward_logits(x)
        if self.output_activation == "sigmoid":
            return sigmoid(h)
        if self.output_activation == "log_softmax":
            return log_softmax(h)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


def make_mlp(
    dims: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "none",
    scheme: str | None = None,
) -> Mlp:
    """Build an MLP from a dim chain like (in, h1, ..., out).

    When ``scheme`` is None it follows the activation: he_uniform for relu
    nets, glorot_uniform otherwise.
    """
    if len(dims) < 2:
        raise ValueError("make_mlp needs at least (in, out) dims")
    if scheme is None:
        scheme = "he_uniform" if hidden_activation == "relu" else "glorot_uniform"
    layers = [
        init_linear(i, o, scheme, rng) for i, o in zip(dims[:-1], dims[1:])
    ]
    return Mlp(layers, hidden_activation, output_activation)


def collect_params(obj) -> list[Tensor]:
    """Flatten parameters in a deterministic order.

    Accepts an Mlp, anything exposing ``parameters()``, or an iterable of
    such objects. Order is construction order, so identical configs yield
    identical orderings.
    """
    if hasattr(obj, "parameters"):
        return list(obj.parameters())
    if isinstance(obj, Iterable):
        out: list[Tensor] = []
        for item in obj:
            out.extend(collect_params(item))
        return out
    raise TypeError(f"cannot collect parameters from {type(obj).__name__}")


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0.0:
            raise ValueError("lr must be nonnegative")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")


class Sgd:
    """Mini-batch SGD: v <- m*v + grad + wd*param; param <- param - lr*v.

    ``step`` clears the gradients it consumed. Parameters without a grad
    are skipped (their velocity still decays toward zero).
    """

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.state = SgdState(
            lr=lr,
            momentum=momentum,
            weight_decay=weight_decay,
            velocity=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        s = self.state
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                s.velocity[i] *= s.momentum
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("sgd_step", f"gradient of parameter {i}")
            v = s.momentum * s.velocity[i] + g + s.weight_decay * p.data
            s.velocity[i] = v
            p.data = p.data - s.lr * v
            p.grad = None


def sgd_step(params: Sequence[Tensor], state: SgdState) -> None:
    """Functional form of the update for callers that manage state directly."""
    if len(state.velocity) != len(params):
        state.velocity = [np.zeros_like(p.data) for p in params]
    opt = Sgd.__new__(Sgd)
    opt.params = list(params)
    opt.state = state
    opt.step()
