"""
A module with the network building blocks and the Adam optimizer.

Classes:
    Linear: Affine layer y = x W + b.
    Mlp: Stack of Linear layers with ReLU between (and optionally after) them.
    OptimizerState: Adam hyper-parameters, moment accumulators and step count.
    Adam: Optimizer over Tensor parameters.

Functions:
    set_max_pool: Max over the set axis of per-point features.
    optimizer_step: Functional Adam update on plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .errors import InvalidParams, ShapeMismatch


class Linear:
    """
    Affine layer with He-normal weights and zero bias.

    Attributes:
        weight (Tensor): (in_dim, out_dim).
        bias (Tensor): (out_dim,).
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "linear"):
        if in_dim < 1 or out_dim < 1:
            raise InvalidParams(name, f"layer dims must be >= 1, got {in_dim}x{out_dim}")
        w = rng.standard_normal((in_dim, out_dim)) * np.sqrt(2.0 / in_dim)
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.bias")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]


class Mlp:
    """
    Linear layers with ReLU activations.

    Args:
        dims (Sequence[int]): Input width followed by each layer's width.
        rng (np.random.Generator): Initialization stream.
        name (str): Parameter name prefix.
        final_relu (bool): Apply ReLU after the last layer too.
    """

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, name: str, final_relu: bool = True):
        if len(dims) < 2:
            raise InvalidParams(name, "an MLP needs at least one layer")
        self.layers = [
            Linear(a, b, rng, name=f"{name}.{i}") for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]
        self.final_relu = final_relu

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)[-1]

    def forward(self, x: Tensor) -> List[Tensor]:
        """Output of every layer (after its activation), in order."""
        outs = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_relu:
                x = x.relu()
            outs.append(x)
        return outs

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def set_max_pool(features: Tensor, axis: int = -2) -> Tensor:
    """Permutation-invariant pooling over the set (point) axis."""
    return features.max(axis=axis % features.data.ndim)


@dataclass
class OptimizerState:
    """
    Attributes:
        lr (float): Learning rate (>= 0).
        beta1 (float): First-moment decay.
        beta2 (float): Second-moment decay.
        eps (float): Denominator floor.
        m (List[np.ndarray]): First moments, one per parameter.
        v (List[np.ndarray]): Second moments, one per parameter.
        t (int): Steps taken.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0

    def validate(self) -> "OptimizerState":
        if self.lr < 0:
            raise InvalidParams("lr", "must be >= 0")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0 <= b < 1:
                raise InvalidParams(name, "must lie in [0, 1)")
        if self.eps <= 0:
            raise InvalidParams("eps", "must be > 0")
        return self


def optimizer_step(
    state: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]]
) -> List[np.ndarray]:
    """
    One Adam update. Moments are created on the first call and updated in
    place on `state`; a None gradient counts as zero.

    Args:
        state (OptimizerState): Hyper-parameters and accumulators.
        params (Sequence[np.ndarray]): Current parameter values.
        grads (Sequence[Optional[np.ndarray]]): Gradients, same shapes.

    Returns:
        List[np.ndarray]: New parameter values.

    Raises:
        ShapeMismatch: if counts or shapes disagree.
    """
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} params but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatch(f"optimizer holds {len(state.m)} slots, got {len(params)} params")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeMismatch(f"param {i}: shape {p.shape} vs gradient {g.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        step = state.lr * (state.m[i] / bc1) / (np.sqrt(state.v[i] / bc2) + state.eps)
        out.append(p - step)
    return out


class Adam:
    """
    Adam over Tensor parameters.

    Args:
        params (Iterable[Tensor]): Parameters, updated in place by `step`.
        lr (float): Learning rate.
        betas (Tuple[float, float]): Moment decays.
        eps (float): Denominator floor.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps).validate()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        new = optimizer_step(self.state, [p.data for p in self.params], [p.grad for p in self.params])
        for p, value in zip(self.params, new):
            p.data = value
