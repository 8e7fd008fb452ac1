"""Dense layers and MLPs on top of the autodiff engine.

Parameters are exposed through ``named_parameters()`` as a flat dict of
dotted names to Tensors, which is the interface the optimizer and the
checkpoint code consume.  Initialization is uniform(-1/sqrt(fan_in), ..)
from an explicit numpy Generator so construction is reproducible.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, relu, uniform_init


class Linear:
    """Affine map x @ W + b with W of shape (in_dim, out_dim)."""

    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int,
                 bias: bool = True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(uniform_init(rng, in_dim, (in_dim, out_dim)),
                             requires_grad=True)
        self.bias = (Tensor(uniform_init(rng, in_dim, (out_dim,)),
                            requires_grad=True) if bias else None)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"input width {x.shape[-1]} != {self.in_dim}")
        lead = x.shape[:-1]
        if len(lead) != 1:  # flatten leading axes so matmul stays 2-d
            x = x.reshape(int(np.prod(lead)) if lead else 1, self.in_dim)
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        if len(lead) != 1:
            out = out.reshape(*lead, self.out_dim)
        return out

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params = {prefix + "weight": self.weight}
        if self.bias is not None:
            params[prefix + "bias"] = self.bias
        return params


class Mlp:
    """Stack of Linear layers with relu between them (none after the last)."""

    def __init__(self, rng: np.random.Generator, dims: list[int]):
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        self.layers = [Linear(rng, dims[i], dims[i + 1])
                       for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            params.update(layer.named_parameters(f"{prefix}layer{i}."))
        return params


def count_parameters(params: dict[str, Tensor]) -> int:
    return sum(p.size for p in params.values())
