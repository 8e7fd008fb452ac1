"""Gumbel-softmax sampling and the Sinkhorn doubly-stochastic operator.

Both are pure functions of their inputs plus an explicitly passed numpy
Generator, so independent streams can run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError, Tensor, exp, log, mul, neg, one_hot, reduce_sum, reshape,
    softmax, straight_through, transpose,
)


@dataclass
class GumbelConfig:
    """Sampling knobs.

    deterministic=True drops the noise entirely (g == 0); combined with
    hard=True that is pure argmax selection with first-max tie-breaking,
    the mode used at evaluation time so selection is exactly repeatable.
    """

    tau: float = 0.5
    hard: bool = False
    deterministic: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    """g = -log(-log(u)) with u away from {0, 1} for stability."""
    u = rng.uniform(1e-10, 1.0 - 1e-10, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Tensor, cfg: GumbelConfig,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Sample from the Gumbel-softmax distribution over the last axis.

    Logits act directly as unnormalized log-probabilities; -inf entries are
    hard masks.  Soft mode returns a simplex row; hard mode returns an exact
    one-hot forward value whose backward gradient equals the soft sample's
    gradient (straight-through).
    """
    if cfg.deterministic:
        perturbed = logits
    else:
        if rng is None:
            raise ValueError("stochastic sampling needs an rng")
        noise = sample_gumbel(rng, logits.shape)
        perturbed = logits + Tensor(noise)
    soft = softmax(mul(perturbed, Tensor(1.0 / cfg.tau)), axis=-1)
    if not cfg.hard:
        return soft
    hard = one_hot(np.argmax(soft.data, axis=-1), soft.shape[-1])
    return straight_through(soft, hard)


def sinkhorn_normalize(logits: Tensor, iterations: int = 20,
                       tau: float = 1.0) -> Tensor:
    """Iteratively normalize exp(logits/tau) toward a doubly stochastic matrix.

    Each iteration normalizes columns then rows, so after any full iteration
    the row sums are 1 up to float rounding while column sums converge with
    the iteration count.  Stays differentiable: division is composed from
    the positive-entry identity a/s = a * exp(-log(s)).
    """
    if len(logits.shape) != 2 or logits.shape[0] != logits.shape[1]:
        raise ShapeError(f"sinkhorn needs a square matrix, got {logits.shape}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    m = logits.shape[0]
    s = exp(mul(logits, Tensor(1.0 / tau)))
    for _ in range(iterations):
        col = reshape(reduce_sum(s, axis=0), (1, m))
        s = mul(s, exp(neg(log(col))))
        # row normalization via the transpose (broadcasting is leading-axis)
        st = transpose(s)
        row = reshape(reduce_sum(st, axis=0), (1, m))
        s = transpose(mul(st, exp(neg(log(row)))))
    return s
