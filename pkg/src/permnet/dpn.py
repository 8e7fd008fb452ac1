"""Order canonicalization through learned hard permutation matrices.

A small assignment network scores every (canonical slot, entity) pair and
a sequential masked Gumbel-softmax turns the scores into a permutation
matrix M, one slot row at a time.  Feeding any downstream network M·X
instead of X makes it invariant to the input ordering, and mapping a
per-entity output slice back through Mᵀ makes that slice equivariant.

Selection is stochastic-hard during training (straight-through gradients)
and pure argmax at evaluation time, where canonicalization is exact: the
same entity set in any order yields bitwise-identical M·X.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    bmm,
    concat,
    matmul,
    one_hot,
    relu,
    reshape,
    slice_axis0,
    straight_through,
    take_index,
    transpose,
)
from .env import ENTITY_FEATURES, N_MOVE_ACTIONS, OWN_FEATURES
from .gumbel import GumbelConfig, gumbel_softmax
from .layers import Linear, Mlp

NEG_MASK = -1e10


def is_permutation_matrix(entries: np.ndarray) -> bool:
    """True when the trailing two axes hold square binary matrices with
    exactly one unit entry per row and per column."""
    a = np.asarray(entries)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        return False
    binary = np.all((a == 0.0) | (a == 1.0))
    rows = np.all(a.sum(axis=-1) == 1.0)
    cols = np.all(a.sum(axis=-2) == 1.0)
    return bool(binary and rows and cols)


class DpnNet:
    """Assignment-score network for one entity group of fixed size.

    ``assign_mlp`` maps each entity's features to one score per canonical
    slot; its transpose is consumed row-by-row by the masked sampling loop.
    """

    def __init__(self, rng: np.random.Generator, feature_dim: int,
                 group_size: int, hidden: int = 8,
                 gumbel: GumbelConfig | None = None):
        self.feature_dim = feature_dim
        self.group_size = group_size
        self.assign_mlp = Mlp(rng, [feature_dim, hidden, group_size])
        self.gumbel = gumbel if gumbel is not None \
            else GumbelConfig(tau=0.5, hard=True)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return self.assign_mlp.named_parameters(prefix + "assign.")


def generate_permutation_matrix(net: DpnNet, X: Tensor,
                                rng: np.random.Generator | None = None,
                                deterministic: bool | None = None) -> Tensor:
    """Build M row by row: slot d picks among still-unassigned entities.

    ``X`` is (m, k) or batched (..., m, k).  Each slot row adds a -1e10
    penalty on already-taken entities, samples a hard one-hot over the
    rest, and feeds the selection into the next row's penalty mask.  The
    mask is accumulated outside the graph; gradients reach the assignment
    parameters through each row's straight-through softmax.

    ``deterministic`` overrides the net's GumbelConfig flag (argmax
    selection, no noise) without mutating it.
    """
    m = X.shape[-2] if len(X.shape) >= 2 else -1
    if m != net.group_size:
        raise ShapeError(
            f"group size {m} does not match permutation net width "
            f"{net.group_size}")
    cfg = net.gumbel
    if deterministic is not None:
        cfg = replace(cfg, deterministic=deterministic)
    lead = X.shape[:-2]
    if m == 0:
        return Tensor(np.zeros(lead + (0, 0)))
    scores = net.assign_mlp(X)              # (..., m entities, m slots)
    taken = np.zeros(lead + (m,))
    rows = []
    for d in range(m):
        slot = np.full(lead + (m,), d, dtype=np.intp)
        logits = take_index(scores, slot)   # transposed row d: (..., m)
        masked = add(logits, Tensor(NEG_MASK * taken))
        soft = gumbel_softmax(masked, replace(cfg, hard=False), rng)
        hard = one_hot(np.argmax(soft.data, axis=-1), m)
        taken = taken + hard
        row = straight_through(soft, hard) if cfg.hard else soft
        rows.append(reshape(row, lead + (1, m)))
    return concat(rows, axis=-2)


def _apply(M: Tensor, X: Tensor) -> Tensor:
    return matmul(M, X) if len(X.shape) == 2 else bmm(M, X)


def _apply_inverse(M: Tensor, values: Tensor) -> Tensor:
    """Mᵀ·v for a (possibly batched) square M and per-entity values v."""
    if len(M.shape) == 2:
        m = M.shape[0]
        return reshape(matmul(transpose(M), reshape(values, (m, 1))), (m,))
    lead, m = values.shape[:-1], values.shape[-1]
    rows = reshape(values, lead + (1, m))
    return reshape(bmm(rows, M), lead + (m,))   # (vᵀM)ᵀ = Mᵀv, rows kept flat


def dpn_forward(net: DpnNet, X: Tensor, downstream,
                equivariant_slice: slice | None = None,
                rng: np.random.Generator | None = None,
                deterministic: bool | None = None) -> Tensor:
    """Canonicalize, run downstream, optionally restore input order.

    ``downstream`` receives M·X.  When ``equivariant_slice`` names a
    length-m axis-0 slice of the output, that slice is mapped through Mᵀ
    back to the caller's entity order; everything outside the slice is
    returned as-is (it is order-invariant already).
    """
    m = X.shape[-2]
    M = generate_permutation_matrix(net, X, rng, deterministic)
    y = downstream(_apply(M, X))
    if equivariant_slice is None:
        return y
    start, stop, step = equivariant_slice.indices(y.shape[0])
    if step != 1 or stop - start != m:
        raise ShapeError(
            f"equivariant slice covers {stop - start} rows, group has {m}")
    part = slice_axis0(y, start, stop)
    if len(part.shape) == 1:
        part = reshape(matmul(transpose(M), reshape(part, (m, 1))), (m,))
    else:
        part = matmul(transpose(M), part)
    pieces = []
    if start > 0:
        pieces.append(slice_axis0(y, 0, start))
    pieces.append(part)
    if stop < y.shape[0]:
        pieces.append(slice_axis0(y, stop, y.shape[0]))
    return pieces[0] if len(pieces) == 1 else concat(pieces, axis=0)


def dual_group_dpn(ally_net: DpnNet, enemy_net: DpnNet, obs, downstream,
                   rng: np.random.Generator | None = None,
                   deterministic: bool | None = None) -> Tensor:
    """Two-group canonicalization around one joint Q network.

    The ally and enemy groups are canonicalized independently (M₁, M₂),
    own-features plus both flattened canonical groups feed ``downstream``,
    and the per-enemy attack slice of its output comes back through M₂ᵀ so
    attack Q-values line up with the caller's enemy order.  Move Q-values
    are order-invariant and pass through untouched.
    """
    own = obs.own if isinstance(obs.own, Tensor) else Tensor(obs.own)
    allies = obs.allies if isinstance(obs.allies, Tensor) else Tensor(obs.allies)
    enemies = obs.enemies if isinstance(obs.enemies, Tensor) else Tensor(obs.enemies)
    m1 = generate_permutation_matrix(ally_net, allies, rng, deterministic)
    m2 = generate_permutation_matrix(enemy_net, enemies, rng, deterministic)
    n_enemies = enemies.shape[0]
    x = concat([own,
                reshape(_apply(m1, allies), (allies.size,)),
                reshape(_apply(m2, enemies), (enemies.size,))], axis=0)
    q = downstream(x)
    move = slice_axis0(q, 0, N_MOVE_ACTIONS)
    attack = slice_axis0(q, N_MOVE_ACTIONS, N_MOVE_ACTIONS + n_enemies)
    attack = reshape(matmul(transpose(m2), reshape(attack, (n_enemies, 1))),
                     (n_enemies,))
    return concat([move, attack], axis=0)


class DpnAgentNet:
    """Per-agent Q-network with DPN canonicalization on both entity groups.

    Own features and the two canonicalized, flattened groups feed a relu
    trunk with separate move and attack heads; attack outputs return to the
    observation's enemy order through M₂ᵀ.  The trunk itself is a plain
    order-sensitive MLP: all invariance comes from the canonicalization.
    """

    def __init__(self, rng: np.random.Generator, n_allies: int,
                 n_enemies: int, hidden: int = 64, perm_hidden: int = 8,
                 tau: float = 0.5):
        self.n_allies = n_allies
        self.n_enemies = n_enemies
        k = ENTITY_FEATURES
        gumbel = GumbelConfig(tau=tau, hard=True)
        self.ally_net = DpnNet(rng, k, n_allies - 1, perm_hidden, gumbel)
        self.enemy_net = DpnNet(rng, k, n_enemies, perm_hidden, gumbel)
        in_dim = OWN_FEATURES + (n_allies - 1) * k + n_enemies * k
        self.body = Linear(rng, in_dim, hidden)
        self.move_head = Linear(rng, hidden, N_MOVE_ACTIONS)
        self.attack_head = Linear(rng, hidden, n_enemies)

    @property
    def n_actions(self) -> int:
        return N_MOVE_ACTIONS + self.n_enemies

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params = {}
        params.update(self.ally_net.named_parameters(prefix + "ally_perm."))
        params.update(self.enemy_net.named_parameters(prefix + "enemy_perm."))
        params.update(self.body.named_parameters(prefix + "body."))
        params.update(self.move_head.named_parameters(prefix + "move_head."))
        params.update(self.attack_head.named_parameters(prefix + "attack_head."))
        return params

    def forward_batch(self, own: Tensor, allies: Tensor, enemies: Tensor,
                      rng: np.random.Generator | None = None,
                      deterministic: bool = False) -> Tensor:
        """(B, own) + (B, n-1, k) + (B, m, k) -> (B, n_move + m)."""
        b = own.shape[0]
        m1 = generate_permutation_matrix(self.ally_net, allies, rng,
                                         deterministic)
        m2 = generate_permutation_matrix(self.enemy_net, enemies, rng,
                                         deterministic)
        n_a = (self.n_allies - 1) * ENTITY_FEATURES
        x = concat([own,
                    reshape(_apply(m1, allies), (b, n_a)),
                    reshape(_apply(m2, enemies),
                            (b, self.n_enemies * ENTITY_FEATURES))], axis=1)
        h = relu(self.body(x))
        move = self.move_head(h)
        attack = _apply_inverse(m2, self.attack_head(h))
        return concat([move, attack], axis=1)

    def forward(self, obs, rng: np.random.Generator | None = None,
                deterministic: bool = False) -> Tensor:
        own = obs.own if isinstance(obs.own, Tensor) else Tensor(obs.own)
        allies = obs.allies if isinstance(obs.allies, Tensor) \
            else Tensor(obs.allies)
        enemies = obs.enemies if isinstance(obs.enemies, Tensor) \
            else Tensor(obs.enemies)
        q = self.forward_batch(
            reshape(own, (1, own.size)),
            reshape(allies, (1,) + allies.shape),
            reshape(enemies, (1,) + enemies.shape),
            rng, deterministic)
        return reshape(q, (self.n_actions,))
