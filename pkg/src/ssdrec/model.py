"""Forward computation: session encoder, friend fusion, dual-graph attention, scoring.

Conventions: vectors are rows, so a matrix ``W`` of shape (out, in) is
applied as ``x @ W.T``. Recurrent gates are stacked in the order
input, forget, candidate, output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .data.corpus import Graph
from .data.sampling import NeighborhoodSample, halving_budgets, sample_trees
from .data.sessions import History
from .numerics import Tensor
from .numerics import ops

VARIANTS = ("full", "social-only", "dependency-only", "dynamic-only", "static-only", "rnn-only")
CELLS = ("lstm", "rnn")

# Human-readable wiring change per variant, echoed into run manifests.
VARIANT_NOTES = {
    "full": "none",
    "social-only": "item final repr e_i = e_i^(0) (dependency graph ignored)",
    "dependency-only": "developer final repr h_u = W_T h_u^(0) (social graph ignored)",
    "dynamic-only": "friend static embedding zeroed before fusion",
    "static-only": "friend dynamic encoding zeroed before fusion",
    "rnn-only": "both graphs ignored: e_i = e_i^(0), h_u = W_T h_u^(0)",
}


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 100
    hidden_dim: int = 100
    layers: int = 2
    beta: int = 10
    gamma: int = 10
    dropout: float = 0.2
    cell: str = "lstm"
    variant: str = "full"

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.layers) < 1:
            raise ValueError("embed_dim, hidden_dim and layers must be >= 1")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("sample budgets must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.cell not in CELLS:
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")

    @property
    def uses_social(self) -> bool:
        return self.beta > 0 and self.variant not in ("dependency-only", "rnn-only")

    @property
    def uses_dependency(self) -> bool:
        return self.gamma > 0 and self.variant not in ("social-only", "rnn-only")

    @property
    def social_budgets(self) -> tuple[int, ...]:
        return halving_budgets(self.beta, self.layers)

    @property
    def dependency_budgets(self) -> tuple[int, ...]:
        return halving_budgets(self.gamma, self.layers)


def apply_variant(config: ModelConfig, variant: str) -> ModelConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    return replace(config, variant=variant)


# parameters


def param_shapes(config: ModelConfig, num_items: int, num_developers: int) -> dict[str, tuple[int, ...]]:
    E, H = config.embed_dim, config.hidden_dim
    gates = 4 * H if config.cell == "lstm" else H
    shapes = {
        "item_embedding": (num_items, E),
        "developer_embedding": (num_developers, E),
        "rnn_input": (gates, E),
        "rnn_hidden": (gates, H),
        "rnn_bias": (gates,),
        "friend_fusion": (H, H + E),
    }
    for layer in range(1, config.layers + 1):
        shapes[f"dependency_agg_{layer}"] = (E, E)
    for layer in range(1, config.layers + 1):
        shapes[f"social_agg_{layer}"] = (H, H)
    shapes["item_transform"] = (E, 2 * E)
    shapes["developer_transform"] = (E, 2 * H)
    shapes["developer_transform_rnn"] = (E, H)
    return shapes


def init_params(
    config: ModelConfig, num_items: int, num_developers: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Uniform in [-1/sqrt(d), 1/sqrt(d)], d = the row width (fan-in or embedding size).

    Every tensor is drawn, in a fixed order, whatever the variant, so that
    variants trained from one seed start from identical weights.
    """
    params = {}
    for name, shape in param_shapes(config, num_items, num_developers).items():
        fan_in = shape[-1] if len(shape) > 1 else config.hidden_dim
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def validate_params(params: Mapping, config: ModelConfig, num_items: int, num_developers: int) -> None:
    expected = param_shapes(config, num_items, num_developers)
    problems = []
    for name, shape in expected.items():
        if name not in params:
            problems.append(f"{name}: missing")
        elif tuple(np.shape(_raw(params[name]))) != shape:
            problems.append(f"{name}: expected {shape}, got {tuple(np.shape(_raw(params[name])))}")
    problems += [f"{name}: unexpected" for name in params if name not in expected]
    if problems:
        raise ValueError("parameter mismatch: " + "; ".join(problems))


def _raw(x):
    return x.data if isinstance(x, Tensor) else x


def as_tensors(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: v if isinstance(v, Tensor) else Tensor(v, name=k) for k, v in params.items()}


# input layer


def encode_sequences(
    p: Mapping[str, Tensor],
    item_ids: np.ndarray,
    lengths: np.ndarray,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Final hidden state for each right-padded row of ``item_ids`` (N, T).

    Rows with length 0 stay at the zero initial state.
    """
    H = config.hidden_dim
    item_ids = np.asarray(item_ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    n, steps = item_ids.shape
    h = Tensor(np.zeros((n, H)))
    if n == 0 or steps == 0:
        return h
    x = ops.take(p["item_embedding"], item_ids)
    x = ops.dropout(x, config.dropout, rng, train)
    xw = ops.add(ops.matmul(x, ops.transpose(p["rnn_input"])), p["rnn_bias"])
    wh = ops.transpose(p["rnn_hidden"])
    c = Tensor(np.zeros((n, H)))
    for t in range(steps):
        z = ops.add(xw[:, t, :], ops.matmul(h, wh))
        if config.cell == "lstm":
            i = ops.sigmoid(z[:, :H])
            f = ops.sigmoid(z[:, H : 2 * H])
            g = ops.tanh(z[:, 2 * H : 3 * H])
            o = ops.sigmoid(z[:, 3 * H :])
            c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
            h_new = ops.mul(o, ops.tanh(c_new))
        else:
            c_new = c
            h_new = ops.tanh(z)
        active = lengths > t
        if active.all():
            h, c = h_new, c_new
        else:
            keep = active[:, None].astype(np.float64)
            h = ops.add(ops.mul(h_new, keep), ops.mul(h, 1.0 - keep))
            c = ops.add(ops.mul(c_new, keep), ops.mul(c, 1.0 - keep))
    return h


def pad_sequences(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.zeros((len(seqs), int(lengths.max(initial=0))), dtype=np.int64)
    for row, s in enumerate(seqs):
        out[row, : len(s)] = s
    return out, lengths


def encode_session(
    prefix: Sequence[int],
    p: Mapping[str, Tensor],
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    if len(prefix) == 0:
        raise ValueError("prefix must be nonempty")
    num_items = p["item_embedding"].shape[0]
    bad = [i for i in prefix if not 0 <= i < num_items]
    if bad:
        raise ValueError(f"unknown item id {bad[0]}")
    ids, lengths = pad_sequences([list(prefix)])
    return encode_sequences(p, ids, lengths, config, train, rng)[0]


def friend_repr(dynamic, static, fusion) -> Tensor:
    """ReLU(W_f [dynamic ; static]); pass zeros for an absent part."""
    return ops.relu(ops.matmul(ops.concat([dynamic, static], axis=-1), ops.transpose(fusion)))


# propagation layer


def attention_weights(target, candidates, mask=None) -> Tensor:
    """Softmax of inner products between ``target`` (..., D) and ``candidates`` (..., n, D)."""
    target, candidates = ops.as_tensor(target), ops.as_tensor(candidates)
    scores = ops.matmul(candidates, ops.expand_dims(target, -1))
    return ops.softmax(ops.reshape(scores, scores.shape[:-1]), axis=-1, mask=mask)


def propagate_layer(candidates, alpha, weight, name: str = "W") -> Tensor:
    """ReLU(W . sum_j alpha_j r_j) over the last-but-one axis of ``candidates``."""
    candidates, weight = ops.as_tensor(candidates), ops.as_tensor(weight)
    dim = candidates.shape[-1]
    if weight.ndim != 2 or weight.shape[1] != dim:
        raise ValueError(f"{name} has shape {weight.shape}, incompatible with representation size {dim}")
    alpha = ops.as_tensor(alpha)
    agg = ops.matmul(ops.expand_dims(alpha, -2), candidates)
    agg = ops.reshape(agg, agg.shape[:-2] + (dim,))
    return ops.relu(ops.matmul(agg, ops.transpose(weight)))


@dataclass(frozen=True)
class TreePlan:
    """Padded sampled trees for a batch of targets.

    ``ids[d]`` has shape (N, b_1, ..., b_d) and ``masks[d]`` marks real
    entries; padded entries point at row 0 and are masked out.
    """

    ids: tuple[np.ndarray, ...]
    masks: tuple[np.ndarray, ...]
    raw: tuple[np.ndarray, ...]


def tree_plan(samples: Sequence[NeighborhoodSample], budgets: Sequence[int]) -> TreePlan:
    """Pad each depth to the widest sampled group (at most its budget, at least 1)."""
    n = len(samples)
    raw = [np.array([s.target for s in samples], dtype=np.int64)]
    shape = (n,)
    for depth, b in enumerate(budgets):
        widest = max((len(g) for s in samples for g in s.layers[depth]), default=0)
        shape = shape + (max(1, min(b, widest)),)
        raw.append(np.full(shape, -1, dtype=np.int64))
    for row, s in enumerate(samples):
        positions: list[tuple[int, ...]] = [()]
        for depth, groups in enumerate(s.layers):
            nxt = []
            for parent, group in zip(positions, groups):
                for j, node in enumerate(group):
                    pos = parent + (j,)
                    raw[depth + 1][(row,) + pos] = node
                    nxt.append(pos)
            positions = nxt
    return plan_from_arrays(raw)


def propagate_tree(
    layer0: Sequence[Tensor],
    plan: TreePlan,
    mats: Sequence[Tensor],
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[list[Tensor], list[np.ndarray]]:
    """Stacked attention propagation over sampled trees, bottom-up.

    ``layer0[d]`` holds layer-0 reprs of depth-``d`` nodes. A node at depth
    d needs layers 0..L-d; its layer l attends over itself and its sampled
    children at layer l-1. Returns the target's reprs for layers 0..L and
    the target's attention at each layer (self first, then children).
    """
    L = len(mats)
    below = [layer0[L]]
    attention: list[np.ndarray] = []
    for depth in range(L - 1, -1, -1):
        own = [layer0[depth]]
        child_mask = plan.masks[depth + 1]
        mask = np.concatenate([np.ones(child_mask.shape[:-1] + (1,), dtype=bool), child_mask], axis=-1)
        for layer in range(1, L - depth + 1):
            target = own[layer - 1]
            cand = ops.concat([ops.expand_dims(target, -2), below[layer - 1]], axis=-2)
            alpha = attention_weights(target, cand, mask)
            out = propagate_layer(cand, alpha, mats[layer - 1], name=f"aggregation matrix {layer}")
            own.append(ops.dropout(out, config.dropout, rng, train))
            if depth == 0:
                attention.append(alpha.data)
        below = own
    return below, attention


# prediction layer


def final_item_repr(e0, eL, item_transform) -> Tensor:
    return ops.matmul(ops.concat([e0, eL], axis=-1), ops.transpose(item_transform))


def final_user_repr(h0, hL, developer_transform) -> Tensor:
    return ops.matmul(ops.concat([h0, hL], axis=-1), ops.transpose(developer_transform))


def score_logits(user, items) -> Tensor:
    return ops.matmul(user, ops.transpose(items))


def score_all(user, items) -> Tensor:
    """Full softmax over the catalog of inner products ``user . item``."""
    return ops.softmax(score_logits(user, items), axis=-1)


# batch forward


@dataclass(frozen=True)
class GraphContext:
    social: Graph
    dependency: Graph
    history: History
    num_items: int
    # deterministic dependency plans, keyed by budgets
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def num_developers(self) -> int:
        return self.social.num_nodes


@dataclass(frozen=True)
class AttentionRecord:
    developer: int
    time_step: int
    position: int
    friends: tuple[int, ...]
    # weights[l] covers (self, *friends) at layer l + 1
    weights: tuple[np.ndarray, ...]

    def friend_weights(self, layer: int | None = None) -> dict[int, float]:
        w = self.weights[-1 if layer is None else layer - 1]
        return {f: float(a) for f, a in zip(self.friends, w[1:])}


@dataclass(frozen=True)
class Query:
    developer: int
    time_step: int
    prefix: tuple[int, ...]


@dataclass(frozen=True)
class BatchPlan:
    dependency: TreePlan | None
    social: TreePlan | None
    friend_keys: tuple[tuple[int, int], ...] = ()
    friend_rows: tuple[np.ndarray, ...] = ()


def plan_from_arrays(raw: Sequence[np.ndarray]) -> TreePlan:
    raw = tuple(np.asarray(r, dtype=np.int64) for r in raw)
    masks = tuple(r >= 0 for r in raw)
    ids = tuple(np.where(m, r, 0) for r, m in zip(raw, masks))
    return TreePlan(ids, masks, raw)


def sample_dependency_plan(context: GraphContext, config: ModelConfig, rng) -> TreePlan | None:
    if not config.uses_dependency:
        return None
    budgets = config.dependency_budgets
    # when no degree exceeds any budget, sampling takes every neighbor and draws nothing
    fixed = context.dependency.max_degree <= min(budgets)
    if fixed and budgets in context.cache:
        return context.cache[budgets]
    plan = plan_from_arrays(sample_trees(context.dependency, np.arange(context.num_items), budgets, rng))
    if fixed:
        context.cache[budgets] = plan
    return plan


def sample_social_plan(queries: Sequence, context: GraphContext, config: ModelConfig, rng) -> BatchPlan:
    """Sample each query's social tree and map friend nodes to (friend, T) rows."""
    budgets = config.social_budgets
    plan = plan_from_arrays(sample_trees(context.social, [q.developer for q in queries], budgets, rng))
    steps = np.array([q.time_step for q in queries], dtype=np.int64)
    keys: dict[tuple[int, int], int] = {}
    rows = [np.zeros(0, dtype=np.int64)]
    for depth in range(1, len(plan.raw)):
        raw = plan.raw[depth]
        t_b = np.broadcast_to(steps.reshape((-1,) + (1,) * (raw.ndim - 1)), raw.shape)
        r = np.zeros(raw.shape, dtype=np.int64)
        for idx in zip(*np.nonzero(raw >= 0)):
            key = (int(raw[idx]), int(t_b[idx]))
            r[idx] = keys.setdefault(key, len(keys))
        rows.append(r)
    return BatchPlan(None, plan, tuple(keys), tuple(rows))


def plan_batch(queries: Sequence, context: GraphContext, config: ModelConfig, dep_rng, social_rng) -> BatchPlan:
    dependency = sample_dependency_plan(context, config, dep_rng)
    if not config.uses_social:
        return BatchPlan(dependency, None)
    social = sample_social_plan(queries, context, config, social_rng)
    return replace(social, dependency=dependency)


def item_representations(
    p: Mapping[str, Tensor],
    plan: TreePlan | None,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, list[np.ndarray]]:
    e0 = p["item_embedding"]
    if not config.uses_dependency:
        return e0, []
    layer0 = [ops.take(e0, ids) for ids in plan.ids]
    mats = [p[f"dependency_agg_{l}"] for l in range(1, config.layers + 1)]
    reprs, attention = propagate_tree(layer0, plan, mats, config, train, rng)
    return final_item_repr(e0, reprs[-1], p["item_transform"]), attention


def friend_table(
    p: Mapping[str, Tensor],
    keys: Sequence[tuple[int, int]],
    context: GraphContext,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Fused representation for every (friend, target time step) key."""
    E, H = config.embed_dim, config.hidden_dim
    n = len(keys)
    friends = np.array([f for f, _ in keys], dtype=np.int64)
    if config.variant == "static-only":
        dynamic = Tensor(np.zeros((n, H)))
    else:
        seqs = []
        for f, t in keys:
            s = context.history.latest_before(f, t)
            seqs.append(s.items if s is not None else ())
        ids, lengths = pad_sequences(seqs)
        dynamic = encode_sequences(p, ids, lengths, config, train, rng)
    if config.variant == "dynamic-only":
        static = Tensor(np.zeros((n, E)))
    else:
        static = ops.take(p["developer_embedding"], friends)
    return friend_repr(dynamic, static, p["friend_fusion"])


def user_representations(
    p: Mapping[str, Tensor],
    queries: Sequence,
    plan: BatchPlan,
    context: GraphContext,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, list[np.ndarray]]:
    ids, lengths = pad_sequences([q.prefix for q in queries])
    if (lengths < 1).any():
        raise ValueError("every prefix must be nonempty")
    h0 = encode_sequences(p, ids, lengths, config, train, rng)
    if not config.uses_social:
        return ops.matmul(h0, ops.transpose(p["developer_transform_rnn"])), []
    table = friend_table(p, plan.friend_keys, context, config, train, rng)
    table = ops.concat([table, Tensor(np.zeros((1, config.hidden_dim)))], axis=0)
    layer0 = [h0] + [ops.take(table, r) for r in plan.friend_rows[1:]]
    mats = [p[f"social_agg_{l}"] for l in range(1, config.layers + 1)]
    reprs, attention = propagate_tree(layer0, plan.social, mats, config, train, rng)
    return final_user_repr(h0, reprs[-1], p["developer_transform"]), attention


@dataclass
class ForwardOutput:
    log_probs: Tensor
    items: Tensor
    users: Tensor
    attention: list[AttentionRecord] = field(default_factory=list)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)


def forward(
    p: Mapping[str, Tensor],
    queries: Sequence,
    context: GraphContext,
    config: ModelConfig,
    plan: BatchPlan,
    train: bool = False,
    rng: np.random.Generator | None = None,
    items: Tensor | None = None,
) -> ForwardOutput:
    """Log-probabilities over the catalog for each query in the batch.

    ``items`` may carry precomputed final package reprs (they do not depend
    on the queries); otherwise they are built from ``plan.dependency``.
    """
    for q in queries:
        bad = [i for i in q.prefix if not 0 <= i < context.num_items]
        if bad:
            raise ValueError(f"unknown item id {bad[0]} in prefix of developer {q.developer}")
    if items is None:
        items, _ = item_representations(p, plan.dependency, config, train, rng)
    users, social_attention = user_representations(p, queries, plan, context, config, train, rng)
    log_probs = ops.log_softmax(score_logits(users, items), axis=-1)
    records = []
    if social_attention:
        one_hop = plan.social.raw[1]
        for row, q in enumerate(queries):
            real = one_hop[row] >= 0
            friends = tuple(int(f) for f in one_hop[row][real])
            keep = np.concatenate([[True], real])
            weights = tuple(a[row][keep].copy() for a in social_attention)
            records.append(AttentionRecord(q.developer, q.time_step, len(q.prefix), friends, weights))
    return ForwardOutput(log_probs, items, users, records)


def predict(
    params: Mapping[str, np.ndarray],
    developer: int,
    time_step: int,
    prefix: Sequence[int],
    context: GraphContext,
    config: ModelConfig,
    seed: int = 0,
) -> tuple[np.ndarray, AttentionRecord | None]:
    """Probability vector for one query, evaluated without dropout."""
    dep_rng, social_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    q = Query(developer, time_step, tuple(prefix))
    plan = plan_batch([q], context, config, dep_rng, social_rng)
    out = forward(as_tensors(params), [q], context, config, plan)
    return out.probs[0], (out.attention[0] if out.attention else None)
