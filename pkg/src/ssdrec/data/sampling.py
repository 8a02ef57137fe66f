from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Graph


@dataclass(frozen=True)
class NeighborhoodSample:
    """Sampled L-hop tree around ``target``.

    ``layers[d][p]`` lists the sampled neighbors of the ``p``-th node at
    depth ``d`` (depth 0 holds only the target). Nodes at depth ``d + 1``
    are numbered by flattening ``layers[d]`` in order.
    """

    target: int
    layers: tuple[tuple[tuple[int, ...], ...], ...]
    seed: int | None = None

    def nodes_at(self, depth: int) -> tuple[int, ...]:
        if depth == 0:
            return (self.target,)
        return tuple(n for group in self.layers[depth - 1] for n in group)


def halving_budgets(first: int, layers: int) -> tuple[int, ...]:
    """Per-layer sample sizes, each half the previous (never below 1 unless 0)."""
    out = [first]
    for _ in range(layers - 1):
        out.append(0 if out[-1] == 0 else max(1, out[-1] // 2))
    return tuple(out)


def sample_trees(
    graph: Graph,
    nodes: Sequence[int],
    budgets: Sequence[int],
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Sampled trees for many targets at once, as padded id arrays.

    ``out[0]`` is ``nodes``; ``out[d]`` has shape (N, w_1, ..., w_d) with
    ``-1`` padding, where ``w_d`` is the widest sampled group at depth d
    (at most ``budgets[d-1]``, at least 1). A node whose degree does not
    exceed the budget keeps all its neighbors; larger neighborhoods are
    subsampled uniformly without replacement by ranking iid uniform keys,
    drawn only for those nodes. Picks keep adjacency order.
    """
    if any(b < 0 for b in budgets):
        raise ValueError("budgets must be non-negative")
    indptr, indices = graph.csr()
    out = [np.asarray(nodes, dtype=np.int64).reshape(-1)]
    for budget in budgets:
        front = out[-1]
        flat = front.reshape(-1)
        real = flat >= 0
        deg = np.zeros(flat.size, dtype=np.int64)
        deg[real] = indptr[flat[real] + 1] - indptr[flat[real]]
        if budget == 0:
            deg[:] = 0
        width = max(1, min(budget, int(deg.max(initial=0))))
        child = np.full((flat.size, width), -1, dtype=np.int64)
        cols = np.arange(width)
        whole = (deg > 0) & (deg <= budget)
        rows = np.flatnonzero(whole)
        if rows.size:
            n_cols = cols[None, :] < deg[rows, None]
            pos = indptr[flat[rows], None] + cols[None, :]
            child[rows] = np.where(n_cols, indices[np.minimum(pos, indices.size - 1)], -1)
        rows = np.flatnonzero(deg > budget)
        if rows.size:
            widest = int(deg[rows].max())
            keys = rng.random((rows.size, widest))
            keys[np.arange(widest)[None, :] >= deg[rows, None]] = 2.0
            pick = np.sort(np.argsort(keys, axis=1, kind="stable")[:, :budget], axis=1)
            child[rows, :budget] = indices[indptr[flat[rows], None] + pick]
        out.append(child.reshape(front.shape + (width,)))
    return out


def _to_sample(node: int, arrays: Sequence[np.ndarray], seed: int | None) -> NeighborhoodSample:
    layers = []
    for depth in range(1, len(arrays)):
        parents = arrays[depth - 1].reshape(-1)
        children = arrays[depth].reshape(parents.size, -1)
        layers.append(tuple(tuple(int(c) for c in row if c >= 0) for p, row in zip(parents, children) if p >= 0))
    return NeighborhoodSample(node, tuple(layers), seed)


def sample_neighborhood(
    graph: Graph,
    node: int,
    budgets: Sequence[int],
    rng: np.random.Generator | int,
) -> NeighborhoodSample:
    """Uniform sampling without replacement, layer by layer.

    A node whose degree does not exceed the budget keeps all its neighbors
    and consumes no randomness.
    """
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    if not 0 <= node < graph.num_nodes:
        raise ValueError(f"node {node} outside graph of {graph.num_nodes} nodes")
    return _to_sample(node, sample_trees(graph, [node], budgets, rng), seed)
