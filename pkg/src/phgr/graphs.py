"""Local (per-sequence) and global (user-item) interaction graphs."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Raised for malformed or out-of-range interaction data."""


@dataclass(frozen=True)
class UserSequence:
    user_id: int
    items: tuple

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class LocalGraph:
    """Directed item graph of one sequence.

    ``edges`` holds ``(src, dst, weight)`` with weight = transition count
    divided by the source's total outgoing transitions.
    """

    nodes: tuple
    edges: tuple
    _out: dict = field(default_factory=dict, repr=False, compare=False)
    _in: dict = field(default_factory=dict, repr=False, compare=False)

    def neighbors_out(self, node):
        if node not in self.nodes:
            raise KeyError(f"unknown node {node}")
        return self._out.get(node, [])

    def neighbors_in(self, node):
        if node not in self.nodes:
            raise KeyError(f"unknown node {node}")
        return self._in.get(node, [])

    # the attention neighbourhood is the set of predecessors
    neighbors = neighbors_in


def build_local_graph(seq) -> LocalGraph:
    items = tuple(seq.items if isinstance(seq, UserSequence) else seq)
    if len(items) < 2:
        raise DataError(f"local graph needs at least 2 items, got {len(items)}")
    counts = Counter(zip(items[:-1], items[1:]))
    out_total = Counter()
    for (src, _), k in counts.items():
        out_total[src] += k
    edges = tuple(sorted((s, d, k / out_total[s]) for (s, d), k in counts.items()))
    nodes = tuple(sorted(set(items)))
    out, inc = {}, {}
    for s, d, w in edges:
        out.setdefault(s, []).append((d, w))
        inc.setdefault(d, []).append((s, w))
    return LocalGraph(nodes, edges, out, inc)


@dataclass(frozen=True)
class GlobalGraph:
    """Bipartite user-item graph; weight = multiplicity of the item in the user's sequence.

    ``edge_user``, ``edge_item`` and ``weight`` are parallel arrays sorted by
    (user, item).
    """

    n_users: int
    n_items: int
    edge_user: np.ndarray
    edge_item: np.ndarray
    weight: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.weight)

    def user_neighbors(self, user: int):
        if not 0 <= user < self.n_users:
            raise KeyError(f"unknown user {user}")
        sel = self.edge_user == user
        return [(int(i), int(w)) for i, w in zip(self.edge_item[sel], self.weight[sel])]

    def item_neighbors(self, item: int):
        if not 0 <= item < self.n_items:
            raise KeyError(f"unknown item {item}")
        sel = self.edge_item == item
        order = np.argsort(self.edge_user[sel], kind="stable")
        return [(int(u), int(w)) for u, w in zip(self.edge_user[sel][order], self.weight[sel][order])]

    def item_degree(self) -> np.ndarray:
        return np.bincount(self.edge_item, minlength=self.n_items)


def build_global_graph(sequences, n_users: int, n_items: int) -> GlobalGraph:
    """Build from training sequences only; unseen items stay isolated."""
    counts = Counter()
    for seq in sequences:
        if not 0 <= seq.user_id < n_users:
            raise DataError(f"user index {seq.user_id} out of range [0, {n_users})")
        for item in seq.items:
            if not 0 <= item < n_items:
                raise DataError(f"item index {item} out of range [0, {n_items})")
            counts[(seq.user_id, item)] += 1
    keys = sorted(counts)
    users = np.array([k[0] for k in keys], dtype=np.int64)
    items = np.array([k[1] for k in keys], dtype=np.int64)
    weight = np.array([counts[k] for k in keys], dtype=np.float64)
    return GlobalGraph(n_users, n_items, users, items, weight)


def neighbors(graph, node, kind: str = "item"):
    """Neighbour list ``[(node, weight), ...]`` in ascending neighbour order.

    For a :class:`GlobalGraph` ``kind`` says whether ``node`` is a user or an
    item; for a :class:`LocalGraph` it selects ``"in"`` (default) or ``"out"``.
    """
    if isinstance(graph, GlobalGraph):
        return graph.user_neighbors(node) if kind == "user" else graph.item_neighbors(node)
    if kind == "out":
        return list(graph.neighbors_out(node))
    return list(graph.neighbors_in(node))
