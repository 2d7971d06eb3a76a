"""PHGR forward pass: graph attention in the ball, temporal attention, scoring.

Parameters are plain numpy arrays keyed by name.  The forward pass wraps
them in autodiff tensors so the same code serves training (inside a tape)
and inference (no tape, values only).  Everything is batched: the global
graph layers run once per batch over the full graph, and the local graphs
of the batch's sequences are stacked into one disjoint union.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import GlobalGraph, build_local_graph
from .hyperbolic import make_space

VARIANTS = ("poincare", "euclidean")
INNERS = ("D", "P")


@dataclass
class ModelConfig:
    dim: int = 16
    layers: int = 1
    curvature: float = 1.0
    alpha: tuple | None = None       # global layer mix, uniform 1/(L+1) when None
    zeta: tuple | None = None        # local layer mix
    variant: str = "poincare"
    inner: str = "D"
    no_global: bool = False
    no_local: bool = False
    no_long: bool = False
    no_short: bool = False
    init_std: float = 0.01
    edge_weights: bool = False       # scale attention logits by graph edge weight
    boundary_eps: float = 1e-5

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not 1 <= self.layers <= 5:
            raise ValueError("layers must lie in [1, 5]")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.inner not in INNERS:
            raise ValueError(f"inner must be one of {INNERS}")
        if self.init_std < 0:
            raise ValueError("init_std must be nonnegative")
        for name in ("alpha", "zeta"):
            mix = getattr(self, name)
            if mix is None:
                setattr(self, name, tuple([1.0 / (self.layers + 1)] * (self.layers + 1)))
            else:
                mix = tuple(float(a) for a in mix)
                if len(mix) != self.layers + 1 or any(a < 0 for a in mix):
                    raise ValueError(f"{name} needs {self.layers + 1} nonnegative weights")
                setattr(self, name, mix)

    @property
    def space(self):
        return make_space(self.variant, self.curvature, self.inner, self.boundary_eps)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def init_params(n_users: int, n_items: int, cfg: ModelConfig, seed: int = 0) -> dict:
    """Gaussian initialisation; item row ``n_items`` is the reserved unknown item."""
    if n_users < 1 or n_items < 1:
        raise ValueError("need at least one user and one item")
    rng = np.random.default_rng(seed)
    d = cfg.dim
    w = np.sqrt(1.0 / d)
    p = {
        "user_emb": rng.normal(0.0, 1.0, (n_users, d)) * cfg.init_std,
        "item_emb": rng.normal(0.0, 1.0, (n_items + 1, d)) * cfg.init_std,
    }
    for l in range(cfg.layers):
        p[f"global_att_{l}"] = rng.normal(0.0, w, 2 * d)
        p[f"global_bias_{l}"] = np.zeros(1)
    for l in range(cfg.layers):
        p[f"local_att_{l}"] = rng.normal(0.0, w, 2 * d)
        p[f"local_bias_{l}"] = np.zeros(1)
    for name in ("W_Q", "W_K", "W_V", "W_n", "W_i"):
        p[name] = rng.normal(0.0, w, (d, d))
    p["q"] = rng.normal(0.0, w, d)
    p["W"] = rng.normal(0.0, w, (d, 3 * d))
    return p


def n_items_of(params: dict) -> int:
    return params["item_emb"].shape[0] - 1


# ---------------------------------------------------------------- graph attention

def attention_aggregate(space, X, Y, tgt, nbr, att, bias, n_targets, weight=None):
    """One attention + aggregation step for targets in ``X`` over neighbours in ``Y``.

    ``tgt``/``nbr`` are parallel edge arrays.  Logits are
    ``att . (log0(x_t) || log0(y_n)) + bias``, softmax-normalised over each
    target's neighbourhood; the update is
    ``exp_{x_t}(sum_n e_tn log_{x_t}(y_n))``.  Targets without edges are
    returned unchanged.  Returns ``(new_X, edge_attention)``.
    """
    d = X.shape[-1]
    tgt = np.asarray(tgt, dtype=np.intp)
    nbr = np.asarray(nbr, dtype=np.intp)
    if tgt.size == 0:
        return X, ad.Tensor(np.zeros(0))
    att = ad.as_tensor(att)
    w_self = ad.reshape(att[:d], (d, 1))
    w_nbr = ad.reshape(att[d:], (d, 1))
    s_self = ad.reshape(ad.matmul(space.log0(X), w_self), (X.shape[0],))
    s_nbr = ad.reshape(ad.matmul(space.log0(Y), w_nbr), (Y.shape[0],))
    logits = ad.gather_rows(s_self, tgt) + ad.gather_rows(s_nbr, nbr) + ad.reshape(bias, ())
    if weight is not None:
        logits = ad.mul(logits, np.asarray(weight, dtype=np.float64))
    e = ad.segment_softmax(logits, tgt, n_targets)
    xt = ad.gather_rows(X, tgt)
    msg = ad.mul(space.logmap(xt, ad.gather_rows(Y, nbr)), ad.reshape(e, (-1, 1)))
    agg = ad.segment_sum(msg, tgt, n_targets)
    return space.expmap(X, agg), e


def global_layer(space, items, users, graph: GlobalGraph, att, bias, edge_weights=False):
    """Item and user updates over the bipartite graph, both from layer-l points."""
    w = graph.weight if edge_weights else None
    new_items, _ = attention_aggregate(space, items, users, graph.edge_item, graph.edge_user,
                                       att, bias, items.shape[0], w)
    new_users, _ = attention_aggregate(space, users, items, graph.edge_user, graph.edge_item,
                                       att, bias, users.shape[0], w)
    return new_items, new_users


def local_layer(space, nodes, src, dst, att, bias, weight=None):
    """Update each node from its predecessors (edges ``src -> dst``)."""
    new, _ = attention_aggregate(space, nodes, nodes, dst, src, att, bias, nodes.shape[0], weight)
    return new


def layer_readout(space, layers, mix):
    """``exp0(sum_l mix_l * log0(x^l))``."""
    acc = None
    for x, a in zip(layers, mix):
        term = ad.scale(space.log0(x), a)
        acc = term if acc is None else acc + term
    return space.exp0(acc)


# ---------------------------------------------------------------- temporal attention

def long_attention(space, H, mask, W_Q, W_K, W_V):
    """Self-attention over each padded sequence, averaged over valid rows.

    ``H`` is ``(B, T, d)`` ball points, ``mask`` ``(B, T)`` booleans.
    Returns ``(z_long (B, d), attention (B, T, T))``.
    """
    d = H.shape[-1]
    L = space.log0(H)
    Q = ad.matmul(L, ad.swap_last(W_Q))
    K = ad.matmul(L, ad.swap_last(W_K))
    V = ad.matmul(L, ad.swap_last(W_V))
    S = ad.scale(ad.matmul(Q, ad.swap_last(K)), 1.0 / np.sqrt(d))
    A = ad.softmax(S, axis=-1, mask=mask[:, None, :])
    O = ad.matmul(A, V)
    m = mask.astype(np.float64)
    mean = ad.div(ad.sum(ad.mul(O, m[:, :, None]), axis=1), m.sum(axis=1, keepdims=True))
    return space.exp0(mean), A


def short_attention(space, H, mask, lengths, W_n, W_i, q):
    """Last-item-query attention with unnormalised weights.

    ``gamma_i = q . sigmoid(W_n log0(x_n) + W_i log0(x_i))`` for every
    position ``i`` (the last one included) and
    ``z = exp0(sum_i gamma_i log0(x_i))``.  Returns ``(z_short, gamma)``.
    """
    B, T, d = H.shape
    L = space.log0(H)
    last = ad.take(L, (np.arange(B), np.asarray(lengths) - 1))            # (B, d)
    pre = ad.reshape(ad.matmul(last, ad.swap_last(W_n)), (B, 1, d)) + ad.matmul(L, ad.swap_last(W_i))
    gamma = ad.reshape(ad.matmul(ad.sigmoid(pre), ad.reshape(q, (d, 1))), (B, T))
    gamma = ad.mul(gamma, mask.astype(np.float64))
    z = ad.sum(ad.mul(L, ad.reshape(gamma, (B, T, 1))), axis=1)
    return space.exp0(z), gamma


def user_readout(space, x_last, z_long, z_short, W, cfg: ModelConfig):
    """``exp0(W [log0(x_n) || log0(z_long) || log0(z_short)])``; disabled branches contribute zeros."""
    B, d = x_last.shape
    zeros = ad.Tensor(np.zeros((B, d)))
    parts = [space.log0(x_last),
             zeros if cfg.no_long or z_long is None else space.log0(z_long),
             zeros if cfg.no_short or z_short is None else space.log0(z_short)]
    t = ad.matmul(ad.concat(parts, axis=-1), ad.swap_last(W))
    return space.exp0(t)


# ---------------------------------------------------------------- batching

@lru_cache(maxsize=200_000)
def _local_structure(items: tuple):
    """Node list, predecessor edges (local indices) and per-position node index."""
    nodes = np.array(sorted(set(items)), dtype=np.intp)
    pos = np.searchsorted(nodes, np.array(items, dtype=np.intp))
    if len(items) >= 2:
        g = build_local_graph(items)
        src = np.searchsorted(nodes, np.array([e[0] for e in g.edges], dtype=np.intp))
        dst = np.searchsorted(nodes, np.array([e[1] for e in g.edges], dtype=np.intp))
        w = np.array([e[2] for e in g.edges])
    else:
        src = dst = np.zeros(0, dtype=np.intp)
        w = np.zeros(0)
    return nodes, src, dst, w, pos


@dataclass
class Batch:
    """Stacked local graphs and padded positions for a list of input sequences."""

    node_item: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    pos_node: np.ndarray   # (B, T) index into the stacked nodes, padded with 0
    mask: np.ndarray       # (B, T)
    lengths: np.ndarray    # (B,)

    @property
    def size(self) -> int:
        return len(self.lengths)


def make_batch(inputs, n_items: int) -> Batch:
    """``inputs`` are item-index sequences; out-of-range items map to the unknown row."""
    node_item, src, dst, weight, pos_rows = [], [], [], [], []
    offset = 0
    lengths = np.array([len(s) for s in inputs], dtype=np.intp)
    if len(inputs) == 0 or lengths.min() < 1:
        raise ValueError("every input sequence needs at least one item")
    T = int(lengths.max())
    pos_node = np.zeros((len(inputs), T), dtype=np.intp)
    for b, seq in enumerate(inputs):
        seq = tuple(int(i) if 0 <= int(i) < n_items else n_items for i in seq)
        nodes, s, t, w, pos = _local_structure(seq)
        node_item.append(nodes)
        src.append(s + offset)
        dst.append(t + offset)
        weight.append(w)
        pos_node[b, :len(seq)] = pos + offset
        offset += len(nodes)
    mask = np.arange(T)[None, :] < lengths[:, None]
    return Batch(np.concatenate(node_item), np.concatenate(src), np.concatenate(dst),
                 np.concatenate(weight), pos_node, mask, lengths)


# ---------------------------------------------------------------- full pass

@dataclass
class BatchOutput:
    scores: Tensor            # (B, m)
    user_points: Tensor       # (B, d)
    item_points: Tensor       # (m, d) points used for scoring
    gamma: Tensor | None      # (B, T)
    long_attention: Tensor | None   # (B, T, T)
    mask: np.ndarray
    lengths: np.ndarray
    extras: dict = field(default_factory=dict)


def to_tensors(params: dict, requires_grad: bool = False) -> dict:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def global_item_points(T: dict, graph: GlobalGraph, cfg: ModelConfig, space=None):
    """Item points after the global layers and readout (all ``m + 1`` rows)."""
    space = space or cfg.space
    items = space.exp0(T["item_emb"])
    if cfg.no_global:
        return items
    users = space.exp0(T["user_emb"])
    layers = [items]
    for l in range(cfg.layers):
        items, users = global_layer(space, items, users, graph, T[f"global_att_{l}"],
                                    T[f"global_bias_{l}"], cfg.edge_weights)
        layers.append(items)
    return layer_readout(space, layers, cfg.alpha)


def forward_batch(T: dict, graph: GlobalGraph, inputs, cfg: ModelConfig, batch: Batch | None = None,
                  global_items=None) -> BatchOutput:
    """Score every item for each input sequence.

    ``T`` maps parameter names to tensors (see :func:`to_tensors`).
    ``global_items`` may carry precomputed :func:`global_item_points`, e.g.
    when evaluating many batches with fixed parameters.
    """
    space = cfg.space
    m = T["item_emb"].shape[0] - 1
    batch = batch or make_batch(inputs, m)
    if global_items is None:
        global_items = global_item_points(T, graph, cfg, space)
    nodes = ad.gather_rows(global_items, batch.node_item)
    if not cfg.no_local:
        layers = [nodes]
        w = batch.weight if cfg.edge_weights else None
        for l in range(cfg.layers):
            nodes = local_layer(space, nodes, batch.src, batch.dst, T[f"local_att_{l}"], T[f"local_bias_{l}"], w)
            layers.append(nodes)
        nodes = layer_readout(space, layers, cfg.zeta)
    H = ad.gather_rows(nodes, batch.pos_node)                                   # (B, T, d)
    B = batch.size
    x_last = ad.take(H, (np.arange(B), batch.lengths - 1))
    z_long = A = z_short = gamma = None
    if not cfg.no_long:
        z_long, A = long_attention(space, H, batch.mask, T["W_Q"], T["W_K"], T["W_V"])
    if not cfg.no_short:
        z_short, gamma = short_attention(space, H, batch.mask, batch.lengths, T["W_n"], T["W_i"], T["q"])
    user = user_readout(space, x_last, z_long, z_short, T["W"], cfg)
    item_points = space.exp0(ad.take(T["item_emb"], slice(0, m)))
    scores = space.score(user, item_points)
    return BatchOutput(scores, user, item_points, gamma, A, batch.mask, batch.lengths)


@dataclass
class ForwardOutput:
    scores: np.ndarray
    probabilities: np.ndarray
    short_attention: np.ndarray | None
    long_attention: np.ndarray | None
    user_point: np.ndarray
    item_points: np.ndarray


def forward(seq, graph: GlobalGraph, params: dict, cfg: ModelConfig) -> ForwardOutput:
    """Single-sequence inference.  ``seq`` is an item list or a ``UserSequence``."""
    items = list(getattr(seq, "items", seq))
    if not items:
        raise ValueError("sequence must be nonempty")
    out = forward_batch(to_tensors(params), graph, [items], cfg)
    n = len(items)
    scores = out.scores.value[0]
    return ForwardOutput(
        scores=scores,
        probabilities=ad.softmax(ad.Tensor(scores)).value,
        short_attention=None if out.gamma is None else out.gamma.value[0, :n],
        long_attention=None if out.long_attention is None else out.long_attention.value[0, :n, :n],
        user_point=out.user_points.value[0],
        item_points=out.item_points.value,
    )
