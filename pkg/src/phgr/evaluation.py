"""Ranking metrics, region analysis of embeddings and attention export."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ContractError
from .graphs import DataError
from .model import ModelConfig, forward_batch, global_item_points, make_batch, to_tensors

DEFAULT_KS = (10, 20)


def metrics_at_k(ranked_items, target, k: int):
    """(hit, ndcg, map) for one relevant item given a ranked candidate list.

    Rank is 1-based; ndcg is ``1/log2(rank+1)`` and map ``1/rank`` on a hit.
    """
    ranked = list(ranked_items)
    if k > len(ranked):
        raise ContractError(f"K={k} exceeds the {len(ranked)} ranked candidates")
    top = ranked[:k]
    if target not in top:
        return 0.0, 0.0, 0.0
    rank = top.index(target) + 1
    return 1.0, 1.0 / math.log2(rank + 1), 1.0 / rank


def target_ranks(scores: np.ndarray, targets) -> np.ndarray:
    """1-based rank of each target among its row's scores; ties go to the lower index."""
    scores = np.atleast_2d(scores)
    targets = np.asarray(targets, dtype=np.intp)
    ts = scores[np.arange(len(targets)), targets][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    better = (scores > ts) | ((scores == ts) & (idx < targets[:, None]))
    return 1 + better.sum(axis=1)


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Descending-score order with ascending-index tie break."""
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores)))


@dataclass
class RankingMetrics:
    """Means over evaluated sequences; fractions in [0, 1]."""

    hit: dict = field(default_factory=dict)
    ndcg: dict = field(default_factory=dict)
    map: dict = field(default_factory=dict)
    count: int = 0

    @classmethod
    def from_ranks(cls, ranks, ks=DEFAULT_KS, n_candidates: int | None = None) -> RankingMetrics:
        ranks = np.asarray(ranks, dtype=np.float64)
        out = cls(count=len(ranks))
        for k in ks:
            if n_candidates is not None and k > n_candidates:
                raise ContractError(f"K={k} exceeds the {n_candidates} candidates")
            hit = ranks <= k
            out.hit[k] = float(hit.mean())
            out.ndcg[k] = float(np.where(hit, 1.0 / np.log2(ranks + 1), 0.0).mean())
            out.map[k] = float(np.where(hit, 1.0 / ranks, 0.0).mean())
        return out

    def rows(self):
        """``(K, H, N, M)`` tuples reported x100."""
        return [(k, 100 * self.hit[k], 100 * self.ndcg[k], 100 * self.map[k]) for k in sorted(self.hit)]


def score_sequences(params, graph, sequences, cfg: ModelConfig, batch_size: int = 256):
    """Yield ``(scores (B, m), targets (B,))`` chunks; the last item is each target."""
    T = to_tensors(params)
    gi = global_item_points(T, graph, cfg)
    m = params["item_emb"].shape[0] - 1
    for s in range(0, len(sequences), batch_size):
        chunk = sequences[s:s + batch_size]
        inputs = [list(q.items[:-1]) for q in chunk]
        targets = np.array([q.items[-1] for q in chunk], dtype=np.intp)
        out = forward_batch(T, graph, inputs, cfg, make_batch(inputs, m), gi)
        yield out.scores.value, targets


def evaluate(params, graph, sequences, cfg: ModelConfig, ks=DEFAULT_KS) -> RankingMetrics:
    """Full-catalogue ranking metrics over ``sequences``."""
    if not sequences:
        raise DataError("cannot evaluate an empty split")
    ranks = []
    m = params["item_emb"].shape[0] - 1
    for scores, targets in score_sequences(params, graph, sequences, cfg):
        ranks.append(target_ranks(scores, targets))
    return RankingMetrics.from_ranks(np.concatenate(ranks), ks, m)


def hit_rate_at(params, graph, sequences, cfg: ModelConfig, k: int = 10) -> float:
    return evaluate(params, graph, sequences, cfg, (k,)).hit[k]


def evaluate_scores(score_fn, sequences, n_items: int, ks=DEFAULT_KS) -> RankingMetrics:
    """Metrics for an arbitrary scorer ``score_fn(inputs) -> (B, m)``."""
    if not sequences:
        raise DataError("cannot evaluate an empty split")
    inputs = [list(q.items[:-1]) for q in sequences]
    targets = [q.items[-1] for q in sequences]
    return RankingMetrics.from_ranks(target_ranks(score_fn(inputs), targets), ks, n_items)


def popularity_scores(train_sequences, n_items: int) -> np.ndarray:
    """Training-split interaction counts; every user gets the same ranking."""
    counts = np.zeros(n_items)
    for s in train_sequences:
        np.add.at(counts, np.asarray(s.items, dtype=np.intp), 1.0)
    return counts


def evaluate_popularity(train_sequences, sequences, n_items: int, ks=DEFAULT_KS) -> RankingMetrics:
    pop = popularity_scores(train_sequences, n_items)
    return evaluate_scores(lambda inputs: np.tile(pop, (len(inputs), 1)), sequences, n_items, ks)


def format_table(rows, header=("dataset", "variant", "K", "H", "N", "M")) -> str:
    """Aligned text table; floats printed with two decimals."""
    cells = [[f"{c:.2f}" if isinstance(c, float) else str(c) for c in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    line = lambda vals: "  ".join(v.rjust(w) for v, w in zip(vals, widths))
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in cells])


def write_metrics_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "variant", "K", "H", "N", "M"])
        for r in rows:
            w.writerow([r[0], r[1], r[2]] + [repr(float(x)) for x in r[3:]])


def metric_rows(dataset: str, variant: str, metrics: RankingMetrics):
    return [(dataset, variant, k, h, n, m) for k, h, n, m in metrics.rows()]


# ---------------------------------------------------------------- region analysis

@dataclass
class RegionReport:
    boundaries: tuple
    counts: list          # items per region
    mean_interactions: list
    region_of: np.ndarray

    def rows(self):
        edges = (0.0,) + tuple(self.boundaries) + (math.inf,)
        return [(r + 1, edges[r], edges[r + 1], self.counts[r], self.mean_interactions[r]) for r in range(4)]


def origin_distances(item_points: np.ndarray, variant: str = "poincare", c: float = 1.0) -> np.ndarray:
    """Geodesic distance to the origin (Poincaré) or vector norm (Euclidean)."""
    norms = np.linalg.norm(item_points, axis=-1)
    if variant == "euclidean":
        return norms
    sc = np.sqrt(c)
    return 2.0 / sc * np.arctanh(np.clip(sc * norms, 0.0, 1.0 - 1e-12))


def region_analysis(item_points, interaction_counts, boundaries=None, variant: str = "poincare",
                    c: float = 1.0) -> RegionReport:
    """Bucket items into four distance-to-origin bands and average their popularity.

    Band ``r`` holds distances in ``(b_{r-1}, b_r]``.  Without explicit
    boundaries the 25/50/75th percentiles of the distances are used.
    """
    dist = origin_distances(np.asarray(item_points), variant, c)
    counts = np.asarray(interaction_counts, dtype=np.float64)
    if boundaries is None:
        boundaries = tuple(np.percentile(dist, [25, 50, 75]))
    else:
        boundaries = tuple(float(b) for b in boundaries)
        if len(boundaries) != 3 or not all(a < b for a, b in zip(boundaries, boundaries[1:])):
            raise ValueError("need three strictly increasing boundaries")
    region = np.searchsorted(np.asarray(boundaries), dist, side="left")
    n_per = [int(np.sum(region == r)) for r in range(4)]
    means = [float(counts[region == r].mean()) if n_per[r] else float("nan") for r in range(4)]
    return RegionReport(boundaries, n_per, means, region)


def write_region_csv(path, report: RegionReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "lower", "upper", "items", "mean_interactions"])
        for row in report.rows():
            w.writerow(row)


# ---------------------------------------------------------------- attention export

def export_attention(records, path):
    """Write short-view weights and long-view matrices to CSV.

    ``records`` is an iterable of ``(sequence_id, items, ForwardOutput)``.
    Columns: sequence, view, position, item, key_position, key_item, weight.
    Short-view rows leave the key columns empty.  Weights are written with
    17 significant digits so they re-read bit-exactly.
    """
    path = Path(path)
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write attention file {path}: {exc}") from exc
    with fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "view", "position", "item", "key_position", "key_item", "weight"])
        for seq_id, items, out in records:
            items = list(items)
            if out.short_attention is not None:
                for i, g in enumerate(out.short_attention):
                    w.writerow([seq_id, "short", i, items[i], "", "", format(float(g), ".17g")])
            if out.long_attention is not None:
                for i, row in enumerate(out.long_attention):
                    for j, a in enumerate(row):
                        w.writerow([seq_id, "long", i, items[i], j, items[j], format(float(a), ".17g")])


def read_attention(path):
    """Inverse of :func:`export_attention`: ``{seq_id: {"short": array, "long": matrix}}``."""
    out: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            entry = out.setdefault(row["sequence"], {"short": {}, "long": {}})
            if row["view"] == "short":
                entry["short"][int(row["position"])] = float(row["weight"])
            else:
                entry["long"][(int(row["position"]), int(row["key_position"]))] = float(row["weight"])
    result = {}
    for sid, e in out.items():
        n = 1 + max(e["short"]) if e["short"] else 0
        short = np.array([e["short"][i] for i in range(n)]) if n else None
        long = None
        if e["long"]:
            t = 1 + max(i for i, _ in e["long"])
            long = np.zeros((t, t))
            for (i, j), v in e["long"].items():
                long[i, j] = v
        result[sid] = {"short": short, "long": long}
    return result
