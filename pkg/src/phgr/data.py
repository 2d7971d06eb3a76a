"""Interaction-log ingestion, splitting and synthetic data generation."""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .graphs import DataError, UserSequence

log = logging.getLogger(__name__)


class ParseError(DataError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    item: str
    timestamp: int

    def __post_init__(self):
        if not self.user or not self.item:
            raise ValueError("user and item ids must be nonempty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be nonnegative")


@dataclass
class Vocab:
    """Bidirectional string <-> index maps for users and items."""

    users: list = field(default_factory=list)
    items: list = field(default_factory=list)
    user_index: dict = field(default_factory=dict)
    item_index: dict = field(default_factory=dict)

    def add_user(self, uid: str) -> int:
        if uid not in self.user_index:
            self.user_index[uid] = len(self.users)
            self.users.append(uid)
        return self.user_index[uid]

    def add_item(self, iid: str) -> int:
        if iid not in self.item_index:
            self.item_index[iid] = len(self.items)
            self.items.append(iid)
        return self.item_index[iid]

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @classmethod
    def identity(cls, n_users: int, n_items: int) -> Vocab:
        v = cls()
        for u in range(n_users):
            v.add_user(f"u{u}")
        for i in range(n_items):
            v.add_item(f"i{i}")
        return v


@dataclass
class DatasetSplit:
    train: list
    valid: list
    test: list
    vocab: Vocab

    @property
    def n_users(self) -> int:
        return self.vocab.n_users

    @property
    def n_items(self) -> int:
        return self.vocab.n_items


def parse_interactions(stream: TextIO | str, max_malformed: int = 0) -> list:
    """Parse ``user<TAB>item<TAB>timestamp`` lines; ``#`` lines and blanks are skipped.

    Up to ``max_malformed`` bad lines are skipped and reported through the
    module logger; one more raises :class:`ParseError` naming the line.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records, bad = [], []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if len(parts) != 3:
                raise ValueError(f"expected 3 tab-separated fields, got {len(parts)}")
            user, item, ts = parts
            records.append(InteractionRecord(user, item, int(ts)))
        except ValueError as exc:
            bad.append((lineno, str(exc)))
            if len(bad) > max_malformed:
                raise ParseError(f"line {lineno}: {exc}") from None
    if bad:
        log.warning("skipped %d malformed line(s): %s", len(bad), ", ".join(str(n) for n, _ in bad))
    return records


def write_interactions(records: Iterable[InteractionRecord], stream: TextIO):
    for r in records:
        stream.write(f"{r.user}\t{r.item}\t{r.timestamp}\n")


def read_interactions(path, max_malformed: int = 0) -> list:
    with open(path, encoding="utf-8") as fh:
        return parse_interactions(fh, max_malformed)


def build_sequences(records: Iterable[InteractionRecord], min_len: int = 3, vocab: Vocab | None = None):
    """Group records per user in (timestamp, file order) order.

    Users with fewer than ``min_len`` interactions are dropped before any
    index is assigned.  Returns ``(sequences, vocab)``.
    """
    per_user: dict[str, list] = {}
    for pos, r in enumerate(records):
        per_user.setdefault(r.user, []).append((r.timestamp, pos, r.item))
    vocab = vocab if vocab is not None else Vocab()
    sequences = []
    for user, events in per_user.items():
        if len(events) < min_len:
            continue
        events.sort()
        uid = vocab.add_user(user)
        sequences.append(UserSequence(uid, [vocab.add_item(item) for _, _, item in events]))
    return sequences, vocab


def split(sequences, seed: int, vocab: Vocab | None = None, fractions=(0.8, 0.1, 0.1)) -> DatasetSplit:
    """Seeded random 80/10/10 partition of whole sequences."""
    n = len(sequences)
    if n < 10:
        raise DataError(f"need at least 10 sequences to split, got {n}")
    if vocab is None:
        n_users = 1 + max(s.user_id for s in sequences)
        n_items = 1 + max(max(s.items) for s in sequences)
        vocab = Vocab.identity(n_users, n_items)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    order = [sequences[i] for i in perm]
    return DatasetSplit(order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:], vocab)


def write_split_manifest(ds: DatasetSplit, out_dir):
    """One file of user ids per split: ``train_users.txt`` etc."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        seqs = getattr(ds, name)
        (out / f"{name}_users.txt").write_text("".join(f"{ds.vocab.users[s.user_id]}\n" for s in seqs),
                                                encoding="utf-8")


def load_split(records, manifest_dir, min_len: int = 3) -> DatasetSplit:
    """Rebuild a :class:`DatasetSplit` from an interaction log plus a split manifest."""
    sequences, vocab = build_sequences(records, min_len)
    by_user = {vocab.users[s.user_id]: s for s in sequences}
    parts = []
    for name in ("train", "valid", "test"):
        path = Path(manifest_dir) / f"{name}_users.txt"
        if not path.exists():
            raise DataError(f"missing split manifest {path}")
        ids = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        try:
            parts.append([by_user[u] for u in ids])
        except KeyError as exc:
            raise DataError(f"{path.name}: unknown user {exc.args[0]!r}") from None
    return DatasetSplit(*parts, vocab)


def to_records(sequences, vocab: Vocab | None = None, start: int = 1_600_000_000) -> list:
    """Serialise index sequences back to records with one-second timestamps."""
    out = []
    for s in sequences:
        user = vocab.users[s.user_id] if vocab else f"u{s.user_id}"
        for t, item in enumerate(s.items):
            out.append(InteractionRecord(user, vocab.items[item] if vocab else f"i{item}", start + t))
    return out


def item_counts(sequences, n_items: int) -> np.ndarray:
    counts = np.zeros(n_items, dtype=np.int64)
    for s in sequences:
        np.add.at(counts, np.asarray(s.items, dtype=np.int64), 1)
    return counts


def popularity_weights(m_items: int, power_exponent: float) -> np.ndarray:
    """Item sampling weights whose interaction counts follow a power law.

    If counts have density ``~ k^-a`` the rank-frequency curve is Zipf with
    exponent ``1 / (a - 1)``; item 0 is the most popular.
    """
    if not power_exponent > 1:
        raise ValueError("power_exponent must exceed 1")
    s = 1.0 / (power_exponent - 1.0)
    w = np.arange(1, m_items + 1, dtype=np.float64) ** -s
    return w / w.sum()


def synth_hierarchical(n_users: int, m_items: int, power_exponent: float = 2.0, seq_len=(5, 15),
                       seed: int = 0, n_clusters: int | None = None, cluster_bias: float = 0.95) -> list:
    """Long-tailed user sequences with latent user clusters.

    Item ``i`` belongs to cluster ``i mod K``.  Each user gets a cluster with
    probability equal to that cluster's popularity mass; each interaction is
    drawn from the cluster's items (renormalised popularity) with probability
    ``cluster_bias`` and from the global popularity otherwise.  With that
    cluster prior the marginal item distribution is exactly the global
    power law.
    """
    rng = np.random.default_rng(seed)
    p = popularity_weights(m_items, power_exponent)
    K = n_clusters or max(1, m_items // 20)
    cluster_of = np.arange(m_items) % K
    mass = np.bincount(cluster_of, weights=p, minlength=K)
    members = [np.flatnonzero(cluster_of == k) for k in range(K)]
    within = [p[idx] / mass[k] for k, idx in enumerate(members)]
    lo, hi = seq_len
    user_cluster = rng.choice(K, size=n_users, p=mass)
    out = []
    for u in range(n_users):
        k = user_cluster[u]
        n = int(rng.integers(lo, hi + 1))
        from_cluster = rng.random(n) < cluster_bias
        items = np.where(from_cluster,
                         rng.choice(members[k], size=n, p=within[k]),
                         rng.choice(m_items, size=n, p=p))
        out.append(UserSequence(u, items.tolist()))
    return out


def synth_separable(n_users: int = 50, m_items: int = 20, n_clusters: int = 2, seq_len=(5, 10),
                    seed: int = 0) -> list:
    """Users interact uniformly within exactly one item cluster (``i mod K``)."""
    rng = np.random.default_rng(seed)
    members = [np.arange(k, m_items, n_clusters) for k in range(n_clusters)]
    out = []
    for u in range(n_users):
        k = u % n_clusters
        n = int(rng.integers(seq_len[0], seq_len[1] + 1))
        out.append(UserSequence(u, rng.choice(members[k], size=n).tolist()))
    return out
