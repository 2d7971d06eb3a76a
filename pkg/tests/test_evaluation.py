import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phgr.autodiff import ContractError
from phgr.evaluation import (RankingMetrics, evaluate, evaluate_popularity, evaluate_scores, export_attention,
                             format_table, metrics_at_k, rank_items, read_attention, region_analysis,
                             target_ranks, write_metrics_csv)
from phgr.graphs import DataError, UserSequence, build_global_graph
from phgr.model import ModelConfig, forward, init_params


def brute_force(ranking, target, k):
    for pos, item in enumerate(ranking, start=1):
        if item == target:
            if pos <= k:
                return 1.0, 1.0 / math.log2(pos + 1), 1.0 / pos
            return 0.0, 0.0, 0.0
    return 0.0, 0.0, 0.0


class TestMetricsAtK:
    def test_rank_one(self):
        assert metrics_at_k([3, 1, 2], 3, 2) == (1.0, 1.0, 1.0)

    def test_rank_two(self):
        hit, ndcg, mp = metrics_at_k(list(range(20)), 1, 10)
        assert (hit, mp) == (1.0, 0.5)
        assert ndcg == pytest.approx(0.6309, abs=1e-4)

    def test_absent(self):
        assert metrics_at_k(list(range(20)), 15, 10) == (0.0, 0.0, 0.0)

    def test_k_too_large(self):
        with pytest.raises(ContractError):
            metrics_at_k([0, 1, 2], 0, 5)


@settings(max_examples=300, deadline=None)
@given(st.permutations(list(range(30))), st.integers(0, 29), st.integers(1, 30))
def test_metrics_match_brute_force(ranking, target, k):
    assert metrics_at_k(ranking, target, k) == brute_force(ranking, target, k)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=40))
def test_metric_ordering_invariants(ranks):
    m = RankingMetrics.from_ranks(ranks, ks=(5, 10, 20, 50))
    for k in (5, 10, 20, 50):
        assert m.hit[k] >= m.ndcg[k] - 1e-15 >= m.map[k] - 2e-15
    assert m.hit[5] <= m.hit[10] <= m.hit[20] <= m.hit[50]


class TestRanks:
    def test_ties_favour_lower_index(self):
        s = np.array([[1.0, 2.0, 2.0, 0.0]])
        assert target_ranks(s, [1])[0] == 1 and target_ranks(s, [2])[0] == 2
        assert rank_items(s[0]).tolist() == [1, 2, 0, 3]

    def test_ranks_agree_with_sorted_order(self):
        rng = np.random.default_rng(0)
        s = rng.integers(0, 5, size=(20, 12)).astype(float)
        t = rng.integers(0, 12, size=20)
        ranks = target_ranks(s, t)
        for row, tt, r in zip(s, t, ranks):
            assert rank_items(row).tolist().index(tt) + 1 == r

    def test_oracle_scorer_is_perfect(self):
        seqs = [UserSequence(u, [0, 1, u % 7]) for u in range(20)]

        def oracle(inputs):
            out = np.zeros((len(inputs), 7))
            out[np.arange(len(inputs)), [s.items[-1] for s in seqs]] = 1.0
            return out

        m = evaluate_scores(oracle, seqs, 7, ks=(1, 5))
        assert all(v == 1.0 for d in (m.hit, m.ndcg, m.map) for v in d.values())

    def test_empty_split(self):
        with pytest.raises(DataError):
            evaluate_scores(lambda x: x, [], 7)

    def test_popularity_baseline(self):
        train = [UserSequence(0, [2, 2, 2, 1]), UserSequence(1, [2, 1, 0])]
        test = [UserSequence(2, [0, 2]), UserSequence(3, [0, 1])]
        m = evaluate_popularity(train, test, 3, ks=(1, 2))
        assert m.hit[1] == 0.5 and m.hit[2] == 1.0

    def test_model_evaluation_deterministic(self):
        seqs = [UserSequence(u, [(u + j) % 9 for j in range(4)]) for u in range(12)]
        cfg = ModelConfig(dim=4, init_std=0.2)
        params = init_params(12, 9, cfg)
        g = build_global_graph(seqs, 12, 9)
        a, b = evaluate(params, g, seqs, cfg, (1, 5)), evaluate(params, g, seqs, cfg, (1, 5))
        assert a.rows() == b.rows()


def test_random_scores_hit_rate():
    rng = np.random.default_rng(0)
    scores = rng.random((10_000, 100))
    targets = rng.integers(0, 100, size=10_000)
    m = RankingMetrics.from_ranks(target_ranks(scores, targets), ks=(10,))
    assert abs(m.hit[10] - 0.10) <= 0.01


class TestRegions:
    def test_all_at_origin(self):
        rep = region_analysis(np.zeros((6, 3)), np.arange(6))
        assert rep.counts == [6, 0, 0, 0]

    def test_explicit_boundaries(self):
        # one item per band, Euclidean distances 0.5, 1.5, 2.5, 3.5
        pts = np.array([[0.5, 0.0], [1.5, 0.0], [2.5, 0.0], [3.5, 0.0]])
        rep = region_analysis(pts, [4, 3, 2, 1], boundaries=(1, 2, 3), variant="euclidean")
        assert rep.region_of.tolist() == [0, 1, 2, 3]
        assert rep.mean_interactions == [4.0, 3.0, 2.0, 1.0]

    def test_poincare_distance_used(self):
        # Poincaré distance to the origin of norm r is 2 atanh(r)
        pts = np.array([[math.tanh(1.25), 0.0]])
        rep = region_analysis(pts, [1], boundaries=(1.0, 2.0, 3.0))
        assert rep.region_of.tolist() == [2]

    def test_bad_boundaries(self):
        with pytest.raises(ValueError):
            region_analysis(np.zeros((2, 2)), [1, 1], boundaries=(2, 1, 3))

    def test_popular_near_origin_fixture(self):
        rng = np.random.default_rng(0)
        m = 400
        counts = 1000.0 / np.arange(1, m + 1)
        radius = np.tanh(0.1 + 2.0 * np.arange(m) / m)        # rank order = distance order
        dirs = rng.normal(size=(m, 8))
        pts = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * radius[:, None] * 0.99
        rep = region_analysis(pts, counts)
        assert sum(rep.counts) == m
        assert all(a > b for a, b in zip(rep.mean_interactions, rep.mean_interactions[1:]))


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 60), st.integers(0, 1000))
def test_regions_partition(m, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(m, 3)) * 0.2
    rep = region_analysis(pts, rng.integers(0, 9, size=m))
    assert sum(rep.counts) == m
    assert rep.region_of.min() >= 0 and rep.region_of.max() <= 3


class TestAttentionExport:
    def setup_model(self):
        seqs = [UserSequence(u, [u % 5, (u + 1) % 5, (u + 3) % 5]) for u in range(6)]
        cfg = ModelConfig(dim=4, init_std=0.3)
        return build_global_graph(seqs, 6, 5), init_params(6, 5, cfg, 3), cfg

    def test_roundtrip_bit_exact(self, tmp_path):
        g, p, cfg = self.setup_model()
        outs = [("a", [0, 1, 2], forward([0, 1, 2], g, p, cfg)), ("b", [4], forward([4], g, p, cfg))]
        export_attention(outs, tmp_path / "att.csv")
        back = read_attention(tmp_path / "att.csv")
        np.testing.assert_array_equal(back["a"]["short"], outs[0][2].short_attention)
        np.testing.assert_array_equal(back["a"]["long"], outs[0][2].long_attention)
        assert back["b"]["short"].shape == (1,)

    def test_unwritable(self, tmp_path):
        g, p, cfg = self.setup_model()
        with pytest.raises(OSError):
            export_attention([("a", [0, 1], forward([0, 1], g, p, cfg))], tmp_path / "missing" / "att.csv")


def test_table_and_csv(tmp_path):
    rows = [("toy", "PHGR", 10, 12.345, 6.0, 4.0)]
    assert "12.35" in format_table(rows)
    write_metrics_csv(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "dataset,variant,K,H,N,M"
