import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phgr import geometry as geo
from phgr.autodiff import Tensor, softmax
from phgr.graphs import UserSequence, build_global_graph
from phgr.hyperbolic import EuclideanSpace, PoincareSpace
from phgr.model import (ModelConfig, attention_aggregate, forward, forward_batch, init_params,
                        layer_readout, long_attention, make_batch, short_attention, to_tensors, user_readout)

SPACE = PoincareSpace()
RNG = np.random.default_rng(7)


def ball(n, d, r=0.6, rng=RNG):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True) * rng.uniform(0.05, r, size=(n, 1))


def cfg_of(d):
    return geo.BallConfig(dim=d)


# ---------------------------------------------------------------- parameters

class TestInit:
    def test_zero_std_at_origin(self):
        p = init_params(4, 6, ModelConfig(dim=3, init_std=0.0))
        assert not p["user_emb"].any() and not p["item_emb"].any()

    def test_seeded(self):
        a = init_params(4, 6, ModelConfig(dim=3), seed=1)
        b = init_params(4, 6, ModelConfig(dim=3), seed=1)
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_reserved_item_row(self):
        assert init_params(4, 6, ModelConfig(dim=3))["item_emb"].shape == (7, 3)

    @pytest.mark.parametrize("kw", [dict(layers=0), dict(layers=6), dict(variant="klein"), dict(inner="Q"),
                                    dict(alpha=(0.5,)), dict(dim=0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            ModelConfig(**kw)

    def test_uniform_default_mix(self):
        assert ModelConfig(layers=3).alpha == (0.25,) * 4


# ---------------------------------------------------------------- graph attention

class TestAggregate:
    def run(self, X, Y, tgt, nbr, att=None, bias=0.0):
        d = X.shape[1]
        att = np.zeros(2 * d) if att is None else att
        out, e = attention_aggregate(SPACE, Tensor(X), Tensor(Y), np.array(tgt), np.array(nbr),
                                     Tensor(att), Tensor([bias]), X.shape[0])
        return out.value, e.value

    def test_single_neighbour_moves_to_it(self):
        X, Y = ball(2, 3), ball(1, 3)
        out, e = self.run(X, Y, [0], [0])
        np.testing.assert_allclose(out[0], Y[0], atol=1e-10)
        np.testing.assert_array_equal(out[1], X[1])          # isolated target
        np.testing.assert_allclose(e, [1.0])

    def test_two_neighbours_tangent_midpoint(self):
        X, Y = ball(1, 3), ball(2, 3)
        out, e = self.run(X, Y, [0, 0], [0, 1])
        c = cfg_of(3)
        ref = geo.exp_map(X[0], 0.5 * geo.log_map(X[0], Y[0], c) + 0.5 * geo.log_map(X[0], Y[1], c), c)
        np.testing.assert_allclose(out[0], ref, atol=1e-12)
        np.testing.assert_allclose(e, [0.5, 0.5])

    def test_logits_against_oracle(self):
        X, Y = ball(2, 3), ball(3, 3)
        att = RNG.normal(size=6)
        tgt, nbr = [0, 0, 1, 1], [0, 2, 1, 2]
        out, e = self.run(X, Y, tgt, nbr, att, bias=0.3)
        c = cfg_of(3)
        for t in (0, 1):
            idx = [k for k, tt in enumerate(tgt) if tt == t]
            logits = np.array([att[:3] @ geo.log0(X[t], c) + att[3:] @ geo.log0(Y[nbr[k]], c) + 0.3 for k in idx])
            w = np.exp(logits - logits.max())
            w /= w.sum()
            np.testing.assert_allclose(e[idx], w, atol=1e-12)
            agg = sum(wk * geo.log_map(X[t], Y[nbr[k]], c) for wk, k in zip(w, idx))
            np.testing.assert_allclose(out[t], geo.exp_map(X[t], agg, c), atol=1e-12)


class TestReadout:
    def test_first_weight_only(self):
        a, b = ball(3, 4), ball(3, 4)
        out = layer_readout(SPACE, [Tensor(a), Tensor(b)], (1.0, 0.0)).value
        np.testing.assert_allclose(out, a, atol=1e-12)

    def test_identical_layers(self):
        a = ball(3, 4)
        out = layer_readout(SPACE, [Tensor(a)] * 3, (0.2, 0.5, 0.3)).value
        np.testing.assert_allclose(out, a, atol=1e-12)

    def test_random_two_layers(self):
        a, b, c = ball(2, 4), ball(2, 4), ball(2, 4)
        mix = (0.5, 0.3, 0.2)
        out = layer_readout(SPACE, [Tensor(a), Tensor(b), Tensor(c)], mix).value
        bc = cfg_of(4)
        ref = geo.exp0(mix[0] * geo.log0(a, bc) + mix[1] * geo.log0(b, bc) + mix[2] * geo.log0(c, bc), bc)
        np.testing.assert_allclose(out, ref, atol=1e-12)


# ---------------------------------------------------------------- temporal attention

def padded(seqs, d):
    T = max(len(s) for s in seqs)
    H = np.zeros((len(seqs), T, d))
    mask = np.zeros((len(seqs), T), bool)
    for b, s in enumerate(seqs):
        H[b, :len(s)] = s
        mask[b, :len(s)] = True
    return H, mask, np.array([len(s) for s in seqs])


class TestLongAttention:
    def test_length_one(self):
        d = 3
        x = ball(1, d)
        H, mask, _ = padded([x], d)
        W = [RNG.normal(size=(d, d)) for _ in range(3)]
        z, A = long_attention(SPACE, Tensor(H), mask, *map(Tensor, W))
        bc = cfg_of(d)
        np.testing.assert_allclose(z.value[0], geo.exp0(W[2] @ geo.log0(x[0], bc), bc), atol=1e-12)

    def test_uniform_when_queries_vanish(self):
        d = 3
        xs = ball(4, d)
        H, mask, _ = padded([xs], d)
        z, A = long_attention(SPACE, Tensor(H), mask, Tensor(np.zeros((d, d))), Tensor(np.zeros((d, d))),
                              Tensor(np.eye(d)))
        bc = cfg_of(d)
        np.testing.assert_allclose(z.value[0], geo.exp0(geo.log0(xs, bc).mean(axis=0), bc), atol=1e-12)
        np.testing.assert_allclose(A.value[0], np.full((4, 4), 0.25))

    def test_dense_oracle_with_padding(self):
        d = 4
        s1, s2 = ball(3, d), ball(2, d)
        H, mask, _ = padded([s1, s2], d)
        Wq, Wk, Wv = (RNG.normal(size=(d, d)) for _ in range(3))
        z, _ = long_attention(SPACE, Tensor(H), mask, Tensor(Wq), Tensor(Wk), Tensor(Wv))
        bc = cfg_of(d)
        for b, s in enumerate((s1, s2)):
            L = geo.log0(s, bc)
            S = (L @ Wq.T) @ (L @ Wk.T).T / np.sqrt(d)
            A = np.exp(S - S.max(axis=1, keepdims=True))
            A /= A.sum(axis=1, keepdims=True)
            ref = geo.exp0((A @ (L @ Wv.T)).mean(axis=0), bc)
            np.testing.assert_allclose(z.value[b], ref, atol=1e-12)


class TestShortAttention:
    def test_zero_query(self):
        d = 3
        H, mask, lengths = padded([ball(4, d)], d)
        z, g = short_attention(SPACE, Tensor(H), mask, lengths, Tensor(RNG.normal(size=(d, d))),
                               Tensor(RNG.normal(size=(d, d))), Tensor(np.zeros(d)))
        assert not g.value.any()
        np.testing.assert_allclose(z.value, 0.0, atol=1e-15)

    def test_length_one_closed_form(self):
        d = 3
        x = ball(1, d)
        q = RNG.normal(size=d)
        H, mask, lengths = padded([x], d)
        z, g = short_attention(SPACE, Tensor(H), mask, lengths, Tensor(np.zeros((d, d))),
                               Tensor(np.zeros((d, d))), Tensor(q))
        gamma = q @ np.full(d, 0.5)
        bc = cfg_of(d)
        assert g.value[0, 0] == pytest.approx(gamma)
        np.testing.assert_allclose(z.value[0], geo.exp0(gamma * geo.log0(x[0], bc), bc), atol=1e-12)

    def test_dense_oracle(self):
        d = 4
        s1, s2 = ball(4, d), ball(2, d)
        H, mask, lengths = padded([s1, s2], d)
        Wn, Wi = RNG.normal(size=(2, d, d))
        q = RNG.normal(size=d)
        z, g = short_attention(SPACE, Tensor(H), mask, lengths, Tensor(Wn), Tensor(Wi), Tensor(q))
        bc = cfg_of(d)
        for b, s in enumerate((s1, s2)):
            L = geo.log0(s, bc)
            gamma = (1 / (1 + np.exp(-(L[-1] @ Wn.T + L @ Wi.T)))) @ q
            np.testing.assert_allclose(g.value[b, :len(s)], gamma, atol=1e-12)
            np.testing.assert_allclose(z.value[b], geo.exp0(gamma @ L, bc), atol=1e-12)
        assert g.value[1, 2:].tolist() == [0.0, 0.0]


class TestUserReadout:
    def parts(self, d=3):
        return [Tensor(ball(2, d)) for _ in range(3)]

    def test_zero_matrix(self):
        x, zl, zs = self.parts()
        out = user_readout(SPACE, x, zl, zs, Tensor(np.zeros((3, 9))), ModelConfig(dim=3))
        np.testing.assert_allclose(out.value, 0.0, atol=1e-15)

    def test_pass_through_last_item(self):
        x, zl, zs = self.parts()
        W = np.hstack([np.eye(3), np.zeros((3, 6))])
        out = user_readout(SPACE, x, zl, zs, Tensor(W), ModelConfig(dim=3))
        np.testing.assert_allclose(out.value, x.value, atol=1e-12)

    def test_disabled_branch_is_zero(self):
        x, zl, zs = self.parts()
        W = np.hstack([np.zeros((3, 3)), np.eye(3), np.zeros((3, 3))])
        out = user_readout(SPACE, x, zl, zs, Tensor(W), ModelConfig(dim=3, no_long=True))
        np.testing.assert_allclose(out.value, 0.0, atol=1e-15)


# ---------------------------------------------------------------- scoring and full pass

class TestScoring:
    def test_user_at_origin(self):
        # D(0, v) = (d(0,0)^2 + d(0,v)^2 - d(0,v)^2) / 2 = 0 for every item
        items = ball(5, 3)
        s = SPACE.score(Tensor(np.zeros((1, 3))), Tensor(items)).value[0]
        np.testing.assert_allclose(s, 0.0, atol=1e-12)

    def test_identical_items_tie(self):
        item = ball(1, 3)
        p = softmax(SPACE.score(Tensor(ball(1, 3)), Tensor(np.vstack([item, item])))).value[0]
        assert p[0] == p[1]

    def test_three_hand_placed_items(self):
        u = np.array([[0.3, 0.1]])
        items = np.array([[0.2, 0.2], [-0.4, 0.1], [0.0, -0.6]])
        p = softmax(SPACE.score(Tensor(u), Tensor(items))).value[0]
        D = np.array([geo.poincare_inner(u[0], v, cfg_of(2)) for v in items])
        np.testing.assert_allclose(p, np.exp(D) / np.exp(D).sum(), atol=1e-12)

    def test_projected_inner_option(self):
        u, items = ball(2, 3), ball(4, 3)
        s = PoincareSpace(inner="P").score(Tensor(u), Tensor(items)).value
        bc = cfg_of(3)
        np.testing.assert_allclose(s, geo.log0(u, bc) @ geo.log0(items, bc).T, atol=1e-12)


def toy(n_users=6, n_items=8, d=4, seed=0, **kw):
    rng = np.random.default_rng(seed)
    seqs = [UserSequence(u, rng.integers(0, n_items, size=rng.integers(2, 7)).tolist()) for u in range(n_users)]
    cfg = ModelConfig(dim=d, init_std=0.3, **kw)
    params = init_params(n_users, n_items, cfg, seed)
    return seqs, build_global_graph(seqs, n_users, n_items), params, cfg


class TestForward:
    def test_reduced_pipeline_ranks_by_origin_distance(self):
        seqs, graph, params, _ = toy()
        cfg = ModelConfig(dim=4, no_global=True, no_local=True, no_long=True, no_short=True)
        params["W"] = np.hstack([np.eye(4), np.zeros((4, 8))])
        out = forward(seqs[0].items, graph, params, cfg)
        bc = cfg_of(4)
        x_n = geo.exp0(params["item_emb"][seqs[0].items[-1]], bc)
        items = geo.exp0(params["item_emb"][:-1], bc)
        np.testing.assert_allclose(out.user_point, x_n, atol=1e-12)
        np.testing.assert_allclose(out.scores, [geo.poincare_inner(x_n, v, bc) for v in items], atol=1e-12)

    def test_euclidean_two_item_toy(self):
        seqs = [UserSequence(0, [0, 1])]
        graph = build_global_graph(seqs, 1, 2)
        cfg = ModelConfig(dim=2, variant="euclidean", no_global=True, no_local=True, no_long=True, no_short=True)
        params = init_params(1, 2, cfg)
        params["item_emb"] = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
        params["W"] = np.hstack([np.eye(2), np.zeros((2, 4))])
        out = forward([0, 1], graph, params, cfg)
        # user = last item (0, 2); scores = (0, 4)
        np.testing.assert_allclose(out.scores, [0.0, 4.0])
        np.testing.assert_allclose(out.probabilities, [1 / (1 + np.e**4), np.e**4 / (1 + np.e**4)])

    def test_unknown_item_maps_to_reserved_row(self):
        b = make_batch([[0, 99, 1]], n_items=8)
        assert 8 in b.node_item.tolist()

    def test_euclidean_space_is_flat(self):
        e = EuclideanSpace()
        x = Tensor(ball(3, 2))
        np.testing.assert_array_equal(e.exp0(x).value, x.value)

    @pytest.mark.parametrize("flags", [{}, dict(no_global=True), dict(no_local=True), dict(no_long=True),
                                       dict(no_short=True), dict(variant="euclidean"), dict(inner="P"),
                                       dict(layers=2), dict(edge_weights=True)])
    def test_batch_matches_single(self, flags):
        seqs, graph, params, cfg = toy(**flags)
        T = to_tensors(params)
        inputs = [list(s.items) for s in seqs]
        batched = forward_batch(T, graph, inputs, cfg).scores.value
        for b, s in enumerate(inputs):
            single = forward_batch(T, graph, [s], cfg).scores.value[0]
            np.testing.assert_allclose(batched[b], single, atol=1e-12)
        assert np.all(np.isfinite(batched))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.integers(0, 7), min_size=1, max_size=6), min_size=1, max_size=5))
def test_batch_order_does_not_matter(inputs):
    _, graph, params, cfg = toy()
    T = to_tensors(params)
    fwd = forward_batch(T, graph, inputs, cfg).scores.value
    rev = forward_batch(T, graph, inputs[::-1], cfg).scores.value[::-1]
    np.testing.assert_allclose(fwd, rev, atol=1e-12)
    users = forward_batch(T, graph, inputs, cfg).user_points.value
    assert np.all(np.linalg.norm(users, axis=1) < 1.0)
