import math

import numpy as np
import pytest

from trajrec.graph_encoder import GATView, GraphContext, Neighbourhoods, ViewAggregator, trajectory_context
from trajrec.numerics import Tensor, finite_diff_check, mul, sum_all
from trajrec.roadnet import ViewGraph, sparsify_knn


def _view(n, pairs, values, K=8):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    vals = np.asarray(values, dtype=np.float64)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    vg = ViewGraph("distance", n, pairs[order, 0], pairs[order, 1], vals[order], vals[order], 2.0)
    return sparsify_knn(vg, K)


def _gat_oracle(x, W, a_self, a_nbr, center, nbrs, heads=2):
    """Plain-numpy single-layer GAT for one node."""
    hw = x @ W
    dh = W.shape[1] // heads
    hood = [center] + list(nbrs)
    out = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        e = np.array([hw[center, sl] @ a_self[h] + hw[j, sl] @ a_nbr[h] for j in hood])
        e = np.where(e > 0, e, 0.2 * e)
        att = np.exp(e - e.max())
        att /= att.sum()
        out.append(sum(att[k] * hw[j, sl] for k, j in enumerate(hood)))
    return np.concatenate(out)


def test_isolated_node_returns_transformed_self():
    vg = _view(3, [(0, 0), (1, 1), (2, 2)], [0.0, 0.0, 0.0])
    hood = Neighbourhoods.from_view(vg, 8)
    table = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    gat = GATView(4, np.random.default_rng(1))
    g, att = gat(table, np.array([1]), hood)
    np.testing.assert_array_equal(g.data[0], table.data[1] @ gat.W.data)
    assert np.all(att[0, :, 0] == 1.0)


def test_identical_features_split_attention_evenly():
    vg = _view(2, [(0, 1), (1, 0)], [0.3, 0.3])
    hood = Neighbourhoods.from_view(vg, 8)
    row = np.random.default_rng(2).normal(size=4)
    table = Tensor(np.stack([row, row]), requires_grad=True)
    _, att = GATView(4, np.random.default_rng(3))(table, np.array([0]), hood)
    np.testing.assert_allclose(att[0, :, :2], 0.5, atol=1e-15)


def test_three_node_gat_matches_hand_unroll():
    vg = _view(3, [(0, 1), (0, 2), (1, 2), (2, 0)], [0.2, 0.7, 0.1, 0.4])
    hood = Neighbourhoods.from_view(vg, 8)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 6))
    gat = GATView(6, rng)
    g, att = gat(Tensor(x), np.array([0, 1, 2]), hood)
    nb = {0: [1, 2], 1: [2], 2: [0]}
    for i in range(3):
        expect = _gat_oracle(x, gat.W.data, gat.a_self.data, gat.a_nbr.data, i, nb[i])
        np.testing.assert_allclose(g.data[i], expect, rtol=0, atol=1e-13)
    # neighbourhood softmax rows sum to one
    np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-12)


def test_knn_neighbours_keep_smallest_values():
    vg = _view(4, [(0, 1), (0, 2), (0, 3)], [0.9, 0.1, 0.5], K=2)
    hood = Neighbourhoods.from_view(vg, 2)
    assert hood.ids[0].tolist() == [0, 2, 3]
    assert hood.mask[0].all()


def test_trajectory_context_examples():
    x = Tensor(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    np.testing.assert_allclose(trajectory_context(x, [0.5], np.ones((1, 2), bool)).data, [[0.25, 0.25]])
    np.testing.assert_array_equal(trajectory_context(x, [0.0], np.ones((1, 2), bool)).data, [[0.0, 0.0]])
    u = Tensor(np.tile(np.array([3.0, -1.0]), (1, 3, 1)))
    np.testing.assert_allclose(trajectory_context(u, [1.0], np.ones((1, 3), bool)).data, [[3.0, -1.0]])


def test_trajectory_context_ignores_padding():
    x = Tensor(np.array([[[2.0, 4.0], [100.0, 100.0]]]))
    np.testing.assert_allclose(trajectory_context(x, [1.0], np.array([[True, False]])).data, [[2.0, 4.0]])


def _aggregator_oracle(agg, gs, q):
    v, Wc = agg.v.data, agg.W_ctx.data
    w = np.array([v @ np.tanh(g @ W.data + q @ Wc) for g, W in zip(gs, agg.W_views)])
    alpha = np.exp(w - w.max())
    alpha /= alpha.sum()
    return alpha[0] * gs[0] + alpha[1] * gs[1], alpha


def test_aggregator_matches_hand_unroll():
    rng = np.random.default_rng(5)
    agg = ViewAggregator(5, rng)
    g1, g2, q = rng.normal(size=(3, 5))
    g_hat, alpha = agg([Tensor(g1[None, None]), Tensor(g2[None, None])], Tensor(q[None]))
    exp_g, exp_a = _aggregator_oracle(agg, [g1, g2], q)
    np.testing.assert_allclose(alpha.data[0, 0], exp_a, rtol=0, atol=1e-12)
    np.testing.assert_allclose(g_hat.data[0, 0], exp_g, rtol=0, atol=1e-12)


def test_aggregator_known_weights():
    agg = ViewAggregator(1, np.random.default_rng(0))
    agg.v.data[:] = math.log(3) / math.tanh(1.0)
    agg.W_views[0].data[:] = 1.0
    agg.W_views[1].data[:] = 0.0
    g_hat, alpha = agg([Tensor([[[1.0]]]), Tensor([[[2.0]]])], Tensor([[0.0]]))
    np.testing.assert_allclose(alpha.data[0, 0], [0.75, 0.25], atol=1e-15)
    assert g_hat.data[0, 0, 0] == pytest.approx(1.25, abs=1e-15)


def test_identical_logits_give_even_split():
    agg = ViewAggregator(3, np.random.default_rng(6))
    agg.W_views[1].data[:] = agg.W_views[0].data
    g = np.random.default_rng(7).normal(size=(1, 2, 3))
    _, alpha = agg([Tensor(g), Tensor(g)], Tensor(np.ones((1, 3))))
    np.testing.assert_allclose(alpha.data, 0.5, atol=1e-15)


def test_alpha_is_probability_vector():
    rng = np.random.default_rng(8)
    agg = ViewAggregator(6, rng)
    g1, g2 = rng.normal(size=(2, 4, 7, 6))
    _, alpha = agg([Tensor(g1), Tensor(g2)], Tensor(rng.normal(size=(4, 6))))
    assert np.all(alpha.data >= 0)
    np.testing.assert_allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-12)


def test_aggregator_is_deterministic_and_all_params_get_gradient():
    rng = np.random.default_rng(9)
    agg = ViewAggregator(4, rng)
    g1 = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    g2 = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    q = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 3, 4)))
    f = lambda: sum_all(mul(agg([g1, g2], q)[0], w))
    np.testing.assert_array_equal(f().data, f().data)
    f().backward()
    for name, p in agg.named_parameters().items():
        assert np.any(p.grad != 0), name
    agg.zero_grad()
    params = dict(agg.named_parameters(), g1=g1, g2=g2, q=q)
    assert finite_diff_check(f, params) < 1e-6


def test_graph_context_requires_matching_views():
    a = _view(3, [(0, 1)], [0.5])
    b = _view(4, [(0, 1)], [0.5])
    with pytest.raises(ValueError):
        GraphContext(a, b)
