import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import line_network, traj
from trajrec.baseline import frequency_recover, most_likely_route, transition_weight
from trajrec.roadnet import RoadNetwork, build_transition_stats, transitions_from_counts
from trajrec.synthgen import GenConfig, gen_grid_network, gen_trajectories, sparsify


def diamond():
    """a: 0->1, then two branches to node 4 (u: 1->2->4, v: 1->3->4), then c: 4->5.

    Side exits w (2->6), x (3->7), z (4->8) let the branch probabilities differ.
    """
    edges = [(0, 1), (1, 2), (2, 4), (1, 3), (3, 4), (4, 5), (2, 6), (3, 7), (4, 8)]
    fr, to = zip(*edges)
    coords = [(0, 0, 1, 1)] * len(edges)
    return RoadNetwork(list(fr), list(to), [100.0] * len(edges), coords)


A, U1, U2, V1, V2, C, W, X, Z = range(9)


def test_forced_single_gap_filled():
    net = line_network((100.0, 100.0, 100.0, 100.0))
    stats = build_transition_stats([traj(0, [0, 1, 2, 3])], net)
    out = frequency_recover(traj(5, [0, 2, 3]), net, stats)
    assert out.segments == [0, 1, 2, 3]
    assert math.isnan(out.timestamps[1]) and out.timestamps[2] == 10.0


def test_high_probability_route_chosen():
    net = diamond()
    counts = {(A, U1): 1, (A, V1): 1,
              (U1, U2): 9, (U1, W): 1, (U2, C): 9, (U2, Z): 1,
              (V1, V2): 1, (V1, X): 1, (V2, C): 1, (V2, Z): 1}
    stats = transitions_from_counts(net, counts)
    assert math.exp(-sum(transition_weight(stats, a, b) for a, b in [(U1, U2), (U2, C)])) == pytest.approx(0.81)
    assert math.exp(-sum(transition_weight(stats, a, b) for a, b in [(V1, V2), (V2, C)])) == pytest.approx(0.25)
    assert most_likely_route(net, stats, A, C) == [U1, U2]
    # mirror the counts and the other branch wins
    swapped = {(A, U1): 1, (A, V1): 1,
               (U1, U2): 1, (U1, W): 1, (U2, C): 1, (U2, Z): 1,
               (V1, V2): 9, (V1, X): 1, (V2, C): 9, (V2, Z): 1}
    assert most_likely_route(net, transitions_from_counts(net, swapped), A, C) == [V1, V2]


def test_unseen_transitions_use_epsilon_weight():
    net = diamond()
    stats = transitions_from_counts(net, {})
    assert transition_weight(stats, A, U1) == pytest.approx(math.log(1e6))
    # all-equal weights: tie broken by the smaller id sequence
    assert most_likely_route(net, stats, A, C) == [U1, U2]


def test_tie_prefers_shorter_route():
    # two equally likely branches of different length
    edges = [(0, 1), (1, 2), (2, 4), (1, 3), (3, 4), (4, 5)]
    fr, to = zip(*edges)
    lengths = [100.0, 300.0, 100.0, 100.0, 100.0, 100.0]
    net = RoadNetwork(list(fr), list(to), lengths, [(0, 0, 1, 1)] * 6)
    stats = transitions_from_counts(net, {(0, 1): 1, (0, 3): 1, (1, 2): 1, (3, 4): 1, (2, 5): 1, (4, 5): 1})
    assert most_likely_route(net, stats, 0, 5) == [3, 4]


def test_dense_input_is_identity(grid5):
    corpus = gen_trajectories(grid5, GenConfig(n=5, m=5, count=30, seed=2))
    stats = build_transition_stats(corpus, grid5)
    for t in corpus:
        assert frequency_recover(t, grid5, stats).segments == t.segments


def test_unreachable_gap_left_open():
    net = line_network()
    stats = build_transition_stats([traj(0, [0, 1, 2])], net)
    missing = []
    out = frequency_recover(traj(4, [2, 0]), net, stats, unfilled=missing)
    assert out.segments == [2, 0]
    assert missing == [(4, 2, 0)]
    with pytest.raises(ValueError):
        frequency_recover(traj(4, []), net, stats)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_observed_segments_kept_in_order(seed):
    net = gen_grid_network(4, 4)
    corpus = gen_trajectories(net, GenConfig(n=4, m=4, count=40, seed=3))
    stats = build_transition_stats(corpus, net)
    t = corpus[seed % len(corpus)]
    s = sparsify(t, 2 / 3, seed)
    out = frequency_recover(s, net, stats).segments
    it = iter(out)
    assert all(any(x == y for y in it) for x in s.segments)
    assert net.is_valid_route(out)
