import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fork_network, node_route, oracle_shortest_length, traj
from trajrec.complexity import (
    CorpusCalibration,
    UnreachableError,
    calibrate,
    detour_score,
    entropy_score,
    score,
    sparse_route_length,
)
from trajrec.roadnet import build_transition_stats, build_view_graphs, candidate_pairs, transitions_from_counts
from trajrec.synthgen import GenConfig, gen_grid_network, gen_trajectories, sparsify


def test_shortest_path_has_unit_detour(grid3):
    t = traj(0, node_route(grid3, [0, 1, 2, 5, 8]))
    assert detour_score(t, grid3) == 1.0


def test_detour_route_ratio(grid3):
    # shortest 0->1 ... 5->8 is 400 m; this route repeats 5->4->5 and is 600 m
    route = node_route(grid3, [0, 1, 2, 5, 4, 5, 8])
    assert grid3.route_length(route) == 600.0
    assert oracle_shortest_length(grid3, route[0], route[-1]) == 400.0
    assert detour_score(traj(0, route), grid3) == pytest.approx(1.5, rel=1e-12)


def test_single_segment_detour(grid3):
    assert detour_score(traj(0, [4]), grid3) == 1.0


def test_unreachable_detour_raises():
    from conftest import line_network
    net = line_network()
    with pytest.raises(UnreachableError):
        detour_score(traj(0, [2, 0]), net)


def _fork_stats():
    net = fork_network()
    return net, build_transition_stats([traj(0, [0, 1]), traj(1, [0, 2])], net)


def test_entropy_zero_when_deterministic():
    from conftest import line_network
    net = line_network()
    stats = build_transition_stats([traj(0, [0, 1, 2])], net)
    assert entropy_score(traj(5, [0, 1]), stats) == 0.0


def test_entropy_single_fork_segment():
    _, stats = _fork_stats()
    assert entropy_score(traj(0, [0]), stats) == pytest.approx(math.log(2), rel=1e-12)


def test_entropy_average_over_segments():
    _, stats = _fork_stats()
    assert entropy_score(traj(0, [0, 1]), stats) == pytest.approx(math.log(2) / 2, rel=1e-12)
    assert entropy_score(traj(0, [0, 1]), stats) == pytest.approx(0.3466, abs=1e-4)


def test_entropy_order_free(grid5):
    corpus = gen_trajectories(grid5, GenConfig(n=5, m=5, count=100, seed=3))
    stats = build_transition_stats(corpus, grid5)
    rng = np.random.default_rng(0)
    for t in corpus[:20]:
        shuffled = list(rng.permutation(t.segments))
        assert entropy_score(traj(0, shuffled), stats) == pytest.approx(entropy_score(t, stats), rel=1e-12)


def test_ds_at_least_one_on_generated(grid5):
    corpus = gen_trajectories(grid5, GenConfig(n=5, m=5, count=200, p_detour=0.7, seed=8))
    for t in corpus:
        assert detour_score(t, grid5) >= 1.0
        assert grid5.route_length(t.segments) >= oracle_shortest_length(grid5, t.segments[0], t.segments[-1])


# ---------------------------------------------------------------- calibration & score

def _calib(**kw):
    base = dict(ds_min=1.0, ds_max=2.0, es_min=0.0, es_max=1.0, q25=0.2, q75=0.6, theta=0.6)
    base.update(kw)
    return CorpusCalibration(**base)


def test_default_weights():
    import inspect
    sig = inspect.signature(calibrate)
    assert sig.parameters["mu"].default == 0.5 and sig.parameters["nu"].default == 0.5


def test_identical_corpus_degenerates(grid5):
    t = traj(0, node_route(grid5, [0, 1, 2, 7]))
    corpus = [traj(i, t.segments) for i in range(10)]
    stats = build_transition_stats(corpus, grid5)
    calib = calibrate(corpus, grid5, stats)
    assert calib.q25 == calib.q75 == calib.theta == 0.0
    cs = {score(x, grid5, stats, calib).complexity for x in corpus}
    assert cs == {0.0}


def test_theta_is_q75_and_terciles_partition(grid5):
    corpus = gen_trajectories(grid5, GenConfig(n=5, m=5, count=1000, p_detour=0.5, seed=21))
    stats = build_transition_stats(corpus, grid5)
    calib = calibrate(corpus, grid5, stats)
    assert calib.theta == calib.q75
    assert calib.mu + calib.nu == 1.0
    profiles = [score(t, grid5, stats, calib) for t in corpus]
    c = np.array([p.complexity for p in profiles])
    # sort oracle for the quantile-based labels
    srt = np.sort(c)
    expected_high = int(np.sum(srt > np.quantile(srt, 0.75)))
    levels = [p.level for p in profiles]
    assert levels.count("High") == expected_high
    assert levels.count("Low") + levels.count("Mid") + levels.count("High") == 1000
    assert abs(levels.count("High") - 250) <= 1 + int(np.sum(c == calib.q75))
    assert abs(levels.count("Low") - 250) <= 1 + int(np.sum(c == calib.q25))


def test_exactly_quarter_high_with_distinct_values():
    rng = np.random.default_rng(0)
    c = rng.random(1000)
    q25, q75 = np.quantile(c, [0.25, 0.75])
    calib = _calib(q25=q25, q75=q75, theta=q75)
    levels = [calib.level(x) for x in c]
    assert levels.count("High") == 250
    assert levels.count("Low") == 250


def test_score_extremes_and_midpoint():
    net = gen_grid_network(3, 3)
    stats = transitions_from_counts(net, {})
    from trajrec.complexity import _combine
    calib = _calib()
    assert _combine(2.0, 1.0, calib)[2] == 1.0
    assert _combine(1.0, 0.0, calib)[2] == 0.0
    assert _combine(1.4, 0.6, calib)[2] == pytest.approx(0.5, abs=1e-15)
    # out-of-range values are clamped
    assert _combine(5.0, -1.0, calib)[:2] == (1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.0, 2.0), st.floats(0.0, 1.0))
def test_complexity_monotone(ds, es, bump):
    from trajrec.complexity import _combine
    calib = _calib()
    base = _combine(ds, es, calib)[2]
    assert _combine(ds + bump, es, calib)[2] >= base
    assert _combine(ds, es + bump, calib)[2] >= base
    assert 0.0 <= base <= calib.mu + calib.nu


def test_constant_feature_normalizes_to_zero():
    from trajrec.complexity import _combine
    calib = _calib(ds_min=1.0, ds_max=1.0)
    assert _combine(1.7, 0.5, calib)[0] == 0.0


def test_loop_trajectory_flagged(grid3):
    route = node_route(grid3, [0, 1, 4, 3, 0, 1])
    stats = build_transition_stats([traj(0, route)], grid3)
    prof = score(traj(0, route), grid3, stats, _calib())
    assert prof.loop
    assert prof.ds == pytest.approx(5.0)


def test_sparse_route_length_on_dense_input_equals_true_length(grid5):
    corpus = gen_trajectories(grid5, GenConfig(n=5, m=5, count=50, p_detour=0.0, seed=1))
    stats = build_transition_stats(corpus, grid5)
    jd, _ = build_view_graphs(grid5, stats, pairs=candidate_pairs(grid5, corpus))
    for t in corpus[:10]:
        # consecutive dense pairs have a single route, so stitching is exact
        assert sparse_route_length(t, grid5, jd) == pytest.approx(grid5.route_length(t.segments))
        s = sparsify(t, 2 / 3, 0)
        assert sparse_route_length(s, grid5, jd) >= oracle_shortest_length(grid5, s.segments[0], s.segments[-1]) - 1e-9


def test_calibration_roundtrip(tmp_path):
    calib = _calib(q25=0.123456789012345)
    calib.save(tmp_path / "c.json")
    assert CorpusCalibration.load(tmp_path / "c.json") == calib
