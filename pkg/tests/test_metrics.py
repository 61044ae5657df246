import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajrec.metrics import (
    EVAL_COLUMNS,
    EvalRow,
    aggregate_by_level,
    merge_distance,
    owd,
    point_sequence,
    prf1,
    route_length,
    shortest_merge_length,
    write_eval_csv,
)
from trajrec.synthgen import gen_grid_network


def brute_merge_length(a, b):
    """Shortest order-preserving interleaving by enumerating every merge."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n, m = len(a), len(b)
    best = np.inf
    for pos in itertools.combinations(range(n + m), n):
        chosen = set(pos)
        seq, i, j = [], 0, 0
        for k in range(n + m):
            if k in chosen:
                seq.append(a[i])
                i += 1
            else:
                seq.append(b[j])
                j += 1
        total = 0.0
        for p, q in zip(seq[:-1], seq[1:]):
            total = total + float(np.hypot(p[0] - q[0], p[1] - q[1]))
        best = min(best, total)
    return best


def test_prf1_examples():
    assert prf1([1, 2, 3], [3, 2, 1]) == (1.0, 1.0, 1.0)
    p, r, f = prf1([2, 3, 5], [1, 2, 3, 4])
    assert (p, r) == (2 / 3, 1 / 2)
    assert f == pytest.approx(4 / 7, abs=1e-15)
    assert prf1([7, 8], [1, 2]) == (0.0, 0.0, 0.0)
    assert prf1([], [1]) == (0.0, 0.0, 0.0)
    assert prf1([1, 1, 1, 2], [1, 2]) == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        prf1([1], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 12), max_size=15), st.lists(st.integers(0, 12), min_size=1, max_size=15))
def test_prf1_bounds(pred, truth):
    p, r, f = prf1(pred, truth)
    assert 0 <= p <= 1 and 0 <= r <= 1 and 0 <= f <= 1
    if p + r > 0:
        assert f == pytest.approx(2 * p * r / (p + r))
    assert f <= max(p, r) + 1e-15


def test_owd_examples():
    a = [(0, 0), (100, 0)]
    b = [(0, 50), (100, 50)]
    assert owd(a, a) == 0.0
    assert owd(a, b) == 50.0
    assert owd(a, b, factor=1.0) == 100.0
    c = [(0, 0), (30, 40), (200, 0)]
    assert owd(a, c) == owd(c, a)


points = st.lists(st.tuples(st.floats(-500, 500), st.floats(-500, 500)), min_size=1, max_size=6)


@settings(max_examples=100, deadline=None)
@given(points, points)
def test_owd_symmetric_nonnegative(a, b):
    assert owd(a, b) >= 0
    assert owd(a, b) == pytest.approx(owd(b, a), abs=1e-12)
    assert owd(a, a) == 0.0


def test_merge_distance_examples():
    a = [(0, 0), (100, 0)]
    b = [(0, 50), (100, 50)]
    assert shortest_merge_length(a, b) == 200.0
    assert merge_distance(a, b) == 1.0
    assert merge_distance(a, a) == 0.0
    assert merge_distance([(3, 4)], [(3, 4)]) == 0.0
    with pytest.raises(ValueError):
        merge_distance([(0, 0)], [(1, 1)])


def test_merge_dp_equals_enumeration_exhaustively():
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        for m in range(1, 7):
            for _ in range(3):
                a = rng.integers(0, 5, size=(n, 2)) * 100.0
                b = rng.integers(0, 5, size=(m, 2)) * 100.0 + rng.normal(size=(m, 2))
                assert shortest_merge_length(a, b) == brute_merge_length(a, b)


@settings(max_examples=60, deadline=None)
@given(points, points)
def test_merge_distance_nonnegative(a, b):
    if route_length(np.array(a)) + route_length(np.array(b)) == 0:
        return
    assert merge_distance(a, b) >= -1e-12


def test_point_sequence_collapses_shared_nodes():
    net = gen_grid_network(2, 3, 100.0)
    # node route 0 -> 1 -> 2 along the bottom row
    s01 = int(np.flatnonzero((net.from_node == 0) & (net.to_node == 1))[0])
    s12 = int(np.flatnonzero((net.from_node == 1) & (net.to_node == 2))[0])
    np.testing.assert_array_equal(point_sequence(net, [s01, s12]), [[0, 0], [100, 0], [200, 0]])
    fine = point_sequence(net, [s01], sample_step=25.0)
    np.testing.assert_array_equal(fine[:, 0], [0, 25, 50, 75, 100])


def test_eval_csv_schema(tmp_path):
    rows = [EvalRow(3, 1.0, 0.5, 2 / 3, 10.0, 0.1, 0.7, "High"), EvalRow(4, 0.0, 0.0, 0.0, 5.0, 0.2, 0.1, "Low")]
    write_eval_csv(rows, tmp_path / "e.csv")
    header = (tmp_path / "e.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == EVAL_COLUMNS == ("traj_id", "p", "r", "f1", "owd", "md", "complexity", "level")
    agg = {a["level"]: a for a in aggregate_by_level(rows)}
    assert agg["High"]["f1"] == 2 / 3 and agg["All"]["n"] == 2 and "Mid" not in agg
