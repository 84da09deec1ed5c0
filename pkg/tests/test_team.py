import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from formnav.team import (
    FormationSpec,
    TeamGraph,
    adaptation_reward,
    build_radius_graph,
    desired_distances,
    formation_template,
)
from formnav.world import ROBOT_RADIUS


def brute_reward(p, q, desired, alpha):
    total = 0.0
    for i, j in itertools.combinations(range(len(p)), 2):
        dist = math.hypot(p[i][0] - p[j][0], p[i][1] - p[j][1])
        dq = math.hypot(q[i][0] - q[j][0], q[i][1] - q[j][1])
        total += -alpha * abs(desired[i][j] - dist) - (1 - alpha) * dq
    return total


def test_template_examples():
    assert formation_template("line", 3, 1.0) == [(0.0, -1.0), (0.0, 0.0), (0.0, 1.0)]
    assert formation_template("circle", 4, 1.0) == [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    raw = np.array([(0, 0), (-1, 1), (-1, -1), (-2, 2), (-2, -2)], dtype=float)
    want = raw - np.array([-1.2, 0.0])
    assert np.allclose(formation_template("wedge", 5, 1.0), want, atol=1e-12)


@pytest.mark.parametrize("kind,n,scale", [("line", 1, 1.0), ("circle", 4, 0.0), ("wedge", 4, 1.0), ("star", 3, 1.0)])
def test_template_rejections(kind, n, scale):
    with pytest.raises(ValueError):
        formation_template(kind, n, scale)


@pytest.mark.parametrize("kind", ["line", "circle", "wedge"])
@pytest.mark.parametrize("n", [3, 5, 7, 9])
def test_template_centred_and_spread(kind, n):
    spec = FormationSpec.make(kind, n, 1.0)
    assert np.allclose(spec.offsets.mean(axis=0), 0.0, atol=1e-12)
    d = spec.desired
    assert np.allclose(d, d.T)
    assert np.all(np.diag(d) == 0)
    assert d[~np.eye(n, dtype=bool)].min() > 2 * ROBOT_RADIUS


def test_desired_examples():
    d = desired_distances(formation_template("line", 3, 1.0))
    assert d[0, 1] == d[1, 2] == 1.0
    assert d[0, 2] == 2.0
    w = desired_distances(formation_template("wedge", 5, 1.0))
    assert w[0, 1] == pytest.approx(math.sqrt(2), abs=1e-12)


def test_radius_graph_examples():
    g = build_radius_graph([(0, 0), (1, 0), (3, 0)], 1.5)
    assert g.edges == ((0, 1),)
    full = build_radius_graph([(0, 0), (1, 0), (3, 0), (1, 2)], 100.0)
    assert len(full.edges) == 6
    assert build_radius_graph([(0, 0), (1, 0), (3, 0)], 0.5).edges == ()
    with pytest.raises(ValueError):
        build_radius_graph([(0, 0), (1, 0)], 0.0)


def test_radius_inclusive():
    assert build_radius_graph([(0, 0), (1.5, 0)], 1.5).edges == ((0, 1),)


positions = st.integers(2, 9).flatmap(lambda n: arrays(np.float64, (n, 2), elements=st.floats(-5, 5)))


@given(positions, st.floats(0.1, 8))
def test_radius_graph_matches_brute_force(p, radius):
    g = build_radius_graph(p, radius)
    want = tuple((i, j) for i, j in itertools.combinations(range(len(p)), 2)
                 if (p[i, 0] - p[j, 0]) ** 2 + (p[i, 1] - p[j, 1]) ** 2 <= radius * radius)
    assert g.edges == want
    assert all(i != j for i, j in g.edges)


def test_directed_sorted_by_destination():
    g = TeamGraph(3, ((0, 1), (0, 2), (1, 2)))
    src, dst = g.directed()
    assert list(zip(dst, src)) == sorted(zip(dst, src))
    assert len(src) == 6


def test_reward_examples():
    desired = desired_distances(formation_template("circle", 5, 1.0))
    p = np.array(formation_template("circle", 5, 1.0))
    q = np.tile([0.3, -0.2], (5, 1))
    assert adaptation_reward(p, q, desired, 0.5) == 0.0
    d2 = np.array([[0, 2.0], [2.0, 0]])
    assert adaptation_reward([(0, 0), (1.5, 0)], np.zeros((2, 2)), d2, 1.0) == pytest.approx(-0.5)
    assert adaptation_reward([(0, 0), (2, 0)], [(1, 0), (0, 0)], d2, 0.5) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        adaptation_reward(p, q, desired, 1.5)


team = st.integers(2, 9).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, 2), elements=st.floats(-5, 5)),
    arrays(np.float64, (n, 2), elements=st.floats(-1, 1)),
    arrays(np.float64, (n, 2), elements=st.floats(-5, 5)),
))


@given(team, st.floats(0, 1))
def test_reward_matches_brute_force(data, alpha):
    p, q, offs = data
    desired = desired_distances(offs)
    got = adaptation_reward(p, q, desired, alpha)
    want = brute_reward(p.tolist(), q.tolist(), desired.tolist(), alpha)
    assert got <= 0.0
    assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


@given(team, st.floats(0, 1), st.floats(-3, 3), st.floats(-3, 3), st.randoms(use_true_random=False))
def test_reward_invariances(data, alpha, tx, ty, rnd):
    p, q, offs = data
    desired = desired_distances(offs)
    base = adaptation_reward(p, q, desired, alpha)
    shift = np.array([tx, ty])
    assert adaptation_reward(p + shift, q, desired, alpha) == pytest.approx(base, abs=1e-9)
    assert adaptation_reward(p, q + shift, desired, alpha) == pytest.approx(base, abs=1e-9)
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    permuted = desired[np.ix_(perm, perm)]
    assert adaptation_reward(p[perm], q[perm], permuted, alpha) == pytest.approx(base, abs=1e-9)


@given(st.sampled_from(["line", "circle", "wedge"]), st.sampled_from([3, 5, 7]), st.floats(0, 1))
def test_reward_zero_only_at_formation(kind, n, alpha):
    p = np.array(formation_template(kind, n, 1.0))
    desired = desired_distances(p)
    assert adaptation_reward(p, np.zeros_like(p), desired, alpha) == 0.0
    moved = p.copy()
    moved[0] += [0.3, 0.0]
    if alpha > 1e-6:
        assert adaptation_reward(moved, np.zeros_like(p), desired, alpha) < 0.0
