import numpy as np

from formnav import policy
from formnav.env import Trajectory
from formnav.evaluation import directed_edges, evaluate, policy_controller, run_episode, summarize
from formnav.team import build_radius_graph
from formnav.world import build_corridor


def test_directed_edges_match_radius_graph():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(7, 2)) * 2
    src, dst = directed_edges(p, 1.5)
    g = build_radius_graph(p, 1.5)
    gs, gd = g.directed()
    assert np.array_equal(src, gs) and np.array_equal(dst, gd)


def test_run_episode_records_everything():
    sc = build_corridor(3, "line", 6.0, 2.0, 20.0, 4.0, max_steps=30)
    res = run_episode(sc, policy_controller(policy.init_params(0)), seed=4)
    traj = res.trajectory
    assert traj.positions.shape[1] == 3
    assert traj.steps == res.metrics.steps <= 30
    assert set(res.metrics.cfi_by_delta) == {0.5, 0.3, 0.1, 0.03}
    assert all(0 <= v <= 1 for v in res.metrics.cfi_by_delta.values())
    assert Trajectory.from_csv(traj.to_csv()).to_csv() == traj.to_csv()


def test_evaluation_is_reproducible():
    sc = build_corridor(5, "circle", 6.0, 2.0, 20.0, 4.0, max_steps=40)
    ctrl = policy_controller(policy.init_params(1))
    a = evaluate(sc, ctrl, [0, 1, 2])
    b = evaluate(sc, ctrl, [0, 1, 2])
    assert [r.trajectory.to_csv() for r in a] == [r.trajectory.to_csv() for r in b]
    s = summarize(a)
    assert set(s) == {"sr_mean", "cfi", "oscillation_mean", "return_mean"}
