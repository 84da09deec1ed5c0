import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from formnav import metrics
from formnav.metrics import CfiConfig, cfi, episode_cfi, formation_width, oscillation_index, shape_integrity, success_rate
from formnav.team import desired_distances, formation_template
from formnav.world import build_corridor


def test_success_rate_examples():
    g = np.zeros((5, 2))
    assert success_rate(g, g, 0.2, False) == 100.0
    p = g.copy()
    p[3] = [1.0, 0.0]
    assert success_rate(p, g, 0.2, False) == 80.0
    assert success_rate(g, g, 0.2, True) == 0.0


@given(arrays(np.float64, (7, 2), elements=st.floats(-1, 1)), st.booleans())
def test_success_rate_counts(p, collided):
    sr = success_rate(p, np.zeros((7, 2)), 0.5, collided)
    assert 0 <= sr <= 100
    assert math.isclose(sr * 7 / 100, round(sr * 7 / 100), abs_tol=1e-9)


def test_formation_width_examples():
    assert formation_width([(3.0, 4.0)]) == 0.3
    circle = formation_template("circle", 8, 1.0)
    assert formation_width(circle) == pytest.approx(2.3)
    row = [(x, 0.5) for x in range(5)]
    assert formation_width(row) == 0.3


def test_shape_integrity_examples():
    p = np.array(formation_template("wedge", 5, 1.0))
    d = desired_distances(p)
    assert shape_integrity(p, d) == 1.0
    assert shape_integrity(2 * p, d) == pytest.approx(0.0, abs=1e-12)
    assert shape_integrity(100 * p, d) == 0.0


@given(arrays(np.float64, (5, 2), elements=st.floats(-3, 3)), st.floats(0, 2 * math.pi),
       st.floats(-10, 10), st.floats(-10, 10))
def test_shape_integrity_rigid_invariance(p, theta, tx, ty):
    d = desired_distances(np.array(formation_template("circle", 5, 1.0)))
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    moved = p @ R.T + [tx, ty]
    assert shape_integrity(moved, d) == pytest.approx(shape_integrity(p, d), abs=1e-9)


# worked examples: beta=0.5, tau=2.0, delta=0.3
CFI_EXAMPLES = [(2.3, 1.0, 1.0), (2.0, 1.0, 0.5), (3.0, 0.8, 0.4)]


@pytest.mark.parametrize("W,eps,want", CFI_EXAMPLES)
def test_cfi_worked_examples(W, eps, want):
    assert abs(cfi(W, CfiConfig(tau=2.0, delta=0.3, beta=0.5), eps) - want) <= 1e-9


def test_cfi_config_validation():
    for kwargs in (dict(delta=0.0), dict(beta=1.5), dict(tau=0.0)):
        with pytest.raises(ValueError):
            CfiConfig(**kwargs)


@given(st.floats(0, 20), st.floats(0.01, 10), st.floats(0.001, 2), st.floats(0, 1), st.floats(0, 1))
def test_cfi_bounded(W, tau, delta, beta, eps):
    v = cfi(W, CfiConfig(tau=tau, delta=delta, beta=beta), eps)
    assert 0.0 <= v <= 1.0


@given(st.floats(0, 5), st.floats(0.5, 10), st.floats(0.001, 2), st.floats(0, 1), st.floats(0, 1))
def test_cfi_symmetric_about_tau(x, tau, delta, beta, eps):
    cfg = CfiConfig(tau=tau, delta=delta, beta=beta)
    assert abs(cfi(tau + x, cfg, eps) - cfi(tau - x, cfg, eps)) <= 1e-12


def parked(scenario, x, W, steps=6, n=5):
    """Team parked at axis coordinate x with perpendicular centre extent W - robot_width."""
    ys = np.linspace(-(W - 0.3) / 2, (W - 0.3) / 2, n)
    frame = np.stack([np.full(n, x), ys], axis=1)
    return np.repeat(frame[None], steps, axis=0), desired_distances(frame)


def test_episode_cfi_perfect_team():
    sc = build_corridor(5, "line", 3.0, 3.0, 20.0, 0.0)
    tau = 3.0 - 0.6
    pos, d = parked(sc, 5.0, tau + 0.3)
    got = episode_cfi(pos, sc, d, [CfiConfig(delta=0.3)])
    assert got[0.3] == pytest.approx(1.0, abs=1e-12)


def test_episode_cfi_only_narrow_span():
    sc = build_corridor(5, "line", 6.0, 2.0, 20.0, 4.0)
    inside, d = parked(sc, 13.0, 2.0 - 0.6 + 0.5)
    outside, _ = parked(sc, 2.0, 0.3, steps=10)
    out, flag = episode_cfi(np.concatenate([outside, inside]), sc, d, metrics.cfi_configs(), return_flag=True)
    assert not flag
    assert list(out) == list(metrics.DELTAS)
    assert out[0.5] == pytest.approx(1.0, abs=1e-12)


def test_episode_cfi_fallback_warns():
    sc = build_corridor(5, "line", 6.0, 2.0, 20.0, 4.0)
    pos, d = parked(sc, 2.0, 2.0)
    with pytest.warns(UserWarning):
        _, flag = episode_cfi(pos, sc, d, metrics.cfi_configs(), return_flag=True)
    assert flag
    with pytest.raises(ValueError):
        episode_cfi(np.zeros((0, 5, 2)), sc, d, metrics.cfi_configs())


def test_oscillation_examples():
    q = np.tile([[0.3, 0.4]], (10, 3, 1))
    assert oscillation_index(q, 0.1) == 0.0
    v = np.array([0.6, 0.8])
    alt = np.array([[v], [-v]] * 5)
    assert oscillation_index(alt, 0.1) == pytest.approx(2 * 1.0 / 0.1)
    assert oscillation_index(np.array([[[0.0, 0.0]], [[1.0, 0.0]]]), 0.1) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        oscillation_index(np.zeros((1, 2, 2)), 0.1)
