"""Success rate, contextual formation integrity (CFI) and oscillation measures."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from formnav.team import pair_indices
from formnav.world import Scenario, local_width

DELTAS = (0.5, 0.3, 0.1, 0.03)


@dataclass(frozen=True)
class CfiConfig:
    tau: float = 1.0
    delta: float = 0.5
    beta: float = 0.5
    robot_width: float = 0.3

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class EpisodeMetrics:
    sr: float
    cfi_by_delta: dict[float, float]
    oscillation: float
    steps: int
    cfi_fallback: bool = False
    extra: dict = field(default_factory=dict)


def success_rate(final_positions, goals, goal_tol: float, any_collision: bool) -> float:
    """Percentage of robots within ``goal_tol`` of their goal; a collision zeroes the episode."""
    p = np.asarray(final_positions, dtype=np.float64)
    g = np.asarray(goals, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError("positions and goals must align")
    if any_collision:
        return 0.0
    hits = int(np.sum(np.linalg.norm(p - g, axis=1) <= goal_tol))
    return 100.0 * hits / len(p)


def formation_width(positions, axis=(1.0, 0.0), robot_width: float = 0.3) -> float:
    """Extent of the robot centres across the travel axis plus one robot footprint."""
    ax = np.asarray(axis, dtype=np.float64)
    perp = np.array([-ax[1], ax[0]])
    s = np.asarray(positions, dtype=np.float64).reshape(-1, 2) @ perp
    return float(s.max() - s.min()) + robot_width


def shape_integrity(positions, desired) -> float:
    """1 minus the mean absolute pairwise-distance error relative to the mean desired distance, floored at 0."""
    p = np.asarray(positions, dtype=np.float64)
    desired = np.asarray(desired, dtype=np.float64)
    iu, ju = pair_indices(len(p))
    actual = np.linalg.norm(p[iu] - p[ju], axis=1)
    want = desired[iu, ju]
    return float(max(0.0, 1.0 - np.mean(np.abs(actual - want)) / np.mean(want)))


def cfi(W: float, cfg: CfiConfig, epsilon: float) -> float:
    gap = min(abs(W - (cfg.tau + cfg.delta)), abs(W - (cfg.tau - cfg.delta)))
    term1 = min(cfg.beta, max(0.0, cfg.beta * (1.0 - gap / cfg.delta)))
    return term1 + (1.0 - cfg.beta) * epsilon


def cfi_configs(deltas=DELTAS, beta: float = 0.5, robot_width: float = 0.3) -> list[CfiConfig]:
    """Per-delta configs; tau is a placeholder replaced per step by :func:`episode_cfi`."""
    return [CfiConfig(tau=1.0, delta=d, beta=beta, robot_width=robot_width) for d in deltas]


def episode_cfi(positions, scenario: Scenario, desired, cfg_list, *, return_flag: bool = False):
    """Mean CFI per delta over the steps whose team centroid lies in the narrow span.

    ``positions`` has shape (T, n, 2).  The safety threshold at each step is
    the local corridor width minus two robot widths.  When no step reaches
    the narrow span every step is used and the fallback flag is raised.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 3 or len(pos) == 0:
        raise ValueError("trajectory positions must be a non-empty (T, n, 2) array")
    ax = np.asarray(scenario.axis, dtype=np.float64)
    s = pos.mean(axis=1) @ ax
    s0, s1 = scenario.narrow_span
    steps = np.nonzero((s >= s0) & (s <= s1))[0]
    fallback = len(steps) == 0
    if fallback:
        warnings.warn("team never entered the narrow span; CFI averaged over all steps", stacklevel=2)
        steps = np.arange(len(pos))
    out = {}
    for cfg in cfg_list:
        vals = []
        for t in steps:
            tau = local_width(scenario, float(s[t])) - 2 * cfg.robot_width
            W = formation_width(pos[t], scenario.axis, cfg.robot_width)
            eps = shape_integrity(pos[t], desired)
            step_cfg = CfiConfig(tau=max(tau, 1e-9), delta=cfg.delta, beta=cfg.beta, robot_width=cfg.robot_width)
            vals.append(cfi(W, step_cfg, eps))
        out[cfg.delta] = float(np.mean(vals))
    return (out, fallback) if return_flag else out


def oscillation_index(velocities, dt: float) -> float:
    """Mean over robots and steps of |q_t - q_{t-1}| / dt."""
    q = np.asarray(velocities, dtype=np.float64)
    if len(q) < 2:
        raise ValueError("oscillation needs at least two steps")
    dq = np.diff(q, axis=0)
    return float(np.mean(np.linalg.norm(dq, axis=-1)) / dt)
