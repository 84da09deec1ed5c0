"""Comparison methods: the no-spring-damper ablation and a potential-field leader-follower."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from formnav.env import V_MAX, EnvState, RewardConfig, clamp_speed
from formnav.world import Scenario, closest_points


@dataclass(frozen=True)
class LeaderFollowerGains:
    k_goal: float = 1.0
    k_rep: float = 2.0
    k_slot: float = 1.5
    k_damp: float = 0.5
    rep_range: float = 0.6

    def __post_init__(self):
        if min(self.k_goal, self.k_rep, self.k_slot, self.k_damp, self.rep_range) <= 0:
            raise ValueError("leader-follower gains must be positive")


def bl_config(base: RewardConfig | None = None) -> RewardConfig:
    """The AFOR reward with the spring-damper term switched off."""
    return replace(base or RewardConfig(), w_adapt=0.0)


def wall_repulsion(p: np.ndarray, scenario: Scenario, gains: LeaderFollowerGains) -> np.ndarray:
    """Sum over walls of k_rep * max(0, rep_range - d) along the away-from-wall direction."""
    a, b = scenario.wall_arrays()
    if len(a) == 0:
        return np.zeros_like(p)
    c = closest_points(p, a, b)
    away = p[:, None, :] - c
    d = np.linalg.norm(away, axis=-1)
    unit = away / np.maximum(d, 1e-12)[..., None]
    mag = gains.k_rep * np.maximum(0.0, gains.rep_range - d)
    return np.einsum("nm,nmk->nk", mag, unit)


def leader_follower_step(state: EnvState, offsets, gains: LeaderFollowerGains = LeaderFollowerGains(),
                         scenario: Scenario | None = None, goal_tol: float = 0.2,
                         v_max: float = V_MAX) -> np.ndarray:
    """Velocity commands with robot 0 leading and the rest tracking rigid slots.

    ``offsets`` are the formation template positions; follower ``i`` tracks
    ``p_0 + offsets[i] - offsets[0]``.
    """
    scenario = scenario or state.scenario
    p, q = state.p, state.q
    off = np.asarray(offsets, dtype=np.float64)
    acts = np.zeros_like(p)

    to_goal = state.g[0] - p[0]
    dist = np.linalg.norm(to_goal)
    if dist > goal_tol:
        acts[0] = gains.k_goal * to_goal / dist

    slots = p[0] + (off - off[0])
    acts[1:] = gains.k_slot * (slots[1:] - p[1:]) - gains.k_damp * (q[1:] - q[0])
    acts += wall_repulsion(p, scenario, gains)
    return clamp_speed(acts, v_max)
