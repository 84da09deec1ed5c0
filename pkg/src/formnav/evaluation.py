"""Deterministic episode rollouts and per-episode metrics for any team controller."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from formnav import metrics, policy
from formnav.baselines import LeaderFollowerGains, leader_follower_step
from formnav.env import DT, EnvState, RewardConfig, Trajectory, TrajectoryRecorder, reset, step
from formnav.team import formation_template, radius_edges
from formnav.world import Scenario

Controller = Callable[[EnvState, np.ndarray], np.ndarray]


def directed_edges(positions: np.ndarray, radius: float, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Both directions of every radius-graph edge, sorted by (dst, src)."""
    e = radius_edges(positions, radius)
    if len(e) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((src, dst))
    return src[order] + offset, dst[order] + offset


def graph_radius(scenario: Scenario, factor: float = 3.0) -> float:
    return factor * scenario.formation_scale


def policy_controller(params, radius_factor: float = 3.0) -> Controller:
    def act(state: EnvState, obs: np.ndarray) -> np.ndarray:
        edges = directed_edges(state.p, graph_radius(state.scenario, radius_factor))
        return policy.act_deterministic(obs, edges, params)
    return act


def leader_follower_controller(scenario: Scenario, gains: LeaderFollowerGains = LeaderFollowerGains(),
                               goal_tol: float = 0.2) -> Controller:
    offsets = np.array(formation_template(scenario.formation, scenario.n_robots, scenario.formation_scale))

    def act(state: EnvState, obs: np.ndarray) -> np.ndarray:
        return leader_follower_step(state, offsets, gains, scenario, goal_tol=goal_tol, v_max=state.v_max)
    return act


@dataclass
class EpisodeResult:
    trajectory: Trajectory
    metrics: metrics.EpisodeMetrics
    episode_return: float
    collided: bool


def run_episode(scenario: Scenario, controller: Controller, seed: int,
                reward_config: RewardConfig = RewardConfig(), dt: float = DT,
                deltas=metrics.DELTAS, beta: float = 0.5) -> EpisodeResult:
    state, obs = reset(scenario, seed)
    rec = TrajectoryRecorder(state, dt)
    total = 0.0
    while not state.episode_done:
        res = step(state, controller(state, obs), reward_config, dt)
        rec.record(res)
        total += float(res.rewards[res.info["active"]].sum()) / state.n
        state, obs = res.state, res.observations
    traj = rec.trajectory()
    robot_width = 2 * scenario.robot_radius
    cfgs = metrics.cfi_configs(deltas, beta=beta, robot_width=robot_width)
    cfi, fallback = metrics.episode_cfi(traj.positions, scenario, state.desired, cfgs, return_flag=True)
    em = metrics.EpisodeMetrics(
        sr=metrics.success_rate(state.p, state.g, reward_config.goal_tol, state.collided),
        cfi_by_delta=cfi,
        oscillation=metrics.oscillation_index(traj.velocities, dt),
        steps=traj.steps,
        cfi_fallback=fallback,
    )
    return EpisodeResult(traj, em, total, state.collided)


def evaluate(scenario: Scenario, controller: Controller, seeds, reward_config: RewardConfig = RewardConfig(),
             dt: float = DT) -> list[EpisodeResult]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [run_episode(scenario, controller, s, reward_config, dt) for s in seeds]


def summarize(results: list[EpisodeResult]) -> dict:
    cfi = {}
    for d in results[0].metrics.cfi_by_delta:
        cfi[d] = float(np.mean([r.metrics.cfi_by_delta[d] for r in results]))
    return {
        "sr_mean": float(np.mean([r.metrics.sr for r in results])),
        "cfi": cfi,
        "oscillation_mean": float(np.mean([r.metrics.oscillation for r in results])),
        "return_mean": float(np.mean([r.episode_return for r in results])),
    }
