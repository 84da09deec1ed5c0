"""Episode dynamics for a holonomic robot team in a corridor scenario."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from formnav.team import FormationSpec, adaptation_reward, build_radius_graph, desired_distances
from formnav.world import D_CAP, ROBOT_RADIUS, Scenario, check_collisions, nearest_obstacle_distances

DT = 0.1
V_MAX = 1.0
JITTER = 0.05
POS_SCALE = 10.0
MAX_RESET_TRIES = 100

TRAJECTORY_HEADER = ["t", "robot", "px", "py", "vx", "vy", "d_obs", "reward", "done", "collision"]


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.5
    w_adapt: float = 0.1
    w_progress: float = 2.0
    w_obstacle: float = 0.5
    r_goal_bonus: float = 10.0
    r_collision: float = -10.0
    goal_tol: float = 0.2
    obstacle_margin: float = 0.45

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.goal_tol <= 0:
            raise ValueError("goal_tol must be positive")
        if self.obstacle_margin <= ROBOT_RADIUS:
            raise ValueError(f"obstacle_margin must exceed the robot radius {ROBOT_RADIUS}")


@dataclass
class RobotState:
    p: np.ndarray
    q: np.ndarray
    g: np.ndarray
    d: float


@dataclass
class EnvState:
    scenario: Scenario
    p: np.ndarray
    q: np.ndarray
    g: np.ndarray
    d: np.ndarray
    done: np.ndarray
    desired: np.ndarray
    t: int = 0
    collided: bool = False
    v_max: float = V_MAX
    absolute_goal_obs: bool = False

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def episode_done(self) -> bool:
        return bool(self.collided or self.done.all() or self.t >= self.scenario.max_steps)

    def robot(self, i: int) -> RobotState:
        return RobotState(self.p[i].copy(), self.q[i].copy(), self.g[i].copy(), float(self.d[i]))


@dataclass
class StepResult:
    state: EnvState
    observations: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    episode_done: bool
    info: dict = field(default_factory=dict)


def observe(state: EnvState) -> np.ndarray:
    """Per-robot features (p, q, goal offset, d), each scaled to order one."""
    goal = state.g if state.absolute_goal_obs else state.g - state.p
    return np.concatenate([
        state.p / POS_SCALE,
        state.q / state.v_max,
        goal / POS_SCALE,
        (state.d / D_CAP)[:, None],
    ], axis=1)


def scenario_desired(scenario: Scenario) -> np.ndarray:
    """Desired pairwise distances from the scenario's formation template.

    Falls back to the goal layout when the template cannot be built (e.g. a
    hand-written scenario with an even-sized wedge).
    """
    try:
        return FormationSpec.make(scenario.formation, scenario.n_robots, scenario.formation_scale).desired
    except ValueError:
        return desired_distances(scenario.goals)


def reset(scenario: Scenario, seed: int | None = None, *, jitter: float = JITTER,
          v_max: float = V_MAX, absolute_goal_obs: bool = False) -> tuple[EnvState, np.ndarray]:
    rng = np.random.default_rng(seed)
    n = scenario.n_robots
    for _ in range(MAX_RESET_TRIES):
        p = scenario.starts + rng.uniform(-jitter, jitter, size=(n, 2)) if jitter > 0 else scenario.starts.copy()
        if not check_collisions(p, scenario).any():
            break
    else:
        raise EnvError(f"no collision-free start after {MAX_RESET_TRIES} jitter draws")
    state = EnvState(
        scenario=scenario,
        p=p,
        q=np.zeros((n, 2)),
        g=scenario.goals.copy(),
        d=nearest_obstacle_distances(p, scenario),
        done=np.zeros(n, dtype=bool),
        desired=scenario_desired(scenario),
        v_max=v_max,
        absolute_goal_obs=absolute_goal_obs,
    )
    return state, observe(state)


def clamp_speed(actions: np.ndarray, v_max: float) -> np.ndarray:
    speed = np.sqrt(np.einsum("ij,ij->i", actions, actions))
    factor = np.where(speed > v_max, v_max / np.maximum(speed, 1e-300), 1.0)
    return actions * factor[:, None]


def compose_reward(prev: EnvState, new: EnvState, desired: np.ndarray, cfg: RewardConfig,
                   reached_now=None, collided_now=None) -> np.ndarray:
    """Per-robot reward: shared spring-damper term plus progress, wall hinge and event terms."""
    n = new.n
    reached_now = np.zeros(n, dtype=bool) if reached_now is None else reached_now
    collided_now = np.zeros(n, dtype=bool) if collided_now is None else collided_now
    r = np.zeros(n)
    if cfg.w_adapt != 0.0:
        r += cfg.w_adapt * adaptation_reward(new.p, new.q, desired, cfg.alpha)
    progress = np.linalg.norm(prev.p - prev.g, axis=1) - np.linalg.norm(new.p - new.g, axis=1)
    r += cfg.w_progress * progress
    r += cfg.w_obstacle * np.minimum(0.0, new.d - cfg.obstacle_margin)
    r += cfg.r_goal_bonus * reached_now
    r += cfg.r_collision * collided_now
    return r


def step(state: EnvState, actions, reward_config: RewardConfig = RewardConfig(),
         dt: float = DT) -> StepResult:
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
    if a.shape[0] != state.n:
        raise EnvError(f"expected {state.n} actions, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise EnvError("non-finite action")
    if state.episode_done:
        raise EnvError("step called on a finished episode")

    active = ~state.done
    v = clamp_speed(a, state.v_max) * active[:, None]
    p = state.p + v * dt
    scenario = state.scenario
    d = nearest_obstacle_distances(p, scenario)
    collisions = check_collisions(p, scenario, active, wall_distance=d)
    reached = active & (np.linalg.norm(p - state.g, axis=1) <= reward_config.goal_tol)
    new = replace(state, p=p, q=v, d=d, done=state.done | reached, t=state.t + 1,
                  collided=bool(collisions.any()))
    rewards = compose_reward(state, new, state.desired, reward_config, reached, collisions)
    episode_done = new.episode_done
    dones = new.done | episode_done
    info = {
        "collisions": collisions,
        "reached": reached,
        "active": active,
        "truncated": episode_done and not new.collided and not new.done.all(),
    }
    return StepResult(new, observe(new), rewards, dones, episode_done, info)


def team_graph(state: EnvState, radius: float):
    return build_radius_graph(state.p, radius)


@dataclass
class Trajectory:
    """Recorded episode; index 0 holds the reset state."""

    positions: np.ndarray
    velocities: np.ndarray
    d_obs: np.ndarray
    rewards: np.ndarray
    done: np.ndarray
    collision: np.ndarray
    dt: float = DT

    @property
    def steps(self) -> int:
        return len(self.positions) - 1

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for t in range(len(self.positions)):
            for i in range(self.n):
                w.writerow([
                    repr(round(t * self.dt, 10)), i,
                    repr(float(self.positions[t, i, 0])), repr(float(self.positions[t, i, 1])),
                    repr(float(self.velocities[t, i, 0])), repr(float(self.velocities[t, i, 1])),
                    repr(float(self.d_obs[t, i])), repr(float(self.rewards[t, i])),
                    int(self.done[t, i]), int(self.collision[t, i]),
                ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != TRAJECTORY_HEADER:
            raise ValueError("trajectory CSV header mismatch")
        body = rows[1:]
        if not body:
            raise ValueError("trajectory CSV has no rows")
        try:
            n = max(int(r[1]) for r in body) + 1
            if len(body) % n:
                raise ValueError("ragged trajectory CSV")
            arr = np.array([[float(x) for x in r] for r in body]).reshape(-1, n, len(TRAJECTORY_HEADER))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"malformed trajectory CSV: {exc}") from exc
        dt = float(arr[1, 0, 0] - arr[0, 0, 0]) if len(arr) > 1 else DT
        return cls(
            positions=arr[:, :, 2:4], velocities=arr[:, :, 4:6], d_obs=arr[:, :, 6],
            rewards=arr[:, :, 7], done=arr[:, :, 8].astype(bool), collision=arr[:, :, 9].astype(bool),
            dt=dt,
        )


class TrajectoryRecorder:
    def __init__(self, state: EnvState, dt: float = DT):
        n = state.n
        self.dt = dt
        self._p = [state.p.copy()]
        self._q = [state.q.copy()]
        self._d = [state.d.copy()]
        self._r = [np.zeros(n)]
        self._done = [state.done.copy()]
        self._col = [np.zeros(n, dtype=bool)]

    def record(self, result: StepResult) -> None:
        s = result.state
        self._p.append(s.p.copy())
        self._q.append(s.q.copy())
        self._d.append(s.d.copy())
        self._r.append(result.rewards.copy())
        self._done.append(s.done.copy())
        self._col.append(result.info["collisions"].copy())

    def trajectory(self) -> Trajectory:
        return Trajectory(np.array(self._p), np.array(self._q), np.array(self._d), np.array(self._r),
                          np.array(self._done), np.array(self._col), self.dt)
