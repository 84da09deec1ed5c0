"""Clipped-surrogate PPO over the team policy: rollouts, GAE, update and the training loop."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from formnav import nn, policy
from formnav.env import DT, RewardConfig, reset, step
from formnav.evaluation import directed_edges, evaluate, graph_radius, policy_controller, summarize
from formnav.nn import ParamStore, Tensor
from formnav.world import Scenario, build_corridor

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    c_v: float = 0.5
    c_e: float = 0.01
    lr: float = 3e-4
    total_steps: int = 1_000_000
    n_envs: int = 8
    n_steps: int = 128
    max_grad_norm: float = 0.5
    graph_radius_factor: float = 3.0
    hidden: int = 64
    curriculum: bool = True
    narrow_min: float | None = None
    eval_every: int = 10
    eval_seeds: tuple[int, ...] = (1000, 1001)
    record_wall_time: bool = False
    workers: int = 1
    anneal_lr: bool = False
    goal_shift: float = 0.0  # half-width (m) of a random goal translation per training episode

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.goal_shift < 0:
            raise ValueError("goal_shift must be non-negative")
        self.eval_seeds = tuple(self.eval_seeds)


@dataclass
class Advantages:
    A: np.ndarray
    R: np.ndarray


def compute_gae(rewards, values, dones, bootstrap, gamma: float, gae_lambda: float) -> Advantages:
    """Generalized advantage estimates along axis 0, independently for every trailing index.

    ``dones[t]`` marks step ``t`` as terminal: nothing after it is bootstrapped.
    ``bootstrap`` is the value of the state following the last step.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    T = len(r)
    A = np.zeros_like(r)
    next_v = np.asarray(bootstrap, dtype=np.float64) * np.ones_like(r[0])
    running = np.zeros_like(r[0])
    for t in range(T - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_v * live - v[t]
        running = delta + gamma * gae_lambda * live * running
        A[t] = running
        next_v = v[t]
    return Advantages(A, A + v)


def normalize_advantages(A: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    mask = np.ones(A.shape, dtype=bool) if mask is None else mask
    sel = A[mask]
    if sel.size == 0:
        return A.copy()
    mu, sd = sel.mean(), sel.std()
    out = (A - mu) / sd if sd > 0 else A - mu
    return np.where(mask, out, 0.0)


def clipped_surrogate(ratio: Tensor, adv: np.ndarray, clip: float) -> Tensor:
    """Per-sample min(rho * A, clip(rho, 1 - clip, 1 + clip) * A).

    The clipped branch comes first so that ties (possible after rounding)
    take its gradient, which is zero whenever the clip binds.
    """
    return nn.minimum(nn.clip(ratio, 1.0 - clip, 1.0 + clip) * adv, ratio * adv)


@dataclass
class Minibatch:
    obs: np.ndarray
    edges: tuple[np.ndarray, np.ndarray]
    actions: np.ndarray
    logp_old: np.ndarray
    adv: np.ndarray
    returns: np.ndarray
    mask: np.ndarray


def ppo_loss(mb: Minibatch, params: ParamStore, config: PpoConfig) -> tuple[Tensor, dict]:
    """Negative clipped surrogate plus value and entropy terms, averaged over masked samples."""
    out = policy.forward(mb.obs, mb.edges, params)
    logp = nn.gaussian_logprob(mb.actions, out.mu, out.log_std)
    ratio = nn.exp(logp - mb.logp_old)
    if not np.all(np.isfinite(ratio.data)):
        raise TrainingDivergence("non-finite probability ratio")
    w = mb.mask / max(1, int(mb.mask.sum()))
    surrogate = nn.tsum(clipped_surrogate(ratio, mb.adv, config.clip) * w)
    verr = out.values - mb.returns
    value_loss = nn.tsum(verr * verr * w)
    entropy = nn.gaussian_entropy(out.log_std)
    loss = -surrogate + config.c_v * value_loss - config.c_e * entropy
    r = ratio.data[mb.mask]
    stats = {
        "loss": loss.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy.item(),
        "clip_frac": float(np.mean(np.abs(r - 1.0) > config.clip)) if r.size else 0.0,
        "kl": float(np.mean((r - 1.0) - np.log(r))) if r.size else 0.0,
    }
    return loss, stats


@dataclass
class RolloutBuffer:
    """Fixed-length rollout over ``E`` envs of ``n`` robots: arrays are (T, E, n, ...)."""

    obs: np.ndarray
    edges: list  # [t][e] -> (src, dst) local to the team
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    active: np.ndarray
    bootstrap: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.rewards.shape


@dataclass
class UpdateStats:
    loss: float
    clip_frac: float
    kl: float
    value_loss: float
    entropy: float


def _minibatch(buf: RolloutBuffer, teams: np.ndarray, adv, ret) -> Minibatch:
    T, E, n = buf.shape
    t_idx, e_idx = teams // E, teams % E
    srcs, dsts = [], []
    for k, (t, e) in enumerate(zip(t_idx, e_idx)):
        s, d = buf.edges[t][e]
        srcs.append(s + k * n)
        dsts.append(d + k * n)
    edges = (np.concatenate(srcs), np.concatenate(dsts)) if srcs else (np.zeros(0, int), np.zeros(0, int))
    return Minibatch(
        obs=buf.obs[t_idx, e_idx].reshape(-1, buf.obs.shape[-1]),
        edges=edges,
        actions=buf.actions[t_idx, e_idx].reshape(-1, 2),
        logp_old=buf.logp[t_idx, e_idx].reshape(-1),
        adv=adv[t_idx, e_idx].reshape(-1),
        returns=ret[t_idx, e_idx].reshape(-1),
        mask=buf.active[t_idx, e_idx].reshape(-1),
    )


def _clip_grads(params: ParamStore, max_norm: float) -> None:
    if max_norm and max_norm > 0:
        norm = params.grad_norm()
        if norm > max_norm:
            for _, p in params:
                p.grad *= max_norm / (norm + 1e-12)


def update(buf: RolloutBuffer, params: ParamStore, config: PpoConfig, rng: np.random.Generator,
           lr: float | None = None) -> UpdateStats:
    """GAE once over the buffer, then ``epochs`` passes of shuffled team minibatches."""
    lr = config.lr if lr is None else lr
    T, E, n = buf.shape
    adv = compute_gae(buf.rewards, buf.values, buf.dones, buf.bootstrap, config.gamma, config.gae_lambda)
    A = normalize_advantages(adv.A, buf.active)
    teams_per_mb = max(1, config.minibatch // n)
    acc = {"loss": [], "clip_frac": [], "kl": [], "value_loss": [], "entropy": []}
    params.zero_grad()
    for _ in range(config.epochs):
        order = rng.permutation(T * E)
        for start in range(0, len(order), teams_per_mb):
            mb = _minibatch(buf, order[start:start + teams_per_mb], A, adv.R)
            if not mb.mask.any():
                continue
            loss, st = ppo_loss(mb, params, config)
            nn.backward(loss)
            _clip_grads(params, config.max_grad_norm)
            nn.adam_step(params, lr)
            for k in acc:
                acc[k].append(st[k])
    return UpdateStats(**{k: float(np.mean(v)) if v else 0.0 for k, v in acc.items()})


class _EnvSlot:
    """One environment instance with its own episode-seed stream."""

    def __init__(self, scenarios: list[Scenario], config: PpoConfig, seed: int, index: int):
        self.scenarios = scenarios
        self.config = config
        self.rng = np.random.default_rng([seed, index, 17])
        self.state = None
        self.obs = None
        self.ep_return = 0.0

    def _pick_scenario(self) -> Scenario:
        sc = self._resample_corridor(self.scenarios[int(self.rng.integers(len(self.scenarios)))])
        if self.config.goal_shift > 0:
            # without varied goals the policy can key on absolute position and ignore the goal offset
            shift = self.rng.uniform(-self.config.goal_shift, self.config.goal_shift, size=2)
            sc = replace(sc, goals=sc.goals + shift)
        return sc

    def _resample_corridor(self, sc: Scenario) -> Scenario:
        # only generated funnel corridors are resampled; open or straight scenarios stay as given
        if not self.config.curriculum or not sc.walls or sc.corridor_width_wide <= sc.corridor_width_narrow:
            return sc
        lo = self.config.narrow_min if self.config.narrow_min is not None else sc.corridor_width_narrow
        narrow = float(self.rng.uniform(lo, sc.corridor_width_wide))
        return build_corridor(sc.n_robots, sc.formation, sc.corridor_width_wide, narrow, sc.length,
                              sc.taper, scale=sc.formation_scale, robot_radius=sc.robot_radius,
                              max_steps=sc.max_steps)

    def reset(self):
        self.state, self.obs = reset(self._pick_scenario(), int(self.rng.integers(2**31)))
        self.ep_return = 0.0


def collect_rollouts(slots: list[_EnvSlot], params: ParamStore, config: PpoConfig, reward_config: RewardConfig,
                     rng: np.random.Generator, dt: float = DT, pool=None) -> tuple[RolloutBuffer, list[float]]:
    """Step every slot ``n_steps`` times against the current (read-only) parameters.

    With a thread ``pool`` the per-slot environment steps run concurrently;
    each slot owns its state and RNG, so the buffer is identical either way.
    """
    E = len(slots)
    n = slots[0].state.n
    T = config.n_steps
    obs = np.zeros((T, E, n, slots[0].obs.shape[1]))
    actions = np.zeros((T, E, n, 2))
    logp = np.zeros((T, E, n))
    rewards = np.zeros((T, E, n))
    values = np.zeros((T, E, n))
    dones = np.zeros((T, E, n), dtype=bool)
    active = np.zeros((T, E, n), dtype=bool)
    edges = []
    finished = []
    for t in range(T):
        step_edges = [directed_edges(s.state.p, graph_radius(s.state.scenario, config.graph_radius_factor))
                      for s in slots]
        edges.append(step_edges)
        cur = np.stack([s.obs for s in slots])
        obs[t] = cur
        joint = (np.concatenate([e[0] + k * n for k, e in enumerate(step_edges)]),
                 np.concatenate([e[1] + k * n for k, e in enumerate(step_edges)]))
        out = policy.forward(cur.reshape(E * n, -1), joint, params)
        a, lp = policy.sample_actions(out, rng)
        actions[t] = a.reshape(E, n, 2)
        logp[t] = lp.reshape(E, n)
        values[t] = out.values.data.reshape(E, n)

        def advance(k: int):
            s = slots[k]
            was_active = ~s.state.done
            res = step(s.state, actions[t, k], reward_config, dt)
            r = res.rewards.copy()
            if res.info["truncated"]:
                tail = directed_edges(res.state.p, graph_radius(res.state.scenario, config.graph_radius_factor))
                v_tail = policy.forward(res.observations, tail, params).values.data
                r += config.gamma * v_tail * ~res.state.done
            rewards[t, k] = r * was_active
            dones[t, k] = res.dones | ~was_active
            active[t, k] = was_active
            s.ep_return += float(res.rewards[was_active].sum()) / n
            if res.episode_done:
                done_return = s.ep_return
                s.reset()
                return done_return
            s.state, s.obs = res.state, res.observations
            return None

        stepped = pool.map(advance, range(E)) if pool else map(advance, range(E))
        finished.extend(r for r in stepped if r is not None)
    cur = np.stack([s.obs for s in slots])
    step_edges = [directed_edges(s.state.p, graph_radius(s.state.scenario, config.graph_radius_factor))
                  for s in slots]
    joint = (np.concatenate([e[0] + k * n for k, e in enumerate(step_edges)]),
             np.concatenate([e[1] + k * n for k, e in enumerate(step_edges)]))
    bootstrap = policy.forward(cur.reshape(E * n, -1), joint, params).values.data.reshape(E, n)
    buf = RolloutBuffer(obs, edges, actions, logp, rewards, values, dones, active, bootstrap)
    return buf, finished


@dataclass
class TrainResult:
    params: ParamStore
    best_params: ParamStore
    log: list[dict] = field(default_factory=list)
    env_steps: int = 0
    diverged: bool = False


def train(scenarios, ppo_config: PpoConfig = PpoConfig(), reward_config: RewardConfig = RewardConfig(),
          seed: int = 0, params: ParamStore | None = None, callback=None) -> TrainResult:
    """Alternate frozen-snapshot rollouts and PPO updates until the step budget is spent.

    Every ``eval_every`` iterations the current parameters are evaluated
    deterministically on the first scenario; the best (SR, then CFI at
    delta=0.5) snapshot is kept as ``best_params``.
    """
    scenarios = [scenarios] if isinstance(scenarios, Scenario) else list(scenarios)
    if not scenarios:
        raise ValueError("need at least one scenario")
    if len({s.n_robots for s in scenarios}) != 1:
        raise ValueError("all training scenarios must share a team size")
    params = params or policy.init_params(seed, hidden=ppo_config.hidden)
    result = TrainResult(params=params, best_params=params.copy())
    if ppo_config.total_steps <= 0:
        return result
    rng = np.random.default_rng([seed, 1])
    slots = [_EnvSlot(scenarios, ppo_config, seed, k) for k in range(ppo_config.n_envs)]
    for s in slots:
        s.reset()
    best = (-1.0, -1.0)
    returns_window: list[float] = []
    it = 0
    eval_ctrl_scenario = scenarios[0]
    pool = ThreadPoolExecutor(ppo_config.workers) if ppo_config.workers > 1 else None
    while result.env_steps < ppo_config.total_steps:
        t0 = time.perf_counter()
        snapshot = params.copy()
        buf, finished = collect_rollouts(slots, params, ppo_config, reward_config, rng, pool=pool)
        result.env_steps += ppo_config.n_steps * ppo_config.n_envs
        lr = ppo_config.lr
        if ppo_config.anneal_lr:
            lr *= 1.0 - (result.env_steps - ppo_config.n_steps * ppo_config.n_envs) / ppo_config.total_steps
        try:
            st = update(buf, params, ppo_config, rng, lr)
        except TrainingDivergence:
            log.warning("divergence at iteration %d; keeping last good parameters", it)
            result.params = snapshot
            result.diverged = True
            break
        returns_window = (returns_window + finished)[-50:]
        rec = {
            "iter": it,
            "env_steps": result.env_steps,
            "mean_return": float(np.mean(returns_window)) if returns_window else None,
            "sr_eval": None,
            "cfi_eval": None,
            "loss": st.loss,
            "clip_frac": st.clip_frac,
            "kl": st.kl,
            "entropy": st.entropy,
        }
        last = result.env_steps >= ppo_config.total_steps
        if ppo_config.eval_every and ((it + 1) % ppo_config.eval_every == 0 or last):
            summary = summarize(evaluate(eval_ctrl_scenario, policy_controller(params, ppo_config.graph_radius_factor),
                                         ppo_config.eval_seeds, reward_config))
            rec["sr_eval"] = summary["sr_mean"]
            rec["cfi_eval"] = summary["cfi"][0.5]
            score = (summary["sr_mean"], summary["cfi"][0.5])
            if score > best:
                best = score
                result.best_params = params.copy()
        rec["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3) if ppo_config.record_wall_time else 0
        result.log.append(rec)
        if callback is not None:
            callback(rec)
        it += 1
    if pool is not None:
        pool.shutdown()
    return result
