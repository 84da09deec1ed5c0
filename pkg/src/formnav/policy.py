"""Hierarchical team policy: per-robot encoder, graph coordination layer, action and value heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from formnav import nn
from formnav.nn import ParamStore, Tensor

OBS_DIM = 7
ACT_DIM = 2
HIDDEN = 64
LOG_STD_MIN = math.log(0.01)
LOG_STD_MAX = math.log(2.0)
LOG_STD_INIT = math.log(0.5)


@dataclass
class PolicyOutput:
    mu: Tensor
    log_std: Tensor
    values: Tensor


def init_params(seed: int = 0, hidden: int = HIDDEN, obs_dim: int = OBS_DIM,
                gnn_layers: int = 1) -> ParamStore:
    """Fresh parameters with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.

    Names fix the checkpoint layout: ``enc.{k}`` (4 layers), ``gnn.{k}.W``,
    ``act.{k}``, ``val.{k}`` (2 layers each) and ``log_std``.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()

    def dense(prefix, fan_in, fan_out):
        store.add(f"{prefix}.W", nn.init_uniform(rng, fan_in, (fan_in, fan_out)))
        store.add(f"{prefix}.b", nn.init_uniform(rng, fan_in, (fan_out,)))

    widths = [obs_dim, hidden, hidden, hidden, hidden]
    for k in range(4):
        dense(f"enc.{k}", widths[k], widths[k + 1])
    for k in range(gnn_layers):
        store.add(f"gnn.{k}.W", nn.init_uniform(rng, hidden, (hidden, hidden)))
    dense("act.0", hidden, hidden)
    dense("act.1", hidden, ACT_DIM)
    dense("val.0", hidden, hidden)
    dense("val.1", hidden, 1)
    store.add("log_std", np.full(ACT_DIM, LOG_STD_INIT))
    return store


def _gnn_names(params: ParamStore) -> list[str]:
    return [k for k, _ in params if k.startswith("gnn.")]


def forward(observations, graph, params: ParamStore) -> PolicyOutput:
    """Run the full pipeline on a team (or a disjoint union of teams).

    ``graph`` is a TeamGraph, a directed ``(src, dst)`` edge-array pair or a
    prebuilt message matrix.
    """
    obs = observations.data if isinstance(observations, Tensor) else np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != params["enc.0.W"].shape[0]:
        raise ValueError(f"observations must have shape (n, {params['enc.0.W'].shape[0]}), got {obs.shape}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("non-finite observation")
    x = observations if isinstance(observations, Tensor) else Tensor(obs)
    for k in range(4):
        x = nn.relu(nn.linear(x, params[f"enc.{k}.W"], params[f"enc.{k}.b"]))
    M = nn.message_matrix(graph, obs.shape[0])
    for name in _gnn_names(params):
        x = nn.gnn_layer(x, M, params[name])
    mu = nn.linear(nn.relu(nn.linear(x, params["act.0.W"], params["act.0.b"])),
                   params["act.1.W"], params["act.1.b"])
    v = nn.linear(nn.relu(nn.linear(x, params["val.0.W"], params["val.0.b"])),
                  params["val.1.W"], params["val.1.b"])
    values = nn.tsum(v, axis=1)
    log_std = nn.clip(params["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    return PolicyOutput(mu=mu, log_std=log_std, values=values)


def sample_actions(output: PolicyOutput, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    mu = output.mu.data
    std = np.exp(output.log_std.data)
    actions = mu + std * rng.standard_normal(mu.shape)
    logp = nn.gaussian_logprob(actions, mu, output.log_std.data).data
    return actions, logp


def act_deterministic(observations, graph, params: ParamStore) -> np.ndarray:
    return forward(observations, graph, params).mu.data
