"""Checkpoint and run-config persistence (JSON, shortest round-trip floats)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from formnav.env import RewardConfig
from formnav.nn import ParamStore
from formnav.ppo import PpoConfig

CHECKPOINT_VERSION = "formnav-ckpt/1"


class CheckpointError(ValueError):
    pass


@dataclass
class ScenarioParams:
    n: int = 5
    formation: str = "circle"
    wide: float = 6.0
    narrow: float = 2.0
    length: float = 20.0
    taper: float = 4.0
    scale: float = 1.0
    max_steps: int = 400
    scenario_file: str | None = None


@dataclass
class RunConfig:
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    method: str = "afor"
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        def build(kind, sub):
            names = {f.name for f in fields(kind)}
            return kind(**{k: v for k, v in sub.items() if k in names})
        return cls(
            scenario=build(ScenarioParams, doc.get("scenario", {})),
            method=doc.get("method", "afor"),
            reward=build(RewardConfig, doc.get("reward", {})),
            ppo=build(PpoConfig, doc.get("ppo", {})),
            seeds=list(doc.get("seeds", [0])),
            out_dir=doc.get("out_dir", "runs"),
        )


def checkpoint_dict(params: ParamStore, config: RunConfig | None, steps: int) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "steps": int(steps),
        "config": config.to_dict() if config is not None else None,
        "params": [
            {"name": name, "shape": list(p.data.shape), "values": [float(x) for x in p.data.ravel()]}
            for name, p in params
        ],
    }


def dumps_checkpoint(params: ParamStore, config: RunConfig | None = None, steps: int = 0) -> str:
    return json.dumps(checkpoint_dict(params, config, steps), indent=None, separators=(",", ":")) + "\n"


def loads_checkpoint(text: str) -> tuple[ParamStore, RunConfig | None, int]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    store = ParamStore()
    for entry in doc["params"]:
        values = np.array(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"parameter {entry['name']} has {values.size} values for shape {shape}")
        store.add(entry["name"], values.reshape(shape))
    config = RunConfig.from_dict(doc["config"]) if doc.get("config") else None
    return store, config, int(doc.get("steps", 0))


def save_checkpoint(path, params: ParamStore, config: RunConfig | None = None, steps: int = 0) -> None:
    Path(path).write_text(dumps_checkpoint(params, config, steps))


def load_checkpoint(path) -> tuple[ParamStore, RunConfig | None, int]:
    return loads_checkpoint(Path(path).read_text())


def params_digest(params: ParamStore) -> str:
    h = hashlib.sha256()
    for name, p in params:
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def check_compatible(params: ParamStore, reference: ParamStore) -> None:
    """Raise if ``params`` does not match the layout of ``reference``."""
    got = {k: p.data.shape for k, p in params}
    want = {k: p.data.shape for k, p in reference}
    if got != want:
        missing = sorted(set(want) - set(got))
        wrong = sorted(k for k in set(got) & set(want) if got[k] != want[k])
        raise CheckpointError(f"checkpoint layout mismatch (missing={missing}, wrong_shape={wrong})")
