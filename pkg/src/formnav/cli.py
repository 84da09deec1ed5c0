"""Command-line entry point: ``formnav {scenario|train|eval|generalize|plot-data}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from formnav import metrics
from formnav.baselines import LeaderFollowerGains, bl_config
from formnav.env import RewardConfig, Trajectory
from formnav.evaluation import evaluate, leader_follower_controller, policy_controller, summarize
from formnav.persist import (
    CheckpointError,
    RunConfig,
    ScenarioParams,
    check_compatible,
    load_checkpoint,
    params_digest,
    save_checkpoint,
)
from formnav.policy import init_params
from formnav.ppo import PpoConfig, train
from formnav.team import formation_template
from formnav.world import GeometryError, Scenario, build_corridor, corridor_layout

EXIT_GEOMETRY = 2
EXIT_TRAINING = 3
EXIT_CHECKPOINT = 4
EXIT_IO = 5

log = logging.getLogger("formnav")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def worker_count(requested: int = 1) -> int:
    cap = os.environ.get("FORMNAV_THREADS")
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError:
            pass
    return max(1, requested)


def fitted_wide(kind: str, n: int, scale: float, wide: float, clearance: float = 0.6) -> float:
    """Entry width that leaves ``clearance`` between the template and each wall."""
    off = np.array(formation_template(kind, n, scale))
    return max(wide, float(off[:, 1].max() - off[:, 1].min()) + 2 * clearance)


def scenario_from_params(sp: ScenarioParams) -> Scenario:
    if sp.scenario_file:
        try:
            return Scenario.from_json(Path(sp.scenario_file).read_text())
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_IO, f"cannot read scenario {sp.scenario_file}: {exc}") from exc
    try:
        return build_corridor(sp.n, sp.formation, sp.wide, sp.narrow, sp.length, sp.taper,
                              scale=sp.scale, max_steps=sp.max_steps)
    except (GeometryError, ValueError) as exc:
        raise CliError(EXIT_GEOMETRY, f"infeasible geometry: {exc}") from exc


def add_scenario_args(p: argparse.ArgumentParser, defaults: bool = True) -> None:
    d = ScenarioParams()
    g = p.add_argument_group("scenario")
    g.add_argument("--scenario", dest="scenario_file", help="scenario JSON (overrides generator flags)")
    g.add_argument("--formation", choices=("circle", "wedge", "line"), default=d.formation if defaults else None)
    g.add_argument("--n", type=int, default=d.n if defaults else None)
    g.add_argument("--wide", type=float, default=d.wide if defaults else None)
    g.add_argument("--narrow", type=float, default=d.narrow if defaults else None)
    g.add_argument("--length", type=float, default=d.length if defaults else None)
    g.add_argument("--taper", type=float, default=d.taper if defaults else None)
    g.add_argument("--scale", type=float, default=d.scale if defaults else None)
    g.add_argument("--max-steps", type=int, default=d.max_steps if defaults else None)


def scenario_params(args, base: ScenarioParams | None = None) -> ScenarioParams:
    sp = base or ScenarioParams()
    updates = {}
    for name in ("formation", "n", "wide", "narrow", "length", "taper", "scale", "max_steps"):
        v = getattr(args, name, None)
        if v is not None:
            updates[name] = v
    updates["scenario_file"] = getattr(args, "scenario_file", None) or (sp.scenario_file if base else None)
    return replace(sp, **updates)


def parse_seeds(args) -> list[int]:
    if args.seed_list:
        return [int(s) for s in args.seed_list.split(",") if s.strip()]
    return list(range(args.seed_base, args.seed_base + args.seeds))


def write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def dumps(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


# -- scenario -----------------------------------------------------------------

def cmd_scenario(args) -> int:
    sp = scenario_params(args)
    sp = replace(sp, scenario_file=None)
    sc = scenario_from_params(sp)
    write_text(Path(args.out), sc.to_json() + "\n")
    print(f"wrote {args.out}: {sc.formation} n={sc.n_robots} wide={sc.corridor_width_wide} "
          f"narrow={sc.corridor_width_narrow} walls={len(sc.walls)} narrow_span={list(sc.narrow_span)}")
    return 0


# -- train --------------------------------------------------------------------

def reward_for(method: str, args) -> RewardConfig:
    base = RewardConfig()
    overrides = {k: getattr(args, k) for k in ("alpha", "w_adapt") if getattr(args, k, None) is not None}
    base = replace(base, **overrides)
    if method == "bl":
        return bl_config(base)
    return base


def cmd_train(args) -> int:
    sp = scenario_params(args)
    scenario = scenario_from_params(sp)
    reward = reward_for(args.method, args)
    ppo_cfg = PpoConfig(
        total_steps=args.steps,
        n_envs=args.n_envs,
        n_steps=args.n_steps,
        curriculum=not args.no_curriculum,
        lr=args.lr,
        anneal_lr=args.anneal_lr,
        c_v=args.c_v,
        c_e=args.c_e,
        goal_shift=args.goal_shift,
        eval_every=args.eval_every,
        eval_seeds=tuple(range(1000, 1000 + args.eval_seeds)),
        record_wall_time=args.wall_time,
        workers=worker_count(args.workers),
    )
    config = RunConfig(scenario=sp, method=args.method, reward=reward, ppo=ppo_cfg,
                       seeds=[args.seed], out_dir=str(args.out))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train.jsonl"
    with open(log_path, "w") as fh:
        result = train([scenario], ppo_cfg, reward, seed=args.seed,
                       callback=lambda rec: (fh.write(json.dumps(rec) + "\n"), fh.flush()))
    save_checkpoint(out / "final.ckpt.json", result.params, config, result.env_steps)
    save_checkpoint(out / "best.ckpt.json", result.best_params, config, result.env_steps)
    if result.diverged:
        print(f"training diverged after {result.env_steps} steps; last good parameters saved", file=sys.stderr)
        return EXIT_TRAINING
    last = result.log[-1] if result.log else {}
    print(f"trained {args.method} for {result.env_steps} steps; last eval sr={last.get('sr_eval')} "
          f"cfi={last.get('cfi_eval')}")
    return 0


# -- eval ---------------------------------------------------------------------

def load_policy(path: str):
    try:
        params, config, _ = load_checkpoint(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint {path}: {exc}") from exc
    except (CheckpointError, KeyError, TypeError) as exc:
        raise CliError(EXIT_CHECKPOINT, str(exc)) from exc
    hidden = config.ppo.hidden if config else PpoConfig.hidden
    try:
        check_compatible(params, init_params(0, hidden=hidden))
    except CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, str(exc)) from exc
    return params, config


def controller_for(method: str, ckpt: str | None, scenario: Scenario, reward: RewardConfig):
    if method == "lf":
        return leader_follower_controller(scenario, LeaderFollowerGains(), reward.goal_tol)
    if not ckpt:
        raise CliError(EXIT_CHECKPOINT, f"--ckpt is required for method {method}")
    params, config = load_policy(ckpt)
    factor = config.ppo.graph_radius_factor if config else 3.0
    return policy_controller(params, factor)


def metrics_doc(scenario: Scenario, method: str, seeds, results) -> dict:
    s = summarize(results)
    return {
        "scenario": f"{scenario.formation} n={scenario.n_robots} wide={scenario.corridor_width_wide} "
                    f"narrow={scenario.corridor_width_narrow}",
        "method": method,
        "seeds": list(seeds),
        "sr_mean": s["sr_mean"],
        "cfi": {str(d): v for d, v in s["cfi"].items()},
        "oscillation_mean": s["oscillation_mean"],
        "per_seed": [
            {"seed": seed, "sr": r.metrics.sr, "cfi": {str(d): v for d, v in r.metrics.cfi_by_delta.items()},
             "oscillation": r.metrics.oscillation, "steps": r.metrics.steps, "collided": r.collided}
            for seed, r in zip(seeds, results)
        ],
    }


def render_table(rows: list[dict]) -> str:
    head = ["Method", "SR (%)"] + [f"δ<{d}" for d in metrics.DELTAS]
    lines = [" | ".join(f"{h:>8}" for h in head)]
    for doc in rows:
        cells = [doc["method"], f"{doc['sr_mean']:.0f}"] + [f"{100 * doc['cfi'][str(d)]:.3f}" for d in metrics.DELTAS]
        lines.append(" | ".join(f"{c:>8}" for c in cells))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    config = None
    if args.ckpt:
        _, config = load_policy(args.ckpt)
    base = config.scenario if config else None
    sp = scenario_params(args, base)
    scenario = scenario_from_params(sp)
    method = args.method or (config.method if config else "afor")
    reward = config.reward if config else RewardConfig()
    seeds = parse_seeds(args)
    controller = controller_for(method, args.ckpt, scenario, reward)
    results = evaluate(scenario, controller, seeds, reward)
    out = Path(args.out)
    for seed, r in zip(seeds, results):
        write_text(out / f"traj_seed{seed}.csv", r.trajectory.to_csv())
    doc = metrics_doc(scenario, method, seeds, results)
    write_text(out / "metrics.json", dumps(doc))
    if args.table:
        print(render_table([doc]))
    else:
        print(f"{method}: sr={doc['sr_mean']:.1f} cfi(0.5)={doc['cfi']['0.5']:.3f} "
              f"osc={doc['oscillation_mean']:.3f}")
    return 0


# -- generalize ---------------------------------------------------------------

def cmd_generalize(args) -> int:
    params, config = load_policy(args.ckpt)
    digest = params_digest(params)
    file_hash = hashlib.sha256(Path(args.ckpt).read_bytes()).hexdigest()
    base = config.scenario if config else ScenarioParams()
    sp = scenario_params(args, base)
    sizes = [int(s) for s in args.sizes.split(",")]
    if sp.formation == "wedge" and any(n % 2 == 0 for n in sizes):
        raise CliError(EXIT_GEOMETRY, f"wedge formation needs odd team sizes, got {sizes}")
    reward = config.reward if config else RewardConfig()
    factor = config.ppo.graph_radius_factor if config else 3.0
    seeds = parse_seeds(args)
    entries = []
    for n in sizes:
        wide = fitted_wide(sp.formation, n, sp.scale, sp.wide)
        sc = scenario_from_params(replace(sp, n=n, wide=wide, scenario_file=None))
        results = evaluate(sc, policy_controller(params, factor), seeds, reward)
        s = summarize(results)
        entries.append({
            "n": n, "wide": wide, "sr_mean": s["sr_mean"],
            "cfi": {str(d): v for d, v in s["cfi"].items()},
            "oscillation_mean": s["oscillation_mean"],
            "per_seed": [{"seed": seed, "sr": r.metrics.sr,
                          "cfi": {str(d): v for d, v in r.metrics.cfi_by_delta.items()}}
                         for seed, r in zip(seeds, results)],
            "params_digest": params_digest(params),
        })
    if any(e["params_digest"] != digest for e in entries):
        raise CliError(EXIT_CHECKPOINT, "parameters changed during evaluation")
    doc = {"checkpoint_sha256": file_hash, "params_digest": digest, "formation": sp.formation,
           "seeds": seeds, "sizes": entries}
    write_text(Path(args.out), dumps(doc))
    for e in entries:
        print(f"n={e['n']}: sr={e['sr_mean']:.1f} cfi(0.5)={e['cfi']['0.5']:.3f}")
    return 0


# -- plot-data ----------------------------------------------------------------

def snapshot_times(traj: Trajectory, scenario: Scenario) -> list[dict]:
    """Times at which the team centroid first reaches the narrow-span entry, middle and exit."""
    s = traj.positions.mean(axis=1) @ np.asarray(scenario.axis)
    s0, s1 = scenario.narrow_span
    out, last = [], -1
    for label, mark in (("entry", s0), ("mid", 0.5 * (s0 + s1)), ("exit", s1)):
        idx = np.nonzero(s >= mark)[0]
        if len(idx) and idx[0] > last:
            last = int(idx[0])
            out.append({"label": label, "step": last, "t": round(last * traj.dt, 10)})
    return out


def cmd_plot_data(args) -> int:
    try:
        text = Path(args.traj).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.traj}: {exc}") from exc
    try:
        traj = Trajectory.from_csv(text)
    except ValueError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    scenario = scenario_from_params(scenario_params(args))
    doc = {
        "robots": [{"robot": i, "x": traj.positions[:, i, 0].tolist(), "y": traj.positions[:, i, 1].tolist()}
                   for i in range(traj.n)],
        "walls": [w.as_row() for w in scenario.walls],
        "narrow_span": list(scenario.narrow_span),
        "snapshots": snapshot_times(traj, scenario),
    }
    write_text(Path(args.out), dumps(doc))
    print(f"wrote {args.out}: {traj.n} robots, {len(doc['walls'])} walls, {len(doc['snapshots'])} snapshots")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="formnav", description="Adaptive formation navigation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("scenario", help="write a corridor scenario JSON")
    add_scenario_args(sc)
    sc.add_argument("--out", default="scenario.json")
    sc.set_defaults(func=cmd_scenario)

    tr = sub.add_parser("train", help="train a team policy with PPO")
    add_scenario_args(tr)
    tr.add_argument("--method", choices=("afor", "bl"), default="afor")
    tr.add_argument("--steps", type=int, default=PpoConfig.total_steps)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", default="runs/train")
    tr.add_argument("--n-envs", type=int, default=PpoConfig.n_envs)
    tr.add_argument("--n-steps", type=int, default=PpoConfig.n_steps)
    tr.add_argument("--eval-every", type=int, default=PpoConfig.eval_every)
    tr.add_argument("--eval-seeds", type=int, default=len(PpoConfig.eval_seeds),
                    help="number of held-out seeds (1000, 1001, ...) for best-checkpoint selection")
    tr.add_argument("--lr", type=float, default=PpoConfig.lr)
    tr.add_argument("--anneal-lr", action="store_true", help="decay the learning rate linearly to 0")
    tr.add_argument("--c-v", type=float, default=PpoConfig.c_v, help="value-loss coefficient")
    tr.add_argument("--c-e", type=float, default=PpoConfig.c_e, help="entropy coefficient")
    tr.add_argument("--goal-shift", type=float, default=PpoConfig.goal_shift,
                    help="half-width (m) of the random goal translation per training episode")
    tr.add_argument("--alpha", type=float)
    tr.add_argument("--w-adapt", type=float)
    tr.add_argument("--no-curriculum", action="store_true")
    tr.add_argument("--workers", type=int, default=1)
    tr.add_argument("--wall-time", action="store_true", help="record wall_ms (breaks byte-identical logs)")
    tr.set_defaults(func=cmd_train)

    def seed_args(q):
        q.add_argument("--seeds", type=int, default=10, help="number of evaluation seeds")
        q.add_argument("--seed-base", type=int, default=0)
        q.add_argument("--seed-list", help="comma-separated explicit seeds")

    ev = sub.add_parser("eval", help="evaluate a checkpoint or the leader-follower baseline")
    add_scenario_args(ev, defaults=False)
    ev.add_argument("--ckpt")
    ev.add_argument("--method", choices=("afor", "bl", "lf"))
    ev.add_argument("--out", default="runs/eval")
    ev.add_argument("--table", action="store_true")
    seed_args(ev)
    ev.set_defaults(func=cmd_eval)

    ge = sub.add_parser("generalize", help="evaluate one checkpoint across team sizes")
    add_scenario_args(ge, defaults=False)
    ge.add_argument("--ckpt", required=True)
    ge.add_argument("--sizes", default="3,5,7,9")
    ge.add_argument("--out", default="runs/generalize.json")
    seed_args(ge)
    ge.set_defaults(func=cmd_generalize)

    pd = sub.add_parser("plot-data", help="convert a trajectory CSV to plot-ready JSON")
    add_scenario_args(pd)
    pd.add_argument("--traj", required=True)
    pd.add_argument("--out", default="plot.json")
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
