"""Command-line runner: train, eval, sweep, trace-export, print-defaults."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, build_env, build_scenario, dump_config, load_config, with_overrides
from .credibility import credibility_report, evaluate_level
from .env import ConfigError, HybridAction
from .tensor import load_checkpoint, save_checkpoint
from .trainer import (GeoIController, PolicyController, RandomController, TrainingDivergence, build_policy,
                      config_dict, evaluate, geo_i_eps, run_episode, train)
from .policy import load_policy_state, policy_state
from .world import ScenarioError

POLICIES = ("lhdppo", "geo_i", "ppo_relaxed", "random")
AXES = ("lr", "denoise_steps", "action_intensity")


class CliError(RuntimeError):
    pass


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def save_policy(path, policy, cfg: RunConfig, result=None):
    meta = {"policy": policy.config(), "train": config_dict(cfg.train), "seed": cfg.seed}
    if result is not None:
        vn = result.value_normalizer
        meta["value_norm"] = {"m1": vn.m1, "m2": vn.m2, "weight": vn.weight}
    save_checkpoint(path, policy_state(policy), meta)


def restore_policy(path, env, cfg: RunConfig, kind: str):
    arrays, meta = load_checkpoint(path)
    stored = meta.get("policy", {}).get("kind")
    if stored != kind:
        raise CliError(f"{path}: checkpoint holds a {stored!r} policy, not {kind!r}")
    tcfg = dataclasses.replace(cfg.train, hidden=tuple(meta["policy"]["hidden"]),
                               **({"denoise_steps": meta["policy"]["steps"]} if "steps" in meta["policy"] else {}))
    policy = build_policy(kind, env, tcfg, 0)
    if kind == "lhdppo":
        policy.schedule.betas[:] = meta["policy"]["betas"]
    load_policy_state(policy, arrays)
    return policy


def run_training(cfg: RunConfig, out: Path, kind: str = "lhdppo"):
    scenario = build_scenario(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    with (out / "metrics.jsonl").open("w", encoding="utf-8") as log:
        result = train(lambda: build_env(cfg, scenario), cfg.train, kind, cfg.seed, log,
                       log_every=cfg.output.log_every)
    save_policy(out / "checkpoint.npz", result.policy, cfg, result)
    return result


def cmd_train(args) -> int:
    cfg = _load(args)
    kind = args.policy or "lhdppo"
    if kind not in ("lhdppo", "ppo_relaxed"):
        raise CliError(f"only learned policies can be trained, not {kind!r}")
    out = _out_dir(cfg, args)
    result = run_training(cfg, out, kind)
    last = result.metrics[-1] if result.metrics else {}
    print(f"trained {kind} for {len(result.metrics)} iterations; "
          f"final mean reward {last.get('mean_reward', float('nan')):.4f}; wrote {out}")
    return 0


def make_controller(kind, env, cfg: RunConfig, checkpoint):
    if kind in ("geo_i", "random"):
        if checkpoint:
            print(f"warning: --checkpoint is ignored for the {kind} policy", file=sys.stderr)
        if kind == "geo_i":
            return GeoIController(geo_i_eps(env.r_max), env.n_vehicles, env.n_servers)
        return RandomController()
    if not checkpoint:
        raise CliError(f"the {kind} policy needs --checkpoint")
    return PolicyController(restore_policy(checkpoint, env, cfg, kind), cfg.train.eval_deterministic)


def summarize(records) -> dict:
    keys = ("objective", "mean_reward", "mean_entropy_bits", "mean_latency_s", "mean_qos", "mean_radius")
    out = {f"mean_{k}" if not k.startswith("mean_") else k: float(np.mean([r[k] for r in records])) for k in keys}
    out["mean_utility"] = out.pop("mean_objective")
    out["episodes"] = len(records)
    out["violations"] = int(sum(r["violations"] for r in records))
    return out


def run_eval(cfg: RunConfig, kind: str, checkpoint, out: Path, episodes=None):
    episodes = episodes or cfg.train.eval_episodes
    out.mkdir(parents=True, exist_ok=True)
    with (out / f"steps_{kind}.jsonl").open("w", encoding="utf-8") as steps, \
            (out / f"eval_{kind}.jsonl").open("w", encoding="utf-8") as log:
        env = build_env(cfg, log=steps)
        ctl = make_controller(kind, env, cfg, checkpoint)
        records = evaluate(env, ctl, episodes, cfg.seed, log, kind)
    summary = {"policy": kind, **summarize(records)}
    (out / f"summary_{kind}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
    return summary


def cmd_eval(args) -> int:
    cfg = _load(args)
    kind = args.policy or "lhdppo"
    summary = run_eval(cfg, kind, args.checkpoint, _out_dir(cfg, args))
    print(json.dumps(summary, sort_keys=True))
    return 0


def _parse_values(axis, raw):
    if raw is None:
        if axis == "action_intensity":
            return [k / 9 for k in range(10)]
        raise CliError(f"--values is required for the {axis} sweep")
    try:
        vals = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--values must be comma-separated numbers, got {raw!r}") from None
    if axis == "denoise_steps":
        if any(v != int(v) or v < 1 for v in vals):
            raise CliError("denoise_steps values must be positive integers")
        vals = [int(v) for v in vals]
    if axis == "action_intensity" and any(not 0 <= v <= 1 for v in vals):
        raise CliError("action_intensity values must lie in [0, 1]")
    if not vals:
        raise CliError("--values is empty")
    return vals


def cmd_sweep(args) -> int:
    cfg = _load(args)
    axis = args.axis
    values = _parse_values(axis, args.values)
    out = _out_dir(cfg, args)
    if axis == "action_intensity":
        env = build_env(cfg)
        n_rsus = int(env.scenario.server_is_rsu.sum())
        rows = []
        for k, x in enumerate(values):
            rank = int(round(x * (n_rsus - 1)))
            row = evaluate_level(env, k, x, env.r_max * x, rank, cfg.seed)
            rows.append(row)
            sub = out / f"action_intensity={x:g}"
            sub.mkdir(parents=True, exist_ok=True)
            (sub / "metrics.jsonl").write_text(json.dumps(dataclasses.asdict(row), sort_keys=True) + "\n",
                                               encoding="utf-8")
        report = credibility_report(rows) if len(rows) > 1 else {"levels": [dataclasses.asdict(r) for r in rows]}
        (out / "credibility.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(json.dumps({k: v for k, v in report.items() if k != "levels"}, sort_keys=True))
        return 0
    for v in values:
        key = "lr" if axis == "lr" else "denoise_steps"
        run_training(with_overrides(cfg, train={key: v}), out / f"{axis}={v:g}")
    print(f"wrote {len(values)} runs under {out}")
    return 0


def export_features(env, controller, seed=0):
    """One GeoJSON Feature per vehicle per slot: true point, reported point, agent RSU point."""
    roll = run_episode(env, controller, np.random.default_rng(seed), seed=seed)
    sc = env.scenario
    for out in roll.outcomes:
        for m, snap in enumerate(out.snapshots):
            agent = sc.servers[snap.cur_agent_server]
            geoms = [{"type": "Point", "coordinates": [snap.true_pos.lon, snap.true_pos.lat]},
                     {"type": "Point", "coordinates": [snap.perturbed_pos.lon, snap.perturbed_pos.lat]}]
            roles = ["true", "perturbed"]
            if agent.is_rsu:
                geoms.append({"type": "Point", "coordinates": [agent.position.lon, agent.position.lat]})
                roles.append("agent")
            yield {"type": "Feature",
                   "geometry": {"type": "GeometryCollection", "geometries": geoms},
                   "properties": {"vehicle": sc.vehicles[m].id, "t": out.t, "roles": roles,
                                  "agent_server": agent.id, "agent_kind": agent.kind,
                                  "radius": float(out.executed.radius[m]),
                                  "theta": float(out.executed.theta[m])}}


class StayController:
    """Reports the true position and keeps the agent on the connected server."""

    def decide(self, state, env, rng):
        M = env.n_vehicles
        return HybridAction(np.zeros(M), np.zeros(M), np.array(env.connected)), None

    def observe(self, action, outcome):
        pass


def cmd_trace_export(args) -> int:
    cfg = _load(args)
    env = build_env(cfg)
    kind = args.policy or ("lhdppo" if args.checkpoint else "none")
    ctl = StayController() if kind == "none" else make_controller(kind, env, cfg, args.checkpoint)
    path = Path(args.out) if args.out else Path(cfg.output.directory) / "trace.geojsonl"
    if path.suffix == "" or path.is_dir():
        path = path / "trace.geojsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for feat in export_features(env, ctl, cfg.seed):
            fh.write(json.dumps(feat, sort_keys=True) + "\n")
            n += 1
    print(f"wrote {n} features to {path}")
    return 0


def cmd_print_defaults(args) -> int:
    sys.stdout.write(dump_config(RunConfig()))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="crosspriv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy_choices=POLICIES):
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override [run] seed")
        sp.add_argument("--out", default=None, help="output directory (default: [output] directory)")
        sp.add_argument("--policy", choices=policy_choices, default=None)
        sp.add_argument("--checkpoint", default=None)

    common(sub.add_parser("train", help="train a learned policy"))
    common(sub.add_parser("eval", help="evaluate a policy without learning"))
    sw = sub.add_parser("sweep", help="train or evaluate once per value of one axis")
    common(sw)
    sw.add_argument("--axis", choices=AXES, required=True)
    sw.add_argument("--values", default=None, help="comma-separated values")
    common(sub.add_parser("trace-export", help="write per-slot positions as line-delimited GeoJSON"),
           POLICIES + ("none",))
    sub.add_parser("print-defaults", help="print every configuration key with its default")
    return p


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "trace-export": cmd_trace_export,
            "print-defaults": cmd_print_defaults}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScenarioError, CliError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
