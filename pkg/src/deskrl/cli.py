"""Command-line harness: train / aggregate / selfcheck / ablate / plot.

Configs are YAML key-value files validated up front (all problems reported
at once); CLI flags override file values. Runs are laid out as
<output_dir>/<env>/seed<k>/ with a manifest.json recording the config hash,
per-seed status, and the complete file inventory. Errors exit nonzero with
a machine-readable JSON object on stderr.

The DESKRL_OUTPUT_ROOT environment variable sets the default output root.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np
import yaml

from . import __version__
from .agents import PRESETS, AgentHyperparams, preset
from .envs import ENV_REGISTRY
from .report import build_report, render_svg
from .selfcheck import run_selfcheck
from .stats import final_score
from .trainer import TrainConfig, train

__all__ = ["main", "load_run_config", "RunConfig"]

_CONFIG_DEFAULTS = {
    "num_train_levels": 50,
    "eval_interval": 8192,
    "eval_episodes": 10,
    "num_envs": 8,
    "obs_size": 16,
    "eval_mode": "thompson",
    "checkpoint_interval": 0,
    "window": 100,
    "hyperparam_overrides": {},
    "output_dir": None,
}


@dataclasses.dataclass
class RunConfig:
    preset: str
    envs: list[str]
    seeds: list[int]
    total_steps: int
    num_train_levels: int
    eval_interval: int
    eval_episodes: int
    num_envs: int
    obs_size: int
    eval_mode: str
    checkpoint_interval: int
    window: int
    hyperparam_overrides: dict
    output_dir: str | None

    def hyperparams(self) -> AgentHyperparams:
        hp = preset(self.preset)
        if self.hyperparam_overrides:
            hp = dataclasses.replace(hp, **self.hyperparam_overrides)
        hp.validate()
        return hp

    def resolved_output_dir(self) -> str:
        if self.output_dir:
            return self.output_dir
        root = os.environ.get("DESKRL_OUTPUT_ROOT", "runs")
        return os.path.join(root, self.preset)

    def canonical(self) -> dict:
        d = dataclasses.asdict(self)
        d["hyperparams"] = dataclasses.asdict(self.hyperparams())
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Load and fully validate a run config; raises with every problem listed."""
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a mapping")
    raw = {**_CONFIG_DEFAULTS, **raw, **(overrides or {})}

    problems: list[str] = []
    if not raw.get("preset"):
        problems.append("missing required field: preset")
    elif raw["preset"] not in PRESETS:
        problems.append(f"unknown preset {raw['preset']!r}; known: {sorted(PRESETS)}")
    envs = raw.get("envs")
    if not envs or not isinstance(envs, list):
        problems.append("missing required field: envs (non-empty list)")
    else:
        for e in envs:
            if e not in ENV_REGISTRY:
                problems.append(f"unknown env {e!r}; known: {sorted(ENV_REGISTRY)}")
    seeds = raw.get("seeds")
    if not seeds or not isinstance(seeds, list):
        problems.append("missing required field: seeds (non-empty list)")
    elif len(set(seeds)) != len(seeds):
        problems.append("seeds must be distinct")
    if not isinstance(raw.get("total_steps"), int) or raw.get("total_steps", 0) <= 0:
        problems.append("total_steps must be a positive integer")
    for key in ("num_train_levels", "eval_interval", "eval_episodes",
                "num_envs", "obs_size", "window"):
        if not isinstance(raw.get(key), int) or raw[key] <= 0:
            problems.append(f"{key} must be a positive integer")
    if raw.get("eval_mode") not in ("thompson", "mean"):
        problems.append("eval_mode must be 'thompson' or 'mean'")
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems))

    known = set(_CONFIG_DEFAULTS) | {"preset", "envs", "seeds", "total_steps"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config fields: {sorted(unknown)}")
    cfg = RunConfig(
        preset=raw["preset"], envs=list(envs), seeds=[int(s) for s in seeds],
        total_steps=raw["total_steps"], num_train_levels=raw["num_train_levels"],
        eval_interval=raw["eval_interval"], eval_episodes=raw["eval_episodes"],
        num_envs=raw["num_envs"], obs_size=raw["obs_size"],
        eval_mode=raw["eval_mode"], checkpoint_interval=raw["checkpoint_interval"],
        window=raw["window"], hyperparam_overrides=raw["hyperparam_overrides"] or {},
        output_dir=raw["output_dir"])
    cfg.hyperparams()  # raises on inconsistent overrides
    return cfg


def _write_manifest(out_dir, cfg: RunConfig, statuses: dict, inventory: dict) -> None:
    manifest = {
        "artifact_version": __version__,
        "config_hash": cfg.config_hash(),
        "config": cfg.canonical(),
        "status": {f"{e}/seed{s}": statuses.get((e, s), "pending")
                   for e in cfg.envs for s in cfg.seeds},
        "files": {f"{e}/seed{s}": inventory.get((e, s), [])
                  for e in cfg.envs for s in cfg.seeds},
    }
    manifest["files"]["."] = ["manifest.json", "config.yaml"]
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def run_training(cfg: RunConfig, quiet: bool = False) -> str:
    """Execute every (env, seed) cell of the run grid; returns the run dir."""
    out_dir = cfg.resolved_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.yaml"), "w") as f:
        yaml.safe_dump(cfg.canonical(), f, sort_keys=True)
    hp = cfg.hyperparams()
    statuses: dict = {}
    inventory: dict = {}
    _write_manifest(out_dir, cfg, statuses, inventory)
    for env in cfg.envs:
        for seed in cfg.seeds:
            statuses[(env, seed)] = "running"
            _write_manifest(out_dir, cfg, statuses, inventory)
            tc = TrainConfig(
                env=env, seed=seed, total_steps=cfg.total_steps,
                num_envs=cfg.num_envs, num_train_levels=cfg.num_train_levels,
                eval_interval=cfg.eval_interval, eval_episodes=cfg.eval_episodes,
                eval_mode=cfg.eval_mode, obs_size=cfg.obs_size,
                checkpoint_interval=cfg.checkpoint_interval)
            try:
                summary = train(tc, hp, os.path.join(out_dir, env, f"seed{seed}"))
            except Exception:
                statuses[(env, seed)] = "failed"
                _write_manifest(out_dir, cfg, statuses, inventory)
                raise
            statuses[(env, seed)] = "done"
            inventory[(env, seed)] = summary["files"]
            _write_manifest(out_dir, cfg, statuses, inventory)
            if not quiet:
                print(f"[train] {cfg.preset} {env} seed{seed}: "
                      f"{summary['steps']} steps, {summary['updates']} updates")
    return out_dir


# -- subcommands ------------------------------------------------------------

def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = yaml.safe_load(value)
    return out


def cmd_train(args) -> int:
    overrides = _parse_overrides(args.set)
    if args.preset:
        overrides["preset"] = args.preset
    cfg = load_run_config(args.config, overrides)
    run_dir = run_training(cfg)
    print(f"[train] run complete: {run_dir}")
    return 0


def cmd_aggregate(args) -> int:
    agent_dirs = {}
    for entry in args.run_dirs:
        if "=" in entry:
            label, path = entry.split("=", 1)
        else:
            label, path = os.path.basename(os.path.normpath(entry)), entry
        agent_dirs[label] = path
    report = build_report(agent_dirs, window=args.window,
                          num_resamples=args.resamples,
                          stratified=not args.joint_bootstrap)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    with open(os.path.join(args.out, "report.svg"), "w") as f:
        f.write(render_svg(report))
    for label, agent in report["agents"].items():
        m = agent["metrics"]
        print(f"[aggregate] {label}: median {m['median']:.3f} iqm {m['iqm']:.3f} "
              f"mean {m['mean']:.3f} gap {m['optimality_gap']:.3f}")
    ref = report["full_scale_reference"]
    print("[aggregate] full-scale reference (baseline -> scaled): "
          + " ".join(f"{k} {v['baseline']:.2f}->{v['scaled']:.2f}"
                     for k, v in ref.items()))
    print(f"[aggregate] wrote {args.out}/report.json and report.svg")
    return 0


def cmd_selfcheck(args) -> int:
    mutations = set(args.mutate or [])
    results = run_selfcheck(mutations)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"[selfcheck] {'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    print(f"[selfcheck] {len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, _parse_overrides(args.set))
    presets = ["ppo", "ppo3d", "vsop", "vsop3d"]
    run_dirs = {}
    root = cfg.resolved_output_dir()
    # hyperparam_overrides apply to every preset alike, so paired
    # comparisons stay apples-to-apples even at reduced budgets
    for name in presets:
        sub = dataclasses.replace(cfg, preset=name,
                                  output_dir=os.path.join(root, name))
        run_dirs[name] = run_training(sub)

    from .report import collect_run_scores
    scores = {name: collect_run_scores(run_dirs[name], cfg.window)[0]
              for name in presets}
    comparisons = [("ppo3d", "ppo"), ("vsop3d", "vsop")]
    result = {"budget_steps": cfg.total_steps, "envs": cfg.envs,
              "seeds": cfg.seeds, "pairs": {}}
    for new, base in comparisons:
        table = {}
        for env in cfg.envs:
            deltas = [scores[new][(env, s)] - scores[base][(env, s)]
                      for s in cfg.seeds]
            table[env] = {
                "per_seed_delta": deltas,
                "signs": ["+" if d > 0 else "-" if d < 0 else "0" for d in deltas],
                "wins": int(sum(d > 0 for d in deltas)),
            }
        result["pairs"][f"{new}_vs_{base}"] = table
    out_path = os.path.join(root, "ablation.json")
    with open(out_path, "w") as f:
        json.dump(result, f, indent=1, sort_keys=True)
    for pair, table in result["pairs"].items():
        for env, row in table.items():
            print(f"[ablate] {pair} {env}: signs {' '.join(row['signs'])} "
                  f"({row['wins']}/{len(cfg.seeds)} seeds improved)")
    print(f"[ablate] wrote {out_path}")
    return 0


def cmd_plot(args) -> int:
    with open(args.report) as f:
        report = json.load(f)
    out = args.out or os.path.join(os.path.dirname(args.report), "report.svg")
    with open(out, "w") as f:
        f.write(render_svg(report))
    print(f"[plot] wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deskrl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the (env x seed) training grid from a config")
    t.add_argument("config")
    t.add_argument("--preset", choices=sorted(PRESETS), help="override the config preset")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field")
    t.set_defaults(fn=cmd_train)

    a = sub.add_parser("aggregate", help="aggregate completed runs into a metrics report")
    a.add_argument("run_dirs", nargs="+", metavar="LABEL=DIR")
    a.add_argument("--out", default="report")
    a.add_argument("--window", type=int, default=100)
    a.add_argument("--resamples", type=int, default=2000)
    a.add_argument("--joint-bootstrap", action="store_true",
                   help="resample (seed, env) cells jointly instead of per-env seeds")
    a.set_defaults(fn=cmd_aggregate)

    s = sub.add_parser("selfcheck", help="run the fast oracle battery")
    s.add_argument("--mutate", action="append", metavar="OP",
                   help="deliberately corrupt an op (test fixture)")
    s.set_defaults(fn=cmd_selfcheck)

    ab = sub.add_parser("ablate", help="ppo vs ppo3d vs vsop vs vsop3d comparison")
    ab.add_argument("config")
    ab.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ab.set_defaults(fn=cmd_ablate)

    pl = sub.add_parser("plot", help="re-render the SVG figure from a report.json")
    pl.add_argument("report")
    pl.add_argument("--out")
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # uniform machine-readable failure surface
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
