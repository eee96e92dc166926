"""`metanav` command line: train, evaluate, map and compare policies."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import analysis
from .config import ConfigFileError, ExperimentConfig, dump_config, load_config_file
from .meta import (
    MetaConfig,
    handcrafted_selector,
    load_meta_checkpoint,
    load_option,
    run_hierarchical,
    save_meta_checkpoint,
    train_meta,
)
from .nn import load_checkpoint, save_checkpoint
from .rl import EpisodeStats, GreedyPolicy, evaluate, train_low_level
from .sim.env import load_maze_env, load_terrain_env


class UsageError(Exception):
    pass


def make_env(cfg: ExperimentConfig):
    if cfg.env_kind == "maze":
        return load_maze_env(cfg.maze, cfg.max_steps)
    return load_terrain_env(cfg.terrain, cfg.max_steps)


def _prepare(args, mode: str) -> tuple[ExperimentConfig, Path]:
    overrides = {"mode": mode}
    for key in ("maze", "terrain", "policy"):
        if getattr(args, key, None):
            overrides[key] = getattr(args, key)
    if getattr(args, "episodes", None) is not None:
        overrides["episodes"] = args.episodes
    if getattr(args, "options", None):
        overrides["options"] = args.options
    if args.out:
        overrides["output_dir"] = args.out
    if overrides.get("maze"):
        overrides.setdefault("terrain", "")
    elif overrides.get("terrain"):
        overrides.setdefault("maze", "")
    cfg = load_config_file(args.config, overrides)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.cfg").write_text(dump_config(cfg), encoding="utf-8")
    return cfg, out


def cmd_train_low(args) -> int:
    cfg, out = _prepare(args, "train-low")
    params, opt, log = train_low_level(make_env(cfg), cfg.train_config())
    save_checkpoint(params, opt, out / "policy.ckpt")
    log.to_csv(out / "training_log.csv")
    print(f"wrote {out / 'policy.ckpt'} after {len(log.episodes)} episodes")
    return 0


def _meta_config(cfg: ExperimentConfig) -> MetaConfig:
    base = cfg.train_config()
    options = tuple(load_option(ref) for ref in cfg.options)
    return MetaConfig(**{**base.__dict__, "option_horizon": cfg.option_horizon, "options": options})


def cmd_train_meta(args) -> int:
    cfg, out = _prepare(args, "train-meta")
    mcfg = _meta_config(cfg)
    params, opt, log = train_meta(make_env(cfg), mcfg)
    save_meta_checkpoint(params, opt, out / "meta.ckpt", mcfg.options, mcfg.option_horizon)
    log.to_csv(out / "training_log.csv")
    print(f"wrote {out / 'meta.ckpt'} after {len(log.episodes)} episodes")
    return 0


def _is_meta(path) -> bool:
    _, _, extra = load_checkpoint(path, with_extra=True)
    return "meta.options" in extra


def cmd_eval(args) -> int:
    cfg, out = _prepare(args, "eval")
    env = make_env(cfg)
    if args.handcrafted:
        options = [load_option(ref) for ref in cfg.options]
        if len(options) < 2:
            raise UsageError("--handcrafted needs --options naming one option per theme")
        selector = handcrafted_selector({i + 1: i for i in range(len(options))})
        stats = run_hierarchical(env, selector, options, cfg.option_horizon, cfg.episodes, cfg.eval_seed, cfg.gamma)
    elif not cfg.policy:
        raise UsageError("eval needs --policy or --handcrafted")
    elif _is_meta(cfg.policy):
        params, _, options, horizon = load_meta_checkpoint(cfg.policy)
        stats = run_hierarchical(env, params, options, horizon, cfg.episodes, cfg.eval_seed, cfg.gamma)
    else:
        params, _ = load_checkpoint(cfg.policy)
        stats = evaluate(GreedyPolicy(params), env, cfg.episodes, cfg.eval_seed)
    analysis.write_stats_csv(stats, out / "stats.csv")
    row = analysis.summarize(stats, Path(cfg.policy).stem if cfg.policy else "handcrafted")
    print(f"mean return {row.mean_return:.1f}, success {row.success_pct:.1f}% over {len(stats)} episodes")
    return 0


def cmd_map(args) -> int:
    cfg, out = _prepare(args, "map")
    if cfg.env_kind != "maze":
        raise UsageError("activation maps need a maze")
    params, _, _, _ = load_meta_checkpoint(cfg.policy, resolve=False)
    env = make_env(cfg)
    amap = analysis.activation_map_from_query(env.world, params)
    csv_path, ppm_path = analysis.export_map(amap, out / "activation_map")
    print(f"wrote {csv_path} and {ppm_path}")
    return 0


def read_stats_csv(path) -> list[EpisodeStats]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EpisodeStats(float(d["return"]), int(d["steps"]), d["success"] == "1") for d in csv.DictReader(fh)]


def cmd_compare(args) -> int:
    if len(args.entries) < 2:
        raise UsageError("compare needs at least two entries")
    entries = []
    for item in args.entries:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"expected name=stats.csv, got {item!r}")
        entries.append((name, read_stats_csv(path)))
    rows = analysis.compare(entries)
    print(analysis.format_table(rows))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(analysis.table_csv(rows), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metanav", description="Hierarchical DQN navigation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, env=True):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        if env:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--map", dest="maze", help="maze map file")
            g.add_argument("--track", dest="terrain", help="terrain track file")

    sp = sub.add_parser("train-low", help="train a low-level policy")
    common(sp)
    sp.set_defaults(func=cmd_train_low)

    sp = sub.add_parser("train-meta", help="train a meta-policy over options")
    common(sp)
    sp.add_argument("--options", help="comma-separated checkpoints or builtin names")
    sp.set_defaults(func=cmd_train_meta)

    sp = sub.add_parser("eval", help="greedy evaluation; writes stats.csv")
    common(sp)
    sp.add_argument("--policy", help="low-level or meta checkpoint")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--options", help="comma-separated options for --handcrafted")
    sp.add_argument("--handcrafted", action="store_true", help="theme i runs option i-1")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("map", help="activation map of a meta checkpoint")
    common(sp)
    sp.add_argument("--policy", help="meta checkpoint")
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("compare", help="comparison table from stats CSVs")
    sp.add_argument("entries", nargs="+", metavar="NAME=STATS.csv")
    sp.add_argument("--out", help="directory for comparison.csv")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigFileError) as e:
        print(f"metanav: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as e:
        print(f"metanav: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
