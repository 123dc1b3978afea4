"""Command line entry points.

Subcommands:
  simulate   one coupled communication + control run, summary JSON + CSVs
  train      PPO training of the merging policy, checkpoint + trace CSV
  evaluate   roll out a checkpoint (or the CACC baseline) over seeds
  metrics    recompute AOR / PEOR tables from a per-event CSV
  compare    paired standard vs enhanced scheduling runs

Exit codes: 0 ok, 2 bad usage or configuration, 3 numeric failure at runtime.
"""

import argparse
import csv
import json
import sys
from dataclasses import replace

from . import config as cfglib
from .metrics import EVENT_FIELDS, MetricGrid, recount_events, summarize
from .scenario import ScenarioConfig, compare_schemes, dump_summary, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _apply_overrides(cfg, args):
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(cfglib.load_kv(args.config))
    overrides.update(cfglib.parse_pairs(args.set or []))
    return cfglib.apply(cfg, overrides)


def _write_rows(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _cmd_simulate(args) -> int:
    cfg = ScenarioConfig(seed=args.seed, scheme=args.scheme)
    cfg = _apply_overrides(cfg, args)
    policy = None
    if args.policy:
        from .rl.ppo import load_checkpoint

        policy, _, _ = load_checkpoint(args.policy)
    res = run_scenario(cfg, policy=policy, collect_events=bool(args.events_out))
    if args.events_out:
        _write_rows(args.events_out, EVENT_FIELDS, res.metric_events)
    if args.mac_out:
        _write_rows(args.mac_out, ("t_ms", "vid", "event", "subframe",
                                   "subchannel", "rc"), res.mac_events)
    if args.traj_out:
        _write_rows(args.traj_out, ("t_ms", "vid", "x", "y", "v", "phi",
                                    "road", "accel", "steer", "controller"),
                    res.trajectories)
    text = dump_summary(res.summary)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _cmd_train(args) -> int:
    from .rl.ppo import TrainConfig, save_checkpoint, train

    cfg = TrainConfig(seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    cfg = _apply_overrides(cfg, args)

    def progress(row):
        print(f"epoch {row.epoch}: episodes={row.episodes} "
              f"reward={row.mean_traj_reward:.1f} success={row.success_rate:.2f}",
              file=sys.stderr, flush=True)

    policy, value, stats, rng_state = train(cfg, trace_path=args.trace,
                                            progress=progress)
    wall = stats[-1].wall_s if stats else 0.0
    save_checkpoint(args.out, policy, value, cfg, rng_state, wall_s=wall)
    final = stats[-1]
    print(json.dumps({"epochs": len(stats),
                      "final_success_rate": final.success_rate,
                      "final_mean_reward": final.mean_traj_reward}))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .rl.env import TrainEnvConfig
    from .rl.ppo import evaluate, load_checkpoint

    env_cfg = _apply_overrides(TrainEnvConfig(), args)
    policy = None
    if args.checkpoint:
        policy, _, _ = load_checkpoint(args.checkpoint)
    seeds = list(range(args.seed, args.seed + args.episodes))
    results = evaluate(env_cfg, seeds, policy)
    episodes = []
    for r in results:
        episodes.append({"seed": r.seed,
                         "outcomes": {str(k): v for k, v in sorted(r.outcomes.items())},
                         "objective": r.objective,
                         "all_success": r.all_success})
    n_veh = sum(len(r.outcomes) for r in results)
    n_succ = sum(sum(1 for o in r.outcomes.values() if o == "success") for r in results)
    out = {
        "episodes": episodes,
        "vehicles": n_veh,
        "success_rate": n_succ / n_veh if n_veh else None,
        "mean_objective": (sum(r.objective for r in results) / len(results)
                           if results else None),
    }
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _cmd_metrics(args) -> int:
    grid = _apply_overrides(MetricGrid(), args)
    acc = recount_events(args.events, grid)
    text = json.dumps(summarize(acc), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = _apply_overrides(ScenarioConfig(), args)
    seeds = list(range(args.seed, args.seed + args.pairs))
    out = compare_schemes(cfg, seeds)
    paired = out["paired"]
    n_cells = len(paired["aor_wins"]) * len(paired["aor_wins"][0])
    strict = sum(v == paired["pairs"] for row in paired["aor_wins"] for v in row)
    print(f"paired seeds: {paired['pairs']}; AOR cells where enhanced wins "
          f"every pair: {strict}/{n_cells}", file=sys.stderr)
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="v2xmerge", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value file of dotted overrides")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="single dotted override, repeatable")

    sim = sub.add_parser("simulate", help="run one coupled scenario")
    common(sim)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--scheme", choices=["standard", "enhanced"], default="standard")
    sim.add_argument("--policy", help="checkpoint driving the merging area")
    sim.add_argument("--out", help="summary JSON path (default: stdout)")
    sim.add_argument("--events-out", help="per-event metrics CSV")
    sim.add_argument("--mac-out", help="MAC transmission/selection log CSV")
    sim.add_argument("--traj-out", help="per-tick trajectory CSV")
    sim.set_defaults(fn=_cmd_simulate)

    tr = sub.add_parser("train", help="train the merging policy")
    common(tr)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--out", required=True, help="checkpoint output path")
    tr.add_argument("--trace", help="per-epoch trace CSV")
    tr.set_defaults(fn=_cmd_train)

    ev = sub.add_parser("evaluate", help="roll out a policy or the CACC baseline")
    common(ev)
    ev.add_argument("--checkpoint", help="policy checkpoint; omit for the baseline")
    ev.add_argument("--episodes", type=int, default=20)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", help="results JSON path (default: stdout)")
    ev.set_defaults(fn=_cmd_evaluate)

    me = sub.add_parser("metrics", help="recount AOR/PEOR from an events CSV")
    common(me)
    me.add_argument("--events", required=True, help="events CSV from simulate")
    me.add_argument("--out", help="tables JSON path (default: stdout)")
    me.set_defaults(fn=_cmd_metrics)

    cp = sub.add_parser("compare", help="paired standard vs enhanced runs")
    common(cp)
    cp.add_argument("--seed", type=int, default=0, help="first seed of the pairs")
    cp.add_argument("--pairs", type=int, default=5)
    cp.add_argument("--out", help="comparison JSON path (default: stdout)")
    cp.set_defaults(fn=_cmd_compare)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (cfglib.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
