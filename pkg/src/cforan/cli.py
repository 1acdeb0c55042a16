"""Command line entry points: train the activation policy, run or compare
scenario modes, serve the console backend, print the memory accounting."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import envs, mappo, memory as memmod, qlora, runtime, service
from .config import Scenario, load_scenario


def _load_scenario(args) -> Scenario:
    if args.scenario:
        return load_scenario(args.scenario)
    return Scenario()


def _load_policy(path: str | None):
    if not path:
        return None
    params, _ = mappo.load_checkpoint(path)
    return params


def cmd_train(args) -> int:
    from .scenarios import train_scenario_policy

    scenario = _load_scenario(args)
    net = scenario.network
    progress: list = []
    params = train_scenario_policy(scenario, episodes=args.episodes,
                                   seed=args.seed, r_min_mbps=args.floor,
                                   progress=progress)
    mappo.save_checkpoint(args.checkpoint, params, num_users=net.num_users)
    env = envs.make_env(net, np.full(net.num_users, args.floor), seed=0)
    env.redraw_channels = False
    z, viol = envs.evaluate_argmax(env, params)
    for i in range(0, len(progress), max(1, len(progress) // 20)):
        p = progress[i]
        print(f"episode {i + 1}: reward={p['mean_reward']:.3f} "
              f"active={p['active_fraction']:.2f}")
    print(f"saved {args.checkpoint}; argmax policy: {int(z.sum())} active, "
          f"violations {np.round(viol, 2).tolist()}")
    return 0


def cmd_run(args) -> int:
    scenario = _load_scenario(args)
    policy = _load_policy(args.checkpoint)
    store = None
    if args.memory and Path(args.memory).exists():
        store = memmod.ExperienceStore.load(args.memory, scenario.memory)
    record = runtime.run_scenario(scenario, args.mode, policy=policy,
                                  store=store)
    if args.memory and store is not None:
        store.save(args.memory)
    paths = runtime.export_metrics(record, args.outdir)
    print(json.dumps(record.summary(), indent=2))
    print(f"metrics: {paths['series']}")
    return 0


def cmd_compare(args) -> int:
    scenario = _load_scenario(args)
    policy = _load_policy(args.checkpoint)
    results = runtime.compare_modes(scenario, policy)
    for mode, summary in results.items():
        record = summary.pop("record")
        runtime.export_metrics(record, args.outdir)
        print(f"{mode}: active={summary['final_active_count']} "
              f"loops={summary['loops']} "
              f"violations={np.round(summary['final_violations_mbps'], 2).tolist()}")
    return 0


def cmd_serve(args) -> int:
    scenario = _load_scenario(args)
    policy = _load_policy(args.checkpoint)
    runner = runtime.ScenarioRunner(scenario, args.mode, policy=policy)
    handle = service.serve(runner, host=args.host, port=args.port,
                           loop_delay_s=args.loop_delay)
    print(f"serving on http://{args.host}:{handle.port} "
          f"(scenario {scenario.name!r}, mode {args.mode})", flush=True)
    try:
        handle.wait_finished()
        print("run finished; service still answering /state (Ctrl-C to stop)")
        while True:
            import time

            time.sleep(3600)
    except KeyboardInterrupt:
        handle.stop()
    return 0


def cmd_accounting(args) -> int:
    manifest = qlora.load_layer_manifest(args.manifest)
    print(qlora.format_accounting_table(qlora.accounting_report(manifest)))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cforan",
        description="Cell-free O-RAN digital twin with intent-driven control")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the O-RU activation policy")
    p.add_argument("--scenario", help="scenario YAML path")
    p.add_argument("--checkpoint", required=True, help="output checkpoint (.npz)")
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--floor", type=float, default=10.0,
                   help="uniform training rate floor (Mbps)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run one scenario mode")
    p.add_argument("--scenario", help="scenario YAML path")
    p.add_argument("--mode", choices=runtime.MODES, default="proposed")
    p.add_argument("--checkpoint", help="activation checkpoint (.npz)")
    p.add_argument("--memory", help="experience store path (.npz), read+write")
    p.add_argument("--outdir", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run all modes on one scenario")
    p.add_argument("--scenario", help="scenario YAML path")
    p.add_argument("--checkpoint", help="activation checkpoint (.npz)")
    p.add_argument("--outdir", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="serve the console backend")
    p.add_argument("--scenario", help="scenario YAML path")
    p.add_argument("--mode", choices=runtime.MODES, default="proposed")
    p.add_argument("--checkpoint", help="activation checkpoint (.npz)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--loop-delay", type=float, default=0.5,
                   help="seconds between near-RT loops")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("accounting", help="print the deployment memory table")
    p.add_argument("--manifest", help="layer manifest JSON (default: bundled)")
    p.set_defaults(func=cmd_accounting)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
