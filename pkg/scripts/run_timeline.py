#!/usr/bin/env python3
"""Run the scripted intent timeline (energy saving at loop 10, utility
maximization at loop 40) and export the rate/activation series.

Usage: python scripts/run_timeline.py [checkpoint.npz] [outdir]
"""
import sys

from cforan import mappo, memory as memmod, runtime, scenarios

ckpt = sys.argv[1] if len(sys.argv) > 1 else "timeline_policy.npz"
outdir = sys.argv[2] if len(sys.argv) > 2 else "out/timeline"

scenario = scenarios.intent_timeline_scenario()
policy, _ = mappo.load_checkpoint(ckpt)
store = memmod.ExperienceStore(scenario.memory)
record = runtime.run_scenario(scenario, "proposed", policy=policy, store=store)
paths = runtime.export_metrics(record, outdir)

r3 = [s["rates_mbps"][2] for s in record.snapshots]
act = [s["active_count"] for s in record.snapshots]
print("loop  r3 (Mbps)  active  decision")
for s in record.snapshots:
    print(f"{s['loop']:4d}  {s['rates_mbps'][2]:9.1f}  {s['active_count']:6d}"
          f"  {s['decision']}")
print(f"\nmin r3 in the energy-saving window: {min(r3[9:39]):.1f} Mbps")
print(f"series written to {paths['series']}")
