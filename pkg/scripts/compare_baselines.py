#!/usr/bin/env python3
"""Compare the coordinated controller against the three baselines at the
desk comparison point (20 radios, 8 users, 10 Mbps floors).

Usage: python scripts/compare_baselines.py [checkpoint.npz] [outdir]
"""
import sys

import numpy as np

from cforan import mappo, runtime, scenarios

ckpt = sys.argv[1] if len(sys.argv) > 1 else "desk_policy.npz"
outdir = sys.argv[2] if len(sys.argv) > 2 else "out/compare"

scenario = scenarios.desk_compare_scenario()
policy, _ = mappo.load_checkpoint(ckpt)

print(f"{'mode':<12} {'active':>6} {'fraction':>9} {'violations':>11} {'loops':>6}")
for mode in runtime.MODES:
    record = runtime.run_scenario(scenario, mode, policy=policy)
    runtime.export_metrics(record, outdir)
    final = record.snapshots[-1]
    viol = float(np.max(final["upsilon"]))
    print(f"{mode:<12} {final['active_count']:>6} "
          f"{final['active_fraction']:>9.2f} {viol:>11.2f} "
          f"{len(record.snapshots):>6}")
