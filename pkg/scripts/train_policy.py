#!/usr/bin/env python3
"""Train the O-RU activation policy for one of the canned scenarios.

Usage: python scripts/train_policy.py [timeline|desk] [episodes] [out.npz]
"""
import sys

from cforan import mappo, scenarios

name = sys.argv[1] if len(sys.argv) > 1 else "timeline"
episodes = int(sys.argv[2]) if len(sys.argv) > 2 else 600
out = sys.argv[3] if len(sys.argv) > 3 else f"{name}_policy.npz"

scenario = {"timeline": scenarios.intent_timeline_scenario,
            "desk": scenarios.desk_compare_scenario}[name]()
progress = []
params = scenarios.train_scenario_policy(scenario, episodes=episodes,
                                         progress=progress)
mappo.save_checkpoint(out, params, num_users=scenario.network.num_users)
for i in range(0, len(progress), max(1, len(progress) // 15)):
    p = progress[i]
    print(f"episode {i + 1:4d}  reward {p['mean_reward']:+.3f}  "
          f"active {p['active_fraction']:.2f}")
print(f"saved checkpoint to {out}")
