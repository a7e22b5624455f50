"""Baseline against corrected execution on the three bundled scenarios.

Each scenario runs the greedy reaching policy twice on the same seeds: once
sending its actions straight to the joint controller and once through the
corrector.  Pass an episode count to shorten the run (default 20).

    python3 demos/02_scenario_comparison.py 20
"""

import sys

from qpguard.harness import SCENARIOS, compare, load_config

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 20

print(f"{'scenario':<14} {'mode':<10} {'collisions':>10} {'success':>8} {'closest':>9} {'time':>7}")
for name in SCENARIOS:
    base, corr = compare(load_config(name).with_(episodes=episodes))
    for label, s in (("baseline", base), ("corrected", corr)):
        closest = f"{s.min_proximity_overall:.4f}" if s.min_proximity_overall >= 0 else "contact"
        print(f"{name:<14} {label:<10} {s.collision_rate:>9.0f}% {s.success_rate:>7.0f}% "
              f"{closest:>9} {s.mean_episode_time:>6.2f}s")
