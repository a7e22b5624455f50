"""How many corrected points to send before asking the policy again.

Sending few points re-plans often and crawls; sending the whole batch
commits to a plan for longer.  This sweep runs the Middle scenario for a
few values of n.

    python3 demos/03_n_sweep.py 20
"""

import sys

from qpguard.harness import load_config, n_sweep
from qpguard.ikinqp import n_points

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 20
cfg = load_config("middle").with_(episodes=episodes)
m = n_points(cfg.corrector)

for row in n_sweep(cfg, [1, 3, (m + 1) // 2, 8, m]):
    note = "  <- whole batch, flagged" if row.risk else ""
    print(f"n={row.n:<3} collisions={row.collision_rate:5.1f}%  success={row.success_rate:5.1f}%  "
          f"mean time={row.mean_episode_time:5.2f}s  closest={row.min_proximity:.4f} m  "
          f"below buffer={row.buffer_violations}{note}")
