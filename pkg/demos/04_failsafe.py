"""What happens when the arm is already too close.

We drop the arm so its tool sits 5 mm from a sphere, well inside the 15 mm
buffer, and ask the corrector for a move toward the sphere.  It refuses the
request and heads for the failsafe preset instead.

    python3 demos/04_failsafe.py
"""

import numpy as np

from qpguard import Scene, default_arm
from qpguard.arm_model import link_frames
from qpguard.geometry import Obstacle, clearance
from qpguard.harness import load_config
from qpguard.ikinqp import Corrector
from qpguard.safe_executor import select_failsafe
from qpguard.shapes import Pose, Sphere

arm = default_arm()
bank = load_config("middle").failsafe

q0 = np.array([0.7, 1.0, 1.1])
Rs, _, _, tip = link_frames(arm, q0)
ball = Obstacle(Sphere(0.03), Pose(tip + Rs[-1][:, 2] * (0.035 + 0.03 + 0.005)), "ball")
scene = Scene((ball,))
print(f"start clearance {clearance(arm, q0, scene):.4f} m (buffer 0.015 m)")
print(f"tool lateral position y = {tip[1]:+.3f} m -> table third '{bank.third(tip[1])}'")

safe = select_failsafe(bank, arm, scene, q0, near_collision=True)
traj = Corrector(arm, scene).correct(q0, np.zeros(3), q0 + [0.0, 0.2, 0.0], safe)
print(f"failsafe used: {traj.used_failsafe}; new target {traj.target}")
for p, d in zip(traj.points, traj.per_point_min_distance):
    print(f"  t={p.t:.2f}  q={np.array2string(p.q, precision=3)}  clearance={d:.4f}")
