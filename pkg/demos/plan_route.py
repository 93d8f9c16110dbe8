"""Route a robot across a room while avoiding weak-coverage cells.

Run: python demos/plan_route.py
"""
import numpy as np

from urfgs.planner import PlanningGrid, cell_power_map, improvement_rate, plan_path, rank_aps, shortest_path
from urfgs.scene.synthetic import Rect, gaussians_from_surfaces

# a 6 m x 6 m floor with a metal partition that shadows part of the room
partition = Rect([3.0, 2.0, 1.0], [1.0, 0, 0], [0, 1, 0], (1.0, 2.0), albedo=(0.9, 0.9, 0.9),
                 metallic=0.9, roughness=0.3)
scene = gaussians_from_surfaces([partition], spacing=0.1)

cands = np.array([[1.0, 1.0, 2.0], [5.0, 1.0, 2.0], [1.0, 5.0, 2.0]])
rx = np.array([[x + 0.5, y + 0.5, 1.0] for x in range(0, 6, 2) for y in range(0, 6, 2)])
rep = rank_aps(cands, rx, scene, 2.4e9)
print("AP ranking by mean dBm:", [(int(i), round(float(rep.mean_power_dbm[i]), 1)) for i in rep.order])

# serve the room from the weakest AP so the partition's shadow matters
tx = cands[rep.worst]
power = cell_power_map(scene, tx, 2.4e9, (6, 6), height=1.0, subsample=2)
print("cell power, dBm (row = y, col = x):")
print(np.round(power).astype(int))
# both endpoints sit on the shadowed left edge
grid = PlanningGrid(power, (0, 0), (5, 0), -100.0, 14, 0.2)
thr = grid.power_threshold
base, radio = shortest_path(grid), plan_path(grid)
# walks may revisit cells; spare steps spent on strong cells lower the failure fraction
print(f"threshold {thr:.1f} dBm")
print("shortest path    ", base.path, f"fails on {100 * base.failure_fraction:.0f}% of cells")
print("radio-aware path ", radio.path, f"fails on {100 * radio.failure_fraction:.0f}% of cells")
print(f"improvement rate {improvement_rate(base.path, radio.path, grid):.1f}%")
