"""Latitude sweepout: slice energies, tracked volume and degree.

The slices x -> (sqrt(1 - c^2) x, c) sweep S^3 once, so the tracked volume
ends at 2 pi^2 and the most energetic slice is the equator with D = 4 pi.
"""

import numpy as np

from cmcsphere import build_icosphere, latitude_sweepout
from cmcsphere.energy import dirichlet

mesh = build_icosphere(4)
sw = latitude_sweepout(mesh, S=64)
D = np.array([dirichlet(u) for u in sw.slices])

print(f"slices            {len(sw)}")
print(f"max D / 4pi       {D.max() / (4 * np.pi):.5f}")
print(f"V_end / 2pi^2     {sw.tracked_volumes[-1] / (2 * np.pi ** 2):.10f}")
print(f"degree            {sw.degree}")
for H in (0.0, 0.5, 1.0):
    e = sw.energies(H, 0.05)
    k = int(np.argmax(e))
    print(f"H={H:3.1f}  argmax slice {k:2d}  E_max {e[k]:.4f}")
