"""Geodesic spheres: mean-curvature convention and Jacobi spectrum.

The least-squares H of the CMC equation reproduces 2 cot r (the sum of the
principal curvatures), and the scalar Jacobi form has index 1 and nullity 3.
"""

import numpy as np

from cmcsphere import build_icosphere, morse_index
from cmcsphere.energy import residual_minimizing_H
from cmcsphere.fields import geodesic_sphere

mesh = build_icosphere(4)
for r in (np.pi / 6, np.pi / 4, np.pi / 3):
    u = geodesic_sphere(mesh, r)
    H = residual_minimizing_H(u)
    rep = morse_index(u, H, 0.0, k=6, which="bh")
    print(f"r={r:.4f}  H*={H:.4f}  2cot r={2 / np.tan(r):.4f}  index {rep.index}  nullity {rep.nullity}  "
          f"eigenvalues {np.round(rep.eigenvalues, 3)}")
