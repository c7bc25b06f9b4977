"""Mountain pass from the latitude sweepout to the equatorial minimal sphere.

At H = 0 the string method drives the top slice to a harmonic sphere; the
climbing image is then polished by min-mode climbing along the path tangent.
"""

import time

import numpy as np

from cmcsphere import FlowConfig, build_icosphere, latitude_sweepout, mountain_pass
from cmcsphere.minmax import extract_critical_point

for level in (3, 4):
    t0 = time.time()
    sw = latitude_sweepout(build_icosphere(level), S=64)
    sw2, rec = mountain_pass(sw, 0.0, 0.05)
    cp = extract_critical_point(sw2, rec, FlowConfig(grad_tol=1e-8))
    print(f"level {level}: mountain pass {rec.status} after {len(rec.history) - 1} sweeps, "
          f"omega/4pi {rec.omega / (4 * np.pi):.5f}")
    print(f"  critical point {cp.status}: D/4pi {cp.energy.dirichlet / (4 * np.pi):.5f}, "
          f"cmc {cp.cmc_residual:.2e}, hopf {cp.hopf_residual:.2e}  ({time.time() - t0:.1f}s)")
