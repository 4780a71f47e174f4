"""Concentration at a fixed probe for the four wall models.

Prints C(t) for a reflecting, partially absorbing and absorbing wall next to
the unbounded medium, with degradation 20 1/s and drift 65 um/s. The
partially absorbing wall sits above the free-space curve shortly after the
peak and drops below it later.

Run with ``python demos/boundary_profiles.py``.
"""

import numpy as np

from cyldmc.analytic_cgf import ABSORBING, CgfSeries, CylinderEnvironment, CylPoint, FreeSpaceSeries, cgf

UM = 1e-6
source = CylPoint(3 * UM, 0.0, 0.0)
probe = CylPoint(2 * UM, 5 * UM, np.pi / 2)
times = np.array([0.005, 0.01, 0.02, 0.04, 0.07, 0.1, 0.15, 0.2])

walls = {"reflective": 0.0, "partial": 100 * UM, "absorbing": ABSORBING}
curves = {}
for name, k_f in walls.items():
    env = CylinderEnvironment(5 * UM, 1e-9, degradation=20.0, velocity=65 * UM, boundary_rate=k_f)
    curves[name] = cgf(probe, times, CgfSeries(env, source))
free = FreeSpaceSeries(CylinderEnvironment(5 * UM, 1e-9, degradation=20.0, velocity=65 * UM), source)
curves["unbounded"] = free.concentration(probe.rho, probe.z, probe.phi, times)

print("t_s      " + "".join(f"{name:>13s}" for name in curves))
for i, t in enumerate(times):
    print(f"{t:<8.3f} " + "".join(f"{c[i]:13.4e}" for c in curves.values()))
