"""Analytic bit error rate against slot duration for eight channels.

Each channel combines a wall model with a degradation rate (0 or 20 1/s).
The table shows where the absorbing and reflecting walls trade places
once degradation removes the old molecules.

Run with ``python demos/ber_sweep.py`` (about a minute).
"""

import numpy as np

from cyldmc.analytic_cgf import ABSORBING, CgfSeries, CylinderEnvironment, CylPoint, FreeSpaceSeries
from cyldmc.channel import IsiProfile, ObservationPdf, ReceiverModel
from cyldmc.ook import OokLink, analytic_ber

UM = 1e-6
N = 5e4
source = CylPoint(3 * UM, 0.0, 0.0)
receiver = ReceiverModel(CylPoint(2 * UM, 5 * UM, np.pi / 2), 0.5 * UM)
slots = np.round(np.arange(0.02, 0.201, 0.02), 3)

walls = {"refl": 0.0, "partial": 100 * UM, "abs": ABSORBING, "unb": None}
table = {}
for k_d in (0.0, 20.0):
    for name, k_f in walls.items():
        env = CylinderEnvironment(5 * UM, 1e-9, k_d, 65 * UM, k_f or 0.0)
        series = FreeSpaceSeries(env, source) if k_f is None else CgfSeries(env, source)
        pdf = ObservationPdf(receiver, series, horizon=0.3)
        table[f"{name}/{k_d:g}"] = [
            analytic_ber(OokLink.from_profile(IsiProfile.build(pdf, T, N), N)) for T in slots
        ]

print("T_s    " + "".join(f"{key:>11s}" for key in table))
for i, T in enumerate(slots):
    print(f"{T:<6.2f} " + "".join(f"{v[i]:11.3e}" for v in table.values()))
