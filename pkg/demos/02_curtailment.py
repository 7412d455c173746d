"""Curtailment: measured power stops telling the truth, estimates do not.

Run with ``python demos/02_curtailment.py``.
"""

# %%
import numpy as np

from pvestim.estimators import estimate_series
from pvestim.evaluation import compute_metrics, estimated_max_power
from pvestim.io import load_plant
from pvestim.simulate import CurtailmentWindow, ScenarioSpec, simulate

plant = load_plant()

# %%
# Clear morning; between 10:00 and 11:00 the grid operator caps the
# converters at 40% of what is available.
cap = CurtailmentWindow(10 * 3600, 11 * 3600, fraction=0.4)
sim = simulate(ScenarioSpec(start=8 * 3600, duration=4 * 3600, curtailment=(cap,)), plant)
inside = sim.curtailed
print("curtailed samples: %d of %d" % (inside.sum(), len(inside)))

# %%
# The converter leaves the maximum power point for the high-voltage side.
v, i = sim.clean.v, sim.clean.i
k = np.argmax(inside)
print("at 10:00  v = %.1f V (was %.1f V a second earlier)" % (v[k], v[k - 1]))

# %%
measured = v * i * plant.topology.converter_count
est = estimate_series(sim.measured, "analytical", plant)
p_hat = estimated_max_power(est.s_hat, est.t_used, plant)
for label, p in (("measured v*i", measured), ("analytical", p_hat)):
    rep = compute_metrics(p[inside], sim.p_max_true[inside])
    print("%-14s nME during the cap: %7.2f %%" % (label, rep.nme))
