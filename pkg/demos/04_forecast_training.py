"""Training a forecaster on curtailed history, with and without reconstruction.

Run with ``python demos/04_forecast_training.py`` (about half a minute).
"""

# %%
from pvestim.forecast import compare_forecasts, make_dataset
from pvestim.io import load_plant

plant = load_plant()

# %%
# Eight synthetic days at 5 s resolution: six for training, two for
# testing, with curtailment windows on three of them.
days = make_dataset(plant, seed=0)
print("curtailed days:", [i for i, d in enumerate(days) if d.curtailed])

# %%
# DF trains on measured power; FF on the estimated maximum power. Every
# forecast is scored against the true maximum power, 5 min ahead.
result = compare_forecasts(plant, days, estimators=("analytical",))
for label, rep in result.reports.items():
    print("%-16s nMAE %.1f %%  (window %d)" % (label, rep.nmae, result.windows[label]))
