"""
How small can the minibatch be?
===============================

Run SGVB over a small grid of step-size settings and minibatch fractions,
giving each run the wall-clock time of one CAVI fit, then compare the
full-network bound reached.  Very small batches rarely finish in time.
"""

# %%
import numpy as np

from sbmvi.cavi import CaviConfig
from sbmvi.core import Hyperparams
from sbmvi.experiments import measure_cavi_budget, sweep
from sbmvi.netgen import generate, load_preset
from sbmvi.sgvb import step_size

# Robbins-Monro steps: slower decay (small kappa) keeps the steps larger.
for kappa in (0.6, 1.0):
    print(f"kappa={kappa}:", np.round([step_size(t, 1.0, kappa) for t in (1, 10, 100, 1000)], 4))

# %%
net, _ = generate(load_preset("sim7-easy"))
hp = Hyperparams(K=20)
budget, _ = measure_cavi_budget(net, hp, CaviConfig(), runs=2)
print(f"budget per run: {budget:.2f}s")

omegas = [0.05, 0.15, 0.25, 0.5]
rows = sweep(net, hp, kappas=[0.6], taus=[1.0], omegas=omegas, n_restarts=4, budget_seconds=budget)

# %%
for w in omegas:
    cell = [r for r in rows if r["omega"] == w]
    print(f"omega={w:<5} median bound {np.median([r['full_elbo'] for r in cell]):10.1f}  "
          f"statuses {sorted({r['status'] for r in cell})}")
