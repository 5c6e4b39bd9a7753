"""
Rejection ABC baselines on the boom-and-bust model
==================================================

Two ways to decide which simulated series resemble the observed one:
Euclidean distance between standardized summary statistics, or the
2-Wasserstein distance between the raw values seen as point clouds.
Both keep the closest 1% of the table.
"""
import numpy as np

from bayesgan.abc import run_abc
from bayesgan.models import get_model
from bayesgan.reftable import PriorSampler, generate_table
from bayesgan.rng import rng_stream

model = get_model("boom_bust")
x0 = model.simulate(model.theta0, rng_stream(0))[0]
table = generate_table(PriorSampler(model.prior), model, 20_000, seed=1)
print(f"{table.T} simulated series of length {table.d_x}")

for method in ("ss", "w2"):
    accepted, meta = run_abc(model, table, x0, method, q=0.01)
    mean = accepted.mean(0)
    print(f"{method}: kept {meta['accepted']} rows")
    for name, m, s, t in zip(model.param_names, mean, accepted.std(0), model.theta0):
        print(f"    {name:>6}: {m:8.3f} +- {s:.3f}   (true {t})")

# the prior spread, to judge how much each method learned
prior = model.prior.sample(rng_stream(2), 5000)
print("prior sd:", np.round(prior.std(0), 3))
