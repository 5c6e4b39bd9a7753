"""
Gaussian toy: a conditional WGAN as a posterior sampler
=======================================================

Four 2-d Gaussian points depend on five parameters.  theta3 and theta4
enter only through their squares, so the posterior has four symmetric modes.
We train a small B-GAN on a prior-predictive reference table and compare its
draws with a Metropolis-Hastings reference run on the exact likelihood.

Runs in about ten minutes on one core.  Pass a larger epoch count as the
first argument to get closer to desk scale (300 epochs, a few hours).
"""
import logging
import sys

import numpy as np

from bayesgan.bgan import TrainConfig, sample_posterior, train_bgan
from bayesgan.evaluation import mmd, true_posterior_toy
from bayesgan.models import get_model
from bayesgan.reftable import PriorSampler, generate_table
from bayesgan.rng import rng_stream

logging.basicConfig(level=logging.INFO, format="%(message)s")
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20

# the observed data: one simulation at the true parameter
model = get_model("gauss_toy")
x0 = model.simulate(model.theta0, rng_stream(0))[0]
print("theta0:", model.theta0)
print("x0:    ", np.round(x0, 3))

# reference table of (theta, X) pairs drawn from the prior predictive
table = generate_table(PriorSampler(model.prior), model, 20_000, seed=1)

# critic and generator, three hidden layers of 128 units each
cfg = TrainConfig(batch_size=1000, epochs=epochs, log_every=5, seed=1)
art = train_bgan(table, cfg)

# x0 enters only now, as the conditioning input of the trained generator
draws = sample_posterior(art, x0, 1000, seed=2)
oracle = true_posterior_toy(x0, 1000, seed=3)

for name, d in (("B-GAN", draws), ("oracle", oracle)):
    print(f"{name:>7}: mean {np.round(d.mean(0), 2)}  P(theta3 > 0) = {(d[:, 2] > 0).mean():.2f}")
print(f"MMD^2 between B-GAN and oracle draws: {mmd(draws, oracle):.4f}")
