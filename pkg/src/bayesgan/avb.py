"""Adversarial variational Bayes refinement (Wasserstein version).

The critic keeps learning the joint distance on the whole proposal table, but
the generator only sees the observed data: every generator batch pairs fresh
noise with x0.  The generator starts from an already trained artifact, usually
the two-step one.
"""
import numpy as np

from .bgan import GeneratorArtifact, build_nets, run_wasserstein, sample_posterior
from .refine import WeightedPosterior, default_weight_method, proposal_weights
from .rng import rng_stream


def train_avb(table, x0, init, cfg, critic_init="he_uniform", on_generator_batch=None):
    """Refine the generator of ``init`` locally at ``x0``.

    The critic is built fresh from ``cfg`` with ``critic_init`` ("zeros" leaves a
    ReLU critic stuck at a constant), or copied from ``init`` when
    ``critic_init="init"``.  The table is mapped with the init artifact's
    standardizer so the generator keeps its input scale.
    """
    if table.d_theta != init.d_theta or table.d_x != init.d_x:
        raise ValueError("table and init generator dimensions differ")
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.size != init.d_x:
        raise ValueError(f"observed data has length {x0.size}, generator expects {init.d_x}")
    gen = init.net.copy()
    if critic_init == "init":
        # warm start from the critic trained alongside the init generator
        if init.critic is None or init.critic.d_in != init.d_theta + init.d_x:
            raise ValueError("init artifact carries no usable critic")
        critic = init.critic.copy()
    else:
        ccfg = cfg if critic_init == cfg.init else _with_init(cfg, critic_init)
        _, critic = build_nets(init.d_theta, init.d_x, init.d_z, ccfg, rng_stream(cfg.seed, 1))
    std = init.standardizer
    if std is None:
        theta, x, x0s = table.theta, table.x, x0
    else:
        theta, x, x0s = std.apply_theta(table.theta), std.apply_x(table.x), std.apply_x(x0)
    history = run_wasserstein(theta, x, cfg, gen, critic, rng_stream(cfg.seed, 2),
                              x0_cond=x0s, on_generator_batch=on_generator_batch)
    return GeneratorArtifact(gen, init.d_theta, init.d_x, init.d_z, init.standardizer,
                             {"method": "bgan-vb", "config": cfg.to_dict(), "train_config_hash": cfg.digest(),
                              "table": table.fingerprint(), "simulator": table.simulator,
                              "init": init.fingerprint(), "critic_init": critic_init},
                             history, critic)


def _with_init(cfg, init):
    d = cfg.to_dict()
    d["init"] = init
    return type(cfg)(**d)


def avb_posterior(artifact, x0, prior, proposal, method=None, M=1000, seed=0, n_density=2000):
    """Draws g(Z_i, x0) reweighted by prior / proposal, as in the two-step method.

    ``proposal`` is whatever produced the table the critic was trained on: a
    generator artifact or an object with an exact ``logpdf``.
    """
    draws = sample_posterior(artifact, x0, M, seed)
    method = method or default_weight_method(artifact.d_theta)
    w, tag = proposal_weights(method, prior, proposal, x0, draws, seed, n_density)
    return WeightedPosterior(draws, w, tag)
