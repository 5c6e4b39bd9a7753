"""Conditional Wasserstein GAN posterior samplers.

The generator g(z, x) maps Gaussian noise and a dataset to a parameter draw;
the critic f(theta, x) scores (parameter, dataset) pairs.  Training contrasts
table pairs (theta_j, X_j) with generated pairs (g(Z_j, X_j), X_j) that keep
the same X_j, so matching the joints matches the conditionals.  Posterior draws
at observed data x0 are g(Z_i, x0) for fresh noise Z_i.
"""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .neural import Adam, backward, backward_params, forward, gradient_penalty, mlp_from_dict, mlp_init, mlp_to_dict
from .reftable import Standardizer, critic_inputs, fit_standardizer, generator_inputs, next_batch
from .rng import rng_stream

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 6400
    epochs: int = 1000
    n_critic: int = 15
    lam: float = 5.0
    lr_g: float = 1e-4
    lr_c: float = 1e-4
    d_z: int = None
    gen_hidden: tuple = (128, 128, 128)
    critic_hidden: tuple = (128, 128, 128)
    activation: str = "relu"
    negative_slope: float = 0.1
    dropout: float = 0.1
    init: str = "he_uniform"
    seed: int = 0
    standardize: bool = False
    log_every: int = 0

    def __post_init__(self):
        self.gen_hidden = tuple(int(w) for w in self.gen_hidden)
        self.critic_hidden = tuple(int(w) for w in self.critic_hidden)
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.lam < 0:
            raise ValueError("penalty weight must be >= 0")
        if self.lr_g <= 0 or self.lr_c <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("need batch_size >= 1 and epochs >= 0")

    def to_dict(self):
        d = asdict(self)
        d["gen_hidden"] = list(self.gen_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# Toy-model settings for the global stage and for the local refinement stages.
GLOBAL_DEFAULTS = TrainConfig()
REFINE_DEFAULTS = TrainConfig(batch_size=1280, n_critic=20, lam=10.0, gen_hidden=(256, 256),
                           critic_hidden=(256, 256))


@dataclass
class GeneratorArtifact:
    net: object
    d_theta: int
    d_x: int
    d_z: int
    standardizer: Standardizer = None
    provenance: dict = field(default_factory=dict)
    history: list = field(default_factory=list)   # (epoch, critic_loss, gen_loss, penalty)
    critic: object = None

    def generate(self, z, x0):
        """Parameter draws g(z_i, x0) on the original parameter scale."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[0] == 0:
            return np.empty((0, self.d_theta))
        x0 = np.asarray(x0, dtype=np.float64).ravel()
        if x0.size != self.d_x:
            raise ValueError(f"observed data has length {x0.size}, generator expects {self.d_x}")
        if self.standardizer is not None:
            x0 = self.standardizer.apply_x(x0)
        xs = np.broadcast_to(x0, (z.shape[0], self.d_x))
        theta = forward(self.net, generator_inputs(z, xs), mode="eval")[0]
        if self.standardizer is not None:
            theta = self.standardizer.invert_theta(theta)
        return theta

    def fingerprint(self):
        h = hashlib.sha256()
        for p in self.net.params():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self):
        return {
            "format": "bayesgan.generator/1",
            "d_theta": self.d_theta, "d_x": self.d_x, "d_z": self.d_z,
            "generator": mlp_to_dict(self.net),
            "critic": None if self.critic is None else mlp_to_dict(self.critic),
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "provenance": self.provenance,
            "history": [list(h) for h in self.history],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(mlp_from_dict(d["generator"]), d["d_theta"], d["d_x"], d["d_z"],
                   None if d["standardizer"] is None else Standardizer.from_dict(d["standardizer"]),
                   d["provenance"], [tuple(h) for h in d["history"]],
                   None if d.get("critic") is None else mlp_from_dict(d["critic"]))


def save_artifact(artifact, path):
    with open(path, "w") as fh:
        json.dump(artifact.to_dict(), fh)


def load_artifact(path):
    with open(path) as fh:
        return GeneratorArtifact.from_dict(json.load(fh))


def write_history(artifact, path):
    with open(path, "w") as fh:
        fh.write("epoch,critic_loss,gen_loss,penalty\n")
        for epoch, c, g, p in artifact.history:
            fh.write(f"{epoch},{c!r},{g!r},{p!r}\n")


def interpolate(real, fake, rng):
    """eps * real + (1 - eps) * fake with one eps ~ U[0, 1] per row."""
    eps = rng.random((len(real), 1))
    # written so that coinciding endpoints give the endpoint exactly
    return fake + eps * (real - fake)


class WassersteinTrainer:
    """Critic and generator updates shared by every Wasserstein variant."""

    def __init__(self, gen, critic, cfg, rng):
        self.gen = gen
        self.critic = critic
        self.cfg = cfg
        self.rng = rng
        self.d_theta = gen.d_out
        self.opt_g = Adam(gen, cfg.lr_g)
        self.opt_c = Adam(critic, cfg.lr_c)

    def critic_step(self, batch):
        """One Adam step on -(mean f(real) - mean f(fake)) + penalty.

        Returns ``(loss, penalty)``.
        """
        B = len(batch.theta)
        fake = forward(self.gen, generator_inputs(batch.z, batch.x), "train", self.rng)[0]
        theta_bar = interpolate(batch.theta, fake, self.rng)
        pair = np.vstack([critic_inputs(batch.theta, batch.x), critic_inputs(fake, batch.x)])
        out, cache = forward(self.critic, pair, "train", self.rng)
        wdist = out[:B].mean() - out[B:].mean()
        upstream = np.empty_like(out)
        upstream[:B] = -1.0 / B
        upstream[B:] = 1.0 / B
        grads = backward_params(self.critic, cache, upstream)
        penalty = 0.0
        if self.cfg.lam > 0:
            penalty, pgrads = gradient_penalty(self.critic, critic_inputs(theta_bar, batch.x),
                                               slice(0, self.d_theta), self.cfg.lam)
            grads = [g + pg for g, pg in zip(grads, pgrads)]
        loss = -wdist + penalty
        if not np.isfinite(loss):
            raise TrainingError("non-finite critic loss")
        self.opt_c.step(grads)
        return float(loss), float(penalty)

    def generator_step(self, x_cond, z):
        """One Adam step on -mean f(g(z, x), x)."""
        B = len(z)
        fake, cache_g = forward(self.gen, generator_inputs(z, x_cond), "train", self.rng)
        out, cache_c = forward(self.critic, critic_inputs(fake, x_cond), "train", self.rng)
        loss = -float(out.mean())
        if not np.isfinite(loss):
            raise TrainingError("non-finite generator loss")
        _, gin = backward(self.critic, cache_c, np.full_like(out, -1.0 / B))
        grads = backward_params(self.gen, cache_g, gin[:, :self.d_theta])
        self.opt_g.step(grads)
        return loss


def build_nets(d_theta, d_x, d_z, cfg, rng, output_logistic=False):
    gen = mlp_init([d_z + d_x, *cfg.gen_hidden, d_theta], cfg.activation, cfg.init, rng,
                   cfg.dropout, negative_slope=cfg.negative_slope)
    critic = mlp_init([d_theta + d_x, *cfg.critic_hidden, 1], cfg.activation, cfg.init, rng,
                      cfg.dropout, "logistic" if output_logistic else "identity",
                      negative_slope=cfg.negative_slope)
    return gen, critic


def prepare_data(table, cfg, standardizer=None):
    if standardizer is None and cfg.standardize:
        standardizer = fit_standardizer(table)
    if standardizer is None:
        return table.theta, table.x, None
    return standardizer.apply_theta(table.theta), standardizer.apply_x(table.x), standardizer


def run_wasserstein(theta, x, cfg, gen, critic, rng, x0_cond=None, on_generator_batch=None):
    """The training loop. ``x0_cond`` switches the generator update to the local
    form where every conditioning row is the observed data."""
    trainer = WassersteinTrainer(gen, critic, cfg, rng)
    T = len(theta)
    B = cfg.batch_size
    d_z = gen.d_in - x.shape[1]
    steps = math.ceil(T / B)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        c_sum = p_sum = g_sum = 0.0
        for step in range(steps):
            try:
                for _ in range(cfg.n_critic):
                    loss, pen = trainer.critic_step(next_batch(theta, x, B, rng, d_z))
                    c_sum += loss
                    p_sum += pen
                if x0_cond is None:
                    gb = next_batch(theta, x, B, rng, d_z)
                    x_cond, z = gb.x, gb.z
                else:
                    z = rng.standard_normal((B, d_z))
                    x_cond = np.broadcast_to(x0_cond, (B, x.shape[1]))
                if on_generator_batch is not None:
                    on_generator_batch(x_cond, z)
                g_sum += trainer.generator_step(x_cond, z)
            except TrainingError as err:
                raise TrainingError(f"{err} at epoch {epoch}, generator step {step}") from None
        n_c = steps * cfg.n_critic
        history.append((epoch, c_sum / n_c, g_sum / steps, p_sum / n_c))
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d critic %.5f gen %.5f penalty %.5f", *history[-1])
    return history


def train_bgan(table, cfg):
    """Train a conditional Wasserstein GAN on a reference table.

    Per generator step there are ``n_critic`` critic steps, each on a fresh
    batch (rows resampled with replacement, noise and interpolation weights
    redrawn); an epoch is ceil(T / batch_size) generator steps.
    """
    d_theta, d_x = table.d_theta, table.d_x
    d_z = cfg.d_z or d_theta
    gen, critic = build_nets(d_theta, d_x, d_z, cfg, rng_stream(cfg.seed, 1))
    theta, x, std = prepare_data(table, cfg)
    history = run_wasserstein(theta, x, cfg, gen, critic, rng_stream(cfg.seed, 2))
    return GeneratorArtifact(gen, d_theta, d_x, d_z, std,
                             {"method": "bgan", "config": cfg.to_dict(), "train_config_hash": cfg.digest(),
                              "table": table.fingerprint(), "simulator": table.simulator},
                             history, critic)


def sample_posterior(artifact, x0, M, seed):
    """``M`` draws g(Z_i, x0) with Z_i ~ N(0, I)."""
    rng = rng_stream(seed, 0)
    z = rng.standard_normal((M, artifact.d_z))
    return artifact.generate(z, x0) if M else np.empty((0, artifact.d_theta))


# ------------------------------------------------------------------ Jensen-Shannon variant

LOG_CLAMP = 1e-12


def _js_logit_grads(d, real):
    """d/ds of -log(d) (real) or -log(1 - d) (fake) with the clamp applied."""
    if real:
        return np.where(d > LOG_CLAMP, -(1.0 - d), 0.0)
    return np.where(1.0 - d > LOG_CLAMP, d, 0.0)


def js_generator_grads(gen, disc, x_cond, z, rng):
    """Loss mean log(1 - d(g(z, x), x)) and its generator parameter gradient."""
    B = len(z)
    d_theta = gen.d_out
    fake, cache_g = forward(gen, generator_inputs(z, x_cond), "train", rng)
    d, cache_d = forward(disc, critic_inputs(fake, x_cond), "train", rng)
    loss = float(np.mean(np.log(np.maximum(1.0 - d, LOG_CLAMP))))
    up = np.where(1.0 - d > LOG_CLAMP, -d, 0.0) / B
    _, gin = backward(disc, cache_d, up, wrt="logits")
    return loss, backward_params(gen, cache_g, gin[:, :d_theta])


def train_bgan_js(table, cfg):
    """Jensen-Shannon conditional GAN: alternating single discriminator and
    generator steps, logistic discriminator, no gradient penalty."""
    d_theta, d_x = table.d_theta, table.d_x
    d_z = cfg.d_z or d_theta
    gen, disc = build_nets(d_theta, d_x, d_z, cfg, rng_stream(cfg.seed, 1), output_logistic=True)
    theta, x, std = prepare_data(table, cfg)
    rng = rng_stream(cfg.seed, 2)
    opt_g, opt_d = Adam(gen, cfg.lr_g), Adam(disc, cfg.lr_c)
    steps = math.ceil(table.T / cfg.batch_size)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        d_sum = g_sum = 0.0
        for _ in range(steps):
            b = next_batch(theta, x, cfg.batch_size, rng, d_z)
            B = len(b.theta)
            fake = forward(gen, generator_inputs(b.z, b.x), "train", rng)[0]
            pair = np.vstack([critic_inputs(b.theta, b.x), critic_inputs(fake, b.x)])
            d, cache = forward(disc, pair, "train", rng)
            d_loss = -float(np.mean(np.log(np.maximum(d[:B], LOG_CLAMP)))
                            + np.mean(np.log(np.maximum(1.0 - d[B:], LOG_CLAMP))))
            up = np.vstack([_js_logit_grads(d[:B], True), _js_logit_grads(d[B:], False)]) / B
            opt_d.step(backward(disc, cache, up, wrt="logits")[0])

            gb = next_batch(theta, x, cfg.batch_size, rng, d_z)
            g_loss, grads = js_generator_grads(gen, disc, gb.x, gb.z, rng)
            opt_g.step(grads)
            if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            d_sum += d_loss
            g_sum += g_loss
        history.append((epoch, d_sum / steps, g_sum / steps, 0.0))
    return GeneratorArtifact(gen, d_theta, d_x, d_z, std,
                             {"method": "bgan-js", "config": cfg.to_dict(), "train_config_hash": cfg.digest(),
                              "table": table.fingerprint(), "simulator": table.simulator},
                             history, disc)
