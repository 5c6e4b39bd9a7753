"""Two-step refinement: a pilot generator proposes parameters near x0, a second
generator is trained on the resulting table, and its draws are importance
reweighted by prior / proposal density.

The proposal density is either a Gaussian product-kernel KDE fitted to pilot
draws, or the odds of a classifier separating prior draws from proposal draws.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .bgan import REFINE_DEFAULTS, TrainConfig, sample_posterior, train_bgan
from .neural import Adam, backward, forward, mlp_init
from .reftable import PriorSampler, ProposalSampler, feature_table, generate_table
from .rng import child_seed, rng_stream

log = logging.getLogger(__name__)

BANDWIDTH_FLOOR = 1e-6
CLIP_PERCENTILE = 99.9
D_CLAMP = 1e-6


class DegenerateWeightsError(ValueError):
    """Every draw received importance weight zero."""


class ClassifierError(FloatingPointError):
    def __init__(self, msg, trace):
        super().__init__(f"{msg}; last losses {trace[-5:]}")
        self.trace = trace


@dataclass
class WeightedPosterior:
    draws: np.ndarray
    weights: np.ndarray
    method: str = "uniform"

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if len(self.weights) != len(self.draws):
            raise ValueError("need one weight per draw")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to one")

    @property
    def M(self):
        return len(self.draws)

    @property
    def d_theta(self):
        return self.draws.shape[1]

    @property
    def ess(self):
        return float(1.0 / np.sum(self.weights ** 2))

    def mean(self):
        return self.weights @ self.draws

    def resample(self, n, rng):
        """``n`` equally weighted draws picked with probability ``weights``."""
        if np.all(self.weights == self.weights[0]) and n == self.M:
            return self.draws.copy()
        return self.draws[rng.choice(self.M, size=n, p=self.weights)]

    def to_csv(self, path):
        header = ",".join([f"theta_{i + 1}" for i in range(self.d_theta)] + ["weight"])
        np.savetxt(path, np.column_stack([self.draws, self.weights]), fmt="%.17g",
                   delimiter=",", header=header, comments="")

    @classmethod
    def from_csv(cls, path, method="file"):
        """Read draws written by :meth:`to_csv`; a file without a weight column
        is taken as equally weighted."""
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if header[-1] != "weight":
            return uniform_posterior(data, method)
        return cls(data[:, :-1], data[:, -1] / data[:, -1].sum(), method)


def uniform_posterior(draws, method="uniform"):
    draws = np.atleast_2d(draws)
    return WeightedPosterior(draws, np.full(len(draws), 1.0 / len(draws)), method)


# ------------------------------------------------------------------ kernel density

@dataclass
class KdeModel:
    points: np.ndarray
    bandwidths: np.ndarray

    def logpdf(self, theta, chunk=512):
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        n, d = self.points.shape
        const = -np.log(n) - d * 0.5 * np.log(2 * np.pi) - np.sum(np.log(self.bandwidths))
        scaled_pts = self.points / self.bandwidths
        out = np.empty(len(theta))
        for s in range(0, len(theta), chunk):
            t = theta[s:s + chunk] / self.bandwidths
            sq = ((t[:, None, :] - scaled_pts[None, :, :]) ** 2).sum(axis=2)
            out[s:s + chunk] = logsumexp(-0.5 * sq, axis=1)
        return out + const


def kde_fit(samples):
    """Gaussian product kernel with Silverman's per-dimension bandwidth
    h_i = sd_i * (4 / ((d + 2) M)) ** (1 / (d + 4))."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    M, d = samples.shape
    if M < 2:
        raise ValueError("a KDE needs at least two samples")
    sd = samples.std(axis=0, ddof=1)
    h = sd * (4.0 / ((d + 2) * M)) ** (1.0 / (d + 4))
    return KdeModel(samples.copy(), np.maximum(h, BANDWIDTH_FLOOR))


def kde_eval(model, theta):
    return np.exp(model.logpdf(theta))


# ------------------------------------------------------------------ weights

def _normalize(raw):
    """Clip positive weights at their 99.9th percentile, then normalize."""
    raw = np.asarray(raw, dtype=np.float64)
    pos = raw > 0
    if not np.any(pos):
        raise DegenerateWeightsError("all importance weights are zero (proposal entirely off-support)")
    cap = np.percentile(raw[pos], CLIP_PERCENTILE)
    w = np.minimum(raw, cap)
    return w / w.sum()


def weights_from_logratio(logratio):
    """Normalize exp(logratio); -inf marks draws with zero weight."""
    logratio = np.asarray(logratio, dtype=np.float64)
    finite = np.isfinite(logratio)
    if not np.any(finite):
        raise DegenerateWeightsError("all importance weights are zero (proposal entirely off-support)")
    raw = np.zeros_like(logratio)
    raw[finite] = np.exp(logratio[finite] - logratio[finite].max())
    return _normalize(raw)


def weights_density(prior, proposal_logpdf, draws):
    """Weights prior(theta) / proposal(theta) for a proposal with known density."""
    draws = np.atleast_2d(draws)
    logp = prior.logpdf(draws)
    inside = np.isfinite(logp)
    logr = np.full(len(draws), -np.inf)
    logr[inside] = logp[inside] - proposal_logpdf(draws[inside])
    return weights_from_logratio(logr)


def weights_kde(prior, kde, draws):
    """Weights prior(theta) / kde(theta), zero outside the prior support.

    For a uniform prior the prior density is a constant that cancels in the
    normalization, so it is left out entirely.
    """
    draws = np.atleast_2d(draws)
    if len(draws) == 0:
        raise ValueError("no draws to weight")
    logr = -kde.logpdf(draws)
    if getattr(prior, "is_uniform", False):
        logr = np.where(prior.contains(draws), logr, -np.inf)
    else:
        logr = logr + prior.logpdf(draws)
    return weights_from_logratio(logr)


@dataclass
class Classifier:
    net: object
    mean: np.ndarray
    sd: np.ndarray
    trace: list

    def prob(self, theta):
        return forward(self.net, (np.atleast_2d(theta) - self.mean) / self.sd)[0][:, 0]


def train_classifier(ones, zeros, rng, hidden=(64, 64), steps=1500, batch=256, lr=1e-3):
    """Logistic MLP separating ``ones`` (label 1) from ``zeros`` (label 0) by
    cross-entropy, trained with Adam on balanced minibatches."""
    ones, zeros = np.atleast_2d(ones), np.atleast_2d(zeros)
    pool = np.vstack([ones, zeros])
    mean = pool.mean(axis=0)
    sd = pool.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    a, b = (ones - mean) / sd, (zeros - mean) / sd
    net = mlp_init([pool.shape[1], *hidden, 1], "relu", "he_uniform", rng, output_activation="logistic")
    opt = Adam(net, lr)
    half = batch // 2
    labels = np.concatenate([np.ones(half), np.zeros(half)])[:, None]
    trace = []
    for step in range(steps):
        xb = np.vstack([a[rng.integers(0, len(a), half)], b[rng.integers(0, len(b), half)]])
        d, cache = forward(net, xb)
        loss = -float(np.mean(labels * np.log(np.maximum(d, 1e-12))
                              + (1 - labels) * np.log(np.maximum(1 - d, 1e-12))))
        trace.append(loss)
        if not np.isfinite(loss) or loss > 1e3:
            raise ClassifierError(f"classifier training diverged at step {step}", trace)
        grads, _ = backward(net, cache, (d - labels) / len(xb), wrt="logits")
        try:
            opt.step(grads)
        except FloatingPointError as err:
            raise ClassifierError(str(err), trace) from None
    return Classifier(net, mean, sd, trace)


def odds_weights(dprob):
    d = np.clip(dprob, D_CLAMP, 1.0 - D_CLAMP)
    return d / (1.0 - d)


def weights_classifier(prior_draws, proposal_draws, eval_draws, rng, prior=None, **train_kw):
    """Weights D(theta) / (1 - D(theta)) from a classifier trained to tell prior
    draws (label 1) from proposal draws (label 0).  If ``prior`` is given,
    draws outside its support get weight 0."""
    if min(len(prior_draws), len(proposal_draws)) < 100:
        raise ValueError("the classifier needs at least 100 draws from each distribution")
    clf = train_classifier(prior_draws, proposal_draws, rng, **train_kw)
    raw = odds_weights(clf.prob(eval_draws))
    if prior is not None:
        raw = np.where(prior.contains(eval_draws), raw, 0.0)
    return _normalize(raw)


# ------------------------------------------------------------------ the two-step driver

@dataclass
class TwoStepResult:
    artifact: object
    posterior: WeightedPosterior
    pilot: object
    table: object
    proposal: object = None     # what generated ``table`` (the pilot unless rounds > 1)

    def __iter__(self):
        return iter((self.artifact, self.posterior))


def default_weight_method(d_theta):
    return "kde" if d_theta <= 5 else "classifier"


def proposal_weights(method, prior, proposal, x0, draws, seed, n_density=2000):
    """Importance weights prior / proposal for ``draws``.

    ``proposal`` is either a generator artifact evaluated at ``x0`` or an object
    with an exact ``logpdf`` (for example the prior itself).
    """
    if hasattr(proposal, "logpdf"):
        return weights_density(prior, proposal.logpdf, draws), "density"
    prop = sample_posterior(proposal, x0, n_density, child_seed(seed, "density"))
    if method == "kde":
        return weights_kde(prior, kde_fit(prop), draws), "kde"
    if method == "classifier":
        rng = rng_stream(child_seed(seed, "classifier"))
        return weights_classifier(prior.sample(rng, n_density), prop, draws, rng, prior), "classifier"
    raise ValueError(f"unknown weight method {method!r}")


def run_two_step(model, x0, pilot_cfg=None, refine_cfg=None, T1=50_000, T2=50_000, M=1000,
                 method=None, seed=0, rounds=1, pilot=None, workers=1, n_density=2000):
    """Pilot run under the prior, second table under the pilot proposal at x0,
    retraining, then importance weights.

    ``pilot`` skips the pilot run: pass a trained generator artifact, or the
    prior object itself to make the proposal equal to the prior.  ``rounds > 1``
    repeats the proposal/retrain step with the latest generator as proposal.
    Returns a :class:`TwoStepResult` (which also unpacks as
    ``(artifact, posterior)``).
    """
    if T2 < 1 or rounds < 1:
        raise ValueError("need T2 >= 1 and rounds >= 1")
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.size != model.d_x:
        raise ValueError(f"observed data has length {x0.size}, model {model.name} expects {model.d_x}")
    method = method or default_weight_method(model.d_theta)
    refine_cfg = refine_cfg or REFINE_DEFAULTS
    if pilot is None:
        pilot_cfg = pilot_cfg or TrainConfig()
        table1 = generate_table(PriorSampler(model.prior), model, T1, child_seed(seed, "table1"), workers)
        pilot = train_bgan(feature_table(table1, model), _reseed(pilot_cfg, child_seed(seed, "pilot")))
    xf = model.features(x0)
    proposal, table, art = pilot, None, None
    for r in range(rounds):
        sampler = (PriorSampler(model.prior) if hasattr(proposal, "logpdf")
                   else ProposalSampler(proposal, xf, f"proposal{r + 1}"))
        table = feature_table(generate_table(sampler, model, T2, child_seed(seed, "table2", r), workers), model)
        art = train_bgan(table, _reseed(refine_cfg, child_seed(seed, "refine", r)))
        art.provenance.update({"method": "bgan-2s", "round": r + 1, "proposal": sampler.describe()})
        if r < rounds - 1:
            proposal = art
    draws = sample_posterior(art, xf, M, child_seed(seed, "draws"))
    w, tag = proposal_weights(method, model.prior, proposal, xf, draws, seed, n_density)
    return TwoStepResult(art, WeightedPosterior(draws, w, tag), pilot, table, proposal)


def _reseed(cfg, seed):
    d = cfg.to_dict()
    d["seed"] = int(seed)
    return TrainConfig(**d)


def effective_sample_size(weights):
    w = np.asarray(weights, dtype=np.float64)
    return float(w.sum() ** 2 / np.sum(w ** 2)) if w.size else math.nan
