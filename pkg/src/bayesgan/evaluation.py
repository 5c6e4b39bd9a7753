"""Evaluation: MMD between sample sets, weighted posterior summaries, and a
Metropolis-Hastings reference sampler for the Gaussian toy model, whose
likelihood is available in closed form.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from scipy.spatial.distance import cdist, pdist

from .models import TOY_PRIOR
from .rng import rng_stream

SIGMA_FLOOR = 1e-6


# ------------------------------------------------------------------ MMD

def gaussian_kernel(a, b, sigma):
    d2 = cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")
    return np.exp(-d2 / (2.0 * sigma * sigma))


def median_bandwidth(pool):
    med = float(np.median(pdist(pool))) if len(pool) > 1 else 0.0
    return max(med, SIGMA_FLOOR)


def mmd(a, b, sigma=None):
    """Unbiased estimate of squared MMD with a Gaussian kernel.

    The bandwidth defaults to the median pairwise distance of the pooled
    sample.  The estimate can be slightly negative when the two samples come
    from the same distribution.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    m, n = len(a), len(b)
    if m < 2 or n < 2:
        raise ValueError("each sample needs at least two points")
    if sigma is None:
        sigma = median_bandwidth(np.vstack([a, b]))
    kaa = gaussian_kernel(a, a, sigma)
    kbb = gaussian_kernel(b, b, sigma)
    kab = gaussian_kernel(a, b, sigma)
    within_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    within_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(within_a + within_b - 2.0 * kab.mean())


# ------------------------------------------------------------------ summaries

def weighted_quantile(draws, weights, q):
    """Smallest draw whose cumulative weight (ascending order) reaches ``q``.

    Draws with zero weight are ignored, so ``q = 0`` gives the smallest draw
    that carries mass.
    """
    draws = np.asarray(draws, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    keep = weights > 0
    draws, weights = draws[keep], weights[keep]
    if draws.size == 0:
        raise ValueError("no draws with positive weight")
    order = np.lexsort((weights, draws))
    cum = np.cumsum(weights[order])
    idx = min(int(np.searchsorted(cum, q, side="left")), draws.size - 1)
    return float(draws[order][idx])


@dataclass
class EvalReport:
    method: str
    seed: int
    params: list                    # one dict per parameter
    mmd: float = None
    seconds: float = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path, with_timing=True):
        d = self.to_dict()
        if not with_timing:
            d.pop("seconds")
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def posterior_summary(wp, theta0, method=None, seed=0, fold=(), names=None):
    """Bias of the weighted mean, 95% interval width and coverage per parameter.

    Coordinates listed in ``fold`` are compared in absolute value (the toy
    model only identifies theta3 and theta4 up to sign).
    """
    theta0 = np.asarray(theta0, dtype=np.float64).ravel()
    draws, w = wp.draws, wp.weights
    if theta0.size != draws.shape[1]:
        raise ValueError("theta0 has the wrong length")
    params = []
    for i in range(draws.shape[1]):
        col, t0 = draws[:, i], float(theta0[i])
        if i in fold:
            col, t0 = np.abs(col), abs(t0)
        # fsum makes the mean independent of the draw order
        mean = math.fsum(w * col)
        lo, hi = weighted_quantile(col, w, 0.025), weighted_quantile(col, w, 0.975)
        params.append({"name": names[i] if names else f"theta_{i + 1}", "theta0": float(t0),
                       "mean": mean, "bias": abs(mean - t0), "ci_low": lo, "ci_high": hi,
                       "ci_width": hi - lo, "coverage": int(lo <= t0 <= hi)})
    return EvalReport(method or wp.method, int(seed), params)


COMPARISON_COLUMNS = ["method", "parameter", "bias", "ci_width", "coverage"]


def write_comparison(reports, path):
    """CSV in the layout method, parameter, bias, ci_width, coverage (+ mmd)."""
    with_mmd = any(r.mmd is not None for r in reports)
    cols = COMPARISON_COLUMNS + (["mmd"] if with_mmd else [])
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for r in reports:
            for p in r.params:
                row = [r.method, p["name"], repr(p["bias"]), repr(p["ci_width"]), p["coverage"]]
                if with_mmd:
                    row.append("" if r.mmd is None else repr(r.mmd))
                out.writerow(row)


# ------------------------------------------------------------------ toy reference posterior

class ConvergenceError(RuntimeError):
    pass


@numba.njit(cache=True)
def _toy_loglik(th, pts):
    s1 = th[2] * th[2]
    s2 = th[3] * th[3]
    rho = math.tanh(th[4])
    v1, v2 = s1 * s1, s2 * s2
    c = rho * s1 * s2
    det = v1 * v2 - c * c
    if not det > 0:
        return -np.inf
    quad = 0.0
    for k in range(4):
        d1 = pts[k, 0] - th[0]
        d2 = pts[k, 1] - th[1]
        quad += v2 * d1 * d1 - 2 * c * d1 * d2 + v1 * d2 * d2
    return -4 * math.log(2 * math.pi) - 2 * math.log(det) - 0.5 * quad / det


@numba.njit(cache=True)
def _reflect(v, lo, hi):
    width = hi - lo
    u = (v - lo) % (2 * width)
    if u > width:
        u = 2 * width - u
    return lo + u


@numba.njit(cache=True)
def _mh_chain(start, pts, lows, highs, n_iter, n_adapt, rng):
    d = start.size
    out = np.empty((n_iter, d))
    th = start.copy()
    ll = _toy_loglik(th, pts)
    log_step = np.log(0.1 * (highs - lows))
    acc = np.zeros(d)
    tries = 0
    accepted_after = np.zeros(d)
    for it in range(n_iter):
        for k in range(d):
            old = th[k]
            th[k] = _reflect(old + math.exp(log_step[k]) * rng.standard_normal(), lows[k], highs[k])
            ll_new = _toy_loglik(th, pts)
            if math.log(rng.random()) < ll_new - ll:
                ll = ll_new
                acc[k] += 1
                if it >= n_adapt:
                    accepted_after[k] += 1
            else:
                th[k] = old
        # the likelihood depends on theta3 and theta4 only through their squares,
        # so a sign flip is always accepted; it lets the chain visit every mode
        if rng.random() < 0.5:
            th[2] = -th[2]
        if rng.random() < 0.5:
            th[3] = -th[3]
        tries += 1
        if it < n_adapt and tries == 100:
            gain = 1.0 / math.sqrt(1.0 + it / 100)
            for k in range(d):
                log_step[k] += gain * (acc[k] / 100 - 0.3)
                acc[k] = 0.0
            tries = 0
        out[it] = th
    return out, accepted_after / max(n_iter - n_adapt, 1)


def split_rhat(chains):
    """Split-R-hat for an array of chains [C, N] (scalar quantity)."""
    chains = np.asarray(chains, dtype=np.float64)
    half = chains.shape[1] // 2
    parts = np.vstack([chains[:, :half], chains[:, half:2 * half]])
    n = parts.shape[1]
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(var_hat / W))


def toy_mh_chains(x0, seed, n_chains=4, n_iter=100_000, burn=0.5, prior=TOY_PRIOR):
    """Post-burn-in chains [C, N, 5] and acceptance rates [C, 5].

    Step sizes adapt during burn-in only, targeting 30% acceptance per
    coordinate.
    """
    pts = np.asarray(x0, dtype=np.float64).reshape(4, 2)
    n_burn = int(n_iter * burn)
    chains, rates = [], []
    for c in range(n_chains):
        rng = rng_stream(seed, c)
        start = prior.sample(rng)
        while not np.isfinite(_toy_loglik(start, pts)):
            start = prior.sample(rng)
        draws, rate = _mh_chain(start, pts, prior.lows, prior.highs, n_iter, n_burn, rng)
        chains.append(draws[n_burn:])
        rates.append(rate)
    return np.array(chains), np.array(rates)


def rhat_gate(chains):
    """R-hat of |theta3|, |theta4| and raw theta1, theta2, theta5."""
    q = chains.copy()
    q[..., 2:4] = np.abs(q[..., 2:4])
    return np.array([split_rhat(q[..., i]) for i in range(q.shape[-1])])


def true_posterior_toy(x0, M, seed, n_chains=4, n_iter=100_000, burn=0.5, max_rhat=1.05):
    """``M`` reference draws from the exact toy posterior under the uniform prior."""
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.size != 8:
        raise ValueError("toy data has 8 values")
    chains, _ = toy_mh_chains(x0, seed, n_chains, n_iter, burn)
    rh = rhat_gate(chains)
    if np.any(rh >= max_rhat):
        raise ConvergenceError(f"split R-hat {np.round(rh, 4).tolist()} exceeds {max_rhat}; run longer chains")
    pool = chains.reshape(-1, chains.shape[-1])
    idx = np.linspace(0, len(pool) - 1, M).round().astype(int)
    return pool[idx]
