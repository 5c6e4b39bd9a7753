"""Simulator models: priors, forward samplers, likelihoods and summaries.

Three implicit models are provided and registered by name:

``gauss_toy``       4 bivariate normal draws, 5 parameters, tractable likelihood
``lotka_volterra``  stochastic predator-prey jump process (Gillespie), 4 parameters
``boom_bust``       discrete-time population with crashes, 4 parameters

Data vectors are flattened with the observation/time index outermost and the
coordinate/species index innermost, e.g. ``(x1_1, x1_2, x2_1, ...)`` and
``(pred_t0, prey_t0, pred_t1, prey_t1, ...)``.
"""
from dataclasses import dataclass, field

import numba
import numpy as np

LOG_VAR_EPS = 1e-12
LV_MAX_EVENTS = 1_000_000
LV_MAX_POP = 100_000
BNB_N0 = 10
BNB_BURN_IN = 50
BNB_STEPS = 250


class DomainError(ValueError):
    """Parameter outside the region where a simulator is defined."""


@dataclass(frozen=True)
class UniformBoxPrior:
    lows: np.ndarray
    highs: np.ndarray
    is_uniform = True

    def __post_init__(self):
        lows = np.asarray(self.lows, dtype=np.float64)
        highs = np.asarray(self.highs, dtype=np.float64)
        if lows.shape != highs.shape or lows.ndim != 1:
            raise ValueError("lows and highs must be vectors of equal length")
        if not np.all(lows < highs):
            raise ValueError("need lows < highs in every coordinate")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @property
    def dim(self):
        return self.lows.size

    @property
    def log_volume(self):
        return float(np.sum(np.log(self.highs - self.lows)))

    def contains(self, theta):
        theta = np.asarray(theta)
        return np.all((theta >= self.lows) & (theta <= self.highs), axis=-1)

    def logpdf(self, theta):
        inside = self.contains(theta)
        return np.where(inside, -self.log_volume, -np.inf)

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return self.lows + (self.highs - self.lows) * rng.random(shape)


# ------------------------------------------------------------------ Gaussian toy

def _toy_scales(theta):
    theta = np.asarray(theta, dtype=np.float64)
    s1 = theta[..., 2] ** 2
    s2 = theta[..., 3] ** 2
    rho = np.tanh(theta[..., 4])
    return s1, s2, rho


def simulate_gaussian_toy(theta, rng):
    """Four draws from N(mu, Sigma) with mu = theta[:2] and
    Sigma = [[s1^2, rho s1 s2], [rho s1 s2, s2^2]], s1 = theta3^2, s2 = theta4^2,
    rho = tanh(theta5).  Returns the 8-vector of stacked draws."""
    theta = np.asarray(theta, dtype=np.float64)
    s1, s2, rho = _toy_scales(theta)
    z = rng.standard_normal((4, 2))
    x1 = theta[0] + s1 * z[:, 0]
    x2 = theta[1] + s2 * (rho * z[:, 0] + np.sqrt(1.0 - rho * rho) * z[:, 1])
    return np.column_stack([x1, x2]).ravel()


def gaussian_toy_loglik(theta, x):
    """Log-likelihood of the toy model; accepts a batch of thetas [K, 5].

    Singular covariances give ``-inf``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    pts = np.asarray(x, dtype=np.float64).reshape(4, 2)
    s1, s2, rho = _toy_scales(theta)
    v1, v2 = s1 * s1, s2 * s2
    c = rho * s1 * s2
    det = v1 * v2 - c * c
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = pts[:, 0] - theta[..., 0, None]
        d2 = pts[:, 1] - theta[..., 1, None]
        # explicit 2x2 inverse
        quad = (v2[..., None] * d1 * d1 - 2 * c[..., None] * d1 * d2 + v1[..., None] * d2 * d2) / det[..., None]
        ll = -4 * np.log(2 * np.pi) - 2 * np.log(det) - 0.5 * quad.sum(axis=-1)
    return np.where(det > 0, ll, -np.inf)


def summary_stats_gauss(x):
    """(mean_1, mean_2, var_1, var_2) of the four points, variance with n-1."""
    pts = np.asarray(x, dtype=np.float64).reshape(*np.shape(x)[:-1], 4, 2)
    return np.concatenate([pts.mean(axis=-2), pts.var(axis=-2, ddof=1)], axis=-1)


# ------------------------------------------------------------------ Lotka-Volterra

@numba.njit(cache=True)
def _lv_gillespie(th1, th2, th3, th4, x0, y0, n_grid, dt_grid, rng, max_events, max_pop):
    out = np.empty(2 * n_grid)
    x, y = x0, y0
    t = 0.0
    k = 0  # next grid index to record
    events = 0
    truncated = False
    while k < n_grid:
        r1 = th1 * x * y
        r2 = th2 * x
        r3 = th3 * y
        r4 = th4 * x * y
        total = r1 + r2 + r3 + r4
        if total <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.standard_exponential() / total
        while k < n_grid and k * dt_grid <= t_next:
            out[2 * k] = x
            out[2 * k + 1] = y
            k += 1
        if k >= n_grid:
            break
        u = rng.random() * total
        if u < r1:
            x += 1
        elif u < r1 + r2:
            x -= 1
        elif u < r1 + r2 + r3:
            y += 1
        else:
            y -= 1
        t = t_next
        events += 1
        if events >= max_events or x > max_pop or y > max_pop:
            truncated = True
            while k < n_grid:
                out[2 * k] = x
                out[2 * k + 1] = y
                k += 1
    return out, truncated


def check_lv(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (4,) or not np.all(np.isfinite(theta)) or np.any(theta < 0):
        raise DomainError("Lotka-Volterra rates must be 4 nonnegative numbers")


def simulate_lotka_volterra(theta, rng, return_truncated=False):
    """Gillespie simulation of the predator-prey jump process.

    Predators x and prey y start at (50, 100); events are predator birth
    (rate theta1*x*y), predator death (theta2*x), prey birth (theta3*y) and
    prey death (theta4*x*y).  Populations are recorded every 0.1 time units on
    [0, 20].  A trajectory is cut off after 10^6 events or once a population
    exceeds 10^5; the remaining grid is filled with the last state and the
    truncation flag is set.
    """
    check_lv(theta)
    th = [float(v) for v in theta]
    out, truncated = _lv_gillespie(th[0], th[1], th[2], th[3], 50, 100, 201, 0.1,
                                   rng, LV_MAX_EVENTS, LV_MAX_POP)
    return (out, bool(truncated)) if return_truncated else out


def _autocorr(c, lag, denom):
    num = np.sum(c[..., lag:] * c[..., :-lag], axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)


def summary_stats_lv(series):
    """Nine summaries of a (flattened) predator-prey series.

    For predators then prey: mean, log(variance + 1e-12), lag-1 and lag-2
    autocorrelation; then the predator-prey correlation.  Flat series get
    autocorrelation 0 and correlation 0.
    """
    s = np.asarray(series, dtype=np.float64)
    s = s.reshape(*s.shape[:-1], -1, 2)
    pred, prey = s[..., 0], s[..., 1]
    feats = []
    centred = []
    for v in (pred, prey):
        c = v - v.mean(axis=-1, keepdims=True)
        ss = np.sum(c * c, axis=-1)
        centred.append((c, ss))
        feats += [v.mean(axis=-1), np.log(v.var(axis=-1, ddof=1) + LOG_VAR_EPS),
                  _autocorr(c, 1, ss), _autocorr(c, 2, ss)]
    (ca, sa), (cb, sb) = centred
    denom = np.sqrt(sa * sb)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, np.sum(ca * cb, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0)
    feats.append(corr)
    return np.stack(feats, axis=-1)


# ------------------------------------------------------------------ boom and bust

@numba.njit(cache=True)
def _boom_bust(r, kappa, alpha, beta, n0, burn_in, n_steps, rng):
    out = np.empty(n_steps)
    n = n0
    for t in range(burn_in + n_steps):
        if n <= kappa:
            nxt = rng.poisson(n * (1.0 + r))
        else:
            nxt = rng.binomial(n, alpha)
        n = nxt + rng.poisson(beta)
        if t >= burn_in:
            out[t - burn_in] = n
    return out


def check_bnb(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (4,) or not np.all(np.isfinite(theta)):
        raise DomainError("boom-bust needs 4 finite parameters")
    r, kappa, alpha, beta = theta
    if not (r > 0 and kappa > 0 and 0 < alpha < 1 and beta >= 0):
        raise DomainError("boom-bust needs r > 0, kappa > 0, 0 < alpha < 1, beta >= 0")


def simulate_boom_bust(theta, rng):
    """Boom-and-bust population: Poisson growth by (1 + r) while at or below the
    carrying capacity kappa, Binomial(N, alpha) survival above it, plus
    Poisson(beta) arrivals every step.  Starts at N0 = 10 and records the 250
    states following a 50-step burn-in."""
    check_bnb(theta)
    r, kappa, alpha, beta = (float(v) for v in theta)
    return _boom_bust(r, kappa, alpha, beta, BNB_N0, BNB_BURN_IN, BNB_STEPS, rng)


def _four_moments(v):
    n = v.shape[-1]
    mean = v.mean(axis=-1)
    c = v - mean[..., None]
    m2 = np.mean(c ** 2, axis=-1)
    m3 = np.mean(c ** 3, axis=-1)
    m4 = np.mean(c ** 4, axis=-1)
    var = m2 * n / (n - 1)
    flat = m2 <= 0
    safe = np.where(flat, 1.0, m2)
    skew = np.where(flat, 0.0, m3 / safe ** 1.5)
    kurt = np.where(flat, 0.0, m4 / safe ** 2 - 3.0)
    return [mean, var, skew, kurt]


def summary_stats_bnb(series):
    """Mean, variance (n-1), skewness and excess kurtosis of the series, its
    lag-1 differences and its lag-1 ratios N_{t+1} / (N_t + 1); 12 values.
    Skewness and kurtosis are the moment ratios m3/m2^1.5 and m4/m2^2 - 3,
    set to 0 for flat inputs."""
    s = np.asarray(series, dtype=np.float64)
    diffs = s[..., 1:] - s[..., :-1]
    ratios = s[..., 1:] / (s[..., :-1] + 1.0)
    return np.stack(_four_moments(s) + _four_moments(diffs) + _four_moments(ratios), axis=-1)


# ------------------------------------------------------------------ registry

@dataclass
class SimulatorModel:
    name: str
    d_theta: int
    d_x: int
    prior: UniformBoxPrior
    simulate_fn: object
    check_fn: object
    theta0: np.ndarray
    loglik: object = None
    summary: object = None
    summary_dim: int = 0
    point_dim: int = 1          # coordinates per observation for W2 matching
    standardize: bool = False   # default input standardization for training
    param_names: list = field(default_factory=list)
    gan_input: str = "data"     # "summary": networks are conditioned on summary statistics

    @property
    def d_features(self):
        return self.summary_dim if self.gan_input == "summary" else self.d_x

    def features(self, x):
        """Network conditioning input for raw data ``x`` (one row or a batch)."""
        x = np.asarray(x, dtype=np.float64)
        if self.gan_input == "data":
            return x
        if x.ndim == 1:
            return np.asarray(self.summary(x), dtype=np.float64)
        return np.array([self.summary(row) for row in x])

    def check(self, theta):
        self.check_fn(theta)

    def simulate(self, theta, rng):
        """Return ``(x, truncated)`` for one parameter vector."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.d_theta,):
            raise DomainError(f"{self.name} expects {self.d_theta} parameters")
        self.check_fn(theta)
        out = self.simulate_fn(theta, rng)
        return out if isinstance(out, tuple) else (out, False)


def _simulate_lv_flagged(theta, rng):
    return simulate_lotka_volterra(theta, rng, return_truncated=True)


def check_toy(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (5,) or not bool(TOY_PRIOR.contains(theta)):
        raise DomainError("Gaussian toy parameters must lie in the prior box")


TOY_PRIOR = UniformBoxPrior(np.array([-3.0, -4.0, -3.0, -3.0, -3.0]), np.array([3.0, 4.0, 3.0, 3.0, 3.0]))
LV_PRIOR = UniformBoxPrior(np.array([0.0, 0.0, 0.0, 0.0]), np.array([0.1, 1.0, 2.0, 0.1]))
BNB_PRIOR = UniformBoxPrior(np.array([0.0, 10.0, 0.0, 0.0]), np.array([1.0, 80.0, 1.0, 1.0]))

MODELS = {
    "gauss_toy": SimulatorModel(
        "gauss_toy", 5, 8, TOY_PRIOR, simulate_gaussian_toy, check_toy,
        np.array([-0.7, -2.9, -1.0, -0.9, 0.6]), loglik=gaussian_toy_loglik,
        summary=summary_stats_gauss, summary_dim=4, point_dim=2, standardize=False,
        param_names=["theta1", "theta2", "theta3", "theta4", "theta5"]),
    "lotka_volterra": SimulatorModel(
        "lotka_volterra", 4, 402, LV_PRIOR, _simulate_lv_flagged, check_lv,
        np.array([0.01, 0.5, 1.0, 0.01]), summary=summary_stats_lv, summary_dim=9,
        point_dim=2, standardize=True, param_names=["theta1", "theta2", "theta3", "theta4"]),
    "boom_bust": SimulatorModel(
        "boom_bust", 4, 250, BNB_PRIOR, simulate_boom_bust, check_bnb,
        np.array([0.4, 50.0, 0.09, 0.05]), summary=summary_stats_bnb, summary_dim=12,
        point_dim=1, standardize=False, param_names=["r", "kappa", "alpha", "beta"],
        gan_input="summary"),
}


def get_model(name):
    try:
        return MODELS[name]
    except KeyError:
        raise KeyError(f"unknown simulator {name!r}; known: {sorted(MODELS)}") from None


def read_observed(path, model=None):
    """Read a single-row CSV of observed data."""
    x = np.loadtxt(path, delimiter=",", ndmin=1, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{path}: observed data must be a single row")
    if model is not None and x.size != model.d_x:
        raise ValueError(f"{path}: {model.name} expects {model.d_x} values, found {x.size}")
    return x


def write_observed(path, x):
    with open(path, "w") as fh:
        fh.write(",".join(repr(float(v)) for v in np.asarray(x).ravel()) + "\n")
