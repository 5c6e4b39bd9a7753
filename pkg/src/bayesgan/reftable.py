"""ABC reference tables: generation, persistence, standardization, batching."""
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import DomainError, get_model
from .neural import forward
from .rng import rng_stream

MAX_RETRIES = 10_000


class PriorSampler:
    """Draw each row's parameter from the model prior."""
    can_leave_support = False

    def __init__(self, prior):
        self.prior = prior

    def describe(self):
        return "prior"

    def draw(self, rngs):
        return np.array([self.prior.sample(r) for r in rngs])


class ProposalSampler:
    """Draw parameters by pushing fresh noise through a trained generator at x0."""
    can_leave_support = True

    def __init__(self, artifact, x0, label="proposal"):
        self.artifact = artifact
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.label = label

    def describe(self):
        return f"{self.label}:{self.artifact.fingerprint()}"

    def draw(self, rngs):
        z = np.array([r.standard_normal(self.artifact.d_z) for r in rngs])
        return self.artifact.generate(z, self.x0)


@dataclass
class ReferenceTable:
    theta: np.ndarray
    x: np.ndarray
    simulator: str
    sampler: str = "prior"
    seed: int = 0
    n_truncated: int = 0
    n_retries: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.theta.ndim != 2 or self.x.ndim != 2 or len(self.theta) != len(self.x):
            raise ValueError("theta and x must be matrices with the same number of rows")
        if len(self.theta) < 1:
            raise ValueError("a reference table needs at least one row")

    @property
    def T(self):
        return len(self.theta)

    @property
    def d_theta(self):
        return self.theta.shape[1]

    @property
    def d_x(self):
        return self.x.shape[1]

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.theta).tobytes())
        h.update(np.ascontiguousarray(self.x).tobytes())
        return h.hexdigest()[:16]

    def metadata(self):
        return {"simulator": self.simulator, "sampler": self.sampler, "seed": self.seed,
                "T": self.T, "d_theta": self.d_theta, "d_x": self.d_x,
                "n_truncated": self.n_truncated, "n_retries": self.n_retries,
                "fingerprint": self.fingerprint(), **self.meta}


def _simulate_rows(model_name, sampler, seed, start, stop):
    model = get_model(model_name)
    rngs = [rng_stream(seed, j) for j in range(start, stop)]
    thetas = sampler.draw(rngs)
    xs = np.empty((stop - start, model.d_x))
    truncated = retries = 0
    for i, rng in enumerate(rngs):
        for attempt in range(MAX_RETRIES + 1):
            try:
                xs[i], flag = model.simulate(thetas[i], rng)
                break
            except DomainError:
                if not sampler.can_leave_support or attempt == MAX_RETRIES:
                    raise
                retries += 1
                thetas[i] = sampler.draw([rng])[0]
        truncated += flag
    return thetas, xs, truncated, retries


def generate_table(sampler, model, T, seed, workers=1):
    """Simulate ``T`` rows (theta_j, X_j).

    Row ``j`` draws everything from stream ``(seed, j)``, so the table does not
    depend on ``workers``.  Proposal draws the simulator cannot handle are
    redrawn from the same row stream and counted in ``n_retries``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    name = model.name if hasattr(model, "name") else model
    if workers <= 1 or T < 2 * workers:
        parts = [_simulate_rows(name, sampler, seed, 0, T)]
    else:
        bounds = np.linspace(0, T, workers + 1).astype(int)
        with ProcessPoolExecutor(workers) as ex:
            futs = [ex.submit(_simulate_rows, name, sampler, seed, int(a), int(b))
                    for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
            parts = [f.result() for f in futs]
    theta = np.concatenate([p[0] for p in parts])
    x = np.concatenate([p[1] for p in parts])
    return ReferenceTable(theta, x, name, sampler.describe(), int(seed),
                          int(sum(p[2] for p in parts)), int(sum(p[3] for p in parts)))


def feature_table(table, model):
    """The table with each X_j replaced by the model's network features."""
    if model.gan_input == "data":
        return table
    return ReferenceTable(table.theta, model.features(table.x), table.simulator, table.sampler,
                          table.seed, table.n_truncated, table.n_retries,
                          {**table.meta, "features": model.gan_input})


# ------------------------------------------------------------------ persistence

def save_table(table, stem):
    """Write ``<stem>.table.csv`` and ``<stem>.meta.json``."""
    stem = Path(stem)
    header = ",".join([f"theta_{i + 1}" for i in range(table.d_theta)]
                      + [f"x_{i + 1}" for i in range(table.d_x)])
    np.savetxt(f"{stem}.table.csv", np.hstack([table.theta, table.x]), fmt="%.17g",
               delimiter=",", header=header, comments="")
    with open(f"{stem}.meta.json", "w") as fh:
        json.dump(table.metadata(), fh, indent=2, sort_keys=True)
    return Path(f"{stem}.table.csv"), Path(f"{stem}.meta.json")


def load_table(stem):
    stem = str(stem)
    if stem.endswith(".table.csv"):
        stem = stem[: -len(".table.csv")]
    with open(f"{stem}.meta.json") as fh:
        meta = json.load(fh)
    data = np.loadtxt(f"{stem}.table.csv", delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    d = meta["d_theta"]
    known = {"simulator", "sampler", "seed", "T", "d_theta", "d_x", "n_truncated",
             "n_retries", "fingerprint"}
    return ReferenceTable(data[:, :d].copy(), data[:, d:].copy(), meta["simulator"],
                          meta["sampler"], meta["seed"], meta["n_truncated"], meta["n_retries"],
                          {k: v for k, v in meta.items() if k not in known})


# ------------------------------------------------------------------ standardization

@dataclass
class Standardizer:
    theta_mean: np.ndarray
    theta_sd: np.ndarray
    x_mean: np.ndarray
    x_sd: np.ndarray

    def apply_theta(self, theta):
        return (theta - self.theta_mean) / self.theta_sd

    def invert_theta(self, theta):
        return theta * self.theta_sd + self.theta_mean

    def apply_x(self, x):
        return (x - self.x_mean) / self.x_sd

    def invert_x(self, x):
        return x * self.x_sd + self.x_mean

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("theta_mean", "theta_sd", "x_mean", "x_sd")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.array(d[k], dtype=np.float64) for k in ("theta_mean", "theta_sd", "x_mean", "x_sd")))


def _column_scaling(a):
    mean = a.mean(axis=0)
    sd = a.std(axis=0)
    flat = ~(sd > 0)
    # constant columns pass through untouched
    return np.where(flat, 0.0, mean), np.where(flat, 1.0, sd)


def fit_standardizer(table):
    if table.T < 2:
        raise ValueError("standardization needs at least two rows")
    return Standardizer(*_column_scaling(table.theta), *_column_scaling(table.x))


# ------------------------------------------------------------------ batching

@dataclass
class Batch:
    theta: np.ndarray
    x: np.ndarray
    z: np.ndarray


def next_batch(theta, x, B, rng, d_z=None, indices=None):
    """Rows drawn uniformly with replacement plus fresh N(0, I) noise.

    ``indices`` overrides the row draw (used by tests).
    """
    if B < 1:
        raise ValueError("batch size must be >= 1")
    if indices is None:
        indices = rng.integers(0, len(theta), size=B)
    d_z = theta.shape[1] if d_z is None else d_z
    z = rng.standard_normal((len(indices), d_z))
    return Batch(theta[indices], x[indices], z)


def generator_inputs(z, x):
    return np.hstack([z, x])


def critic_inputs(theta, x):
    return np.hstack([theta, x])


def eval_generator(net, z, x):
    return forward(net, generator_inputs(z, x), mode="eval")[0]
