"""Rejection ABC baselines: keep the table rows whose datasets are closest to x0.

Two discrepancies are provided.  ``ss`` compares summary statistics after
scaling each coordinate by its table-wide standard deviation; ``w2`` treats a
dataset as a cloud of points and computes the exact 2-Wasserstein distance
between the two empirical measures.
"""
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.optimize import linear_sum_assignment

from .models import get_model


def accept_count(q, T):
    if not 0 < q <= 1:
        raise ValueError(f"accept fraction must lie in (0, 1], got {q}")
    # round away float noise such as 0.07 * 100 = 7.000000000000001
    return max(1, math.ceil(round(q * T, 9)))


def rejection_abc(theta, distances, q):
    """The ceil(q T) rows of ``theta`` with the smallest distances, ties broken
    by row index."""
    distances = np.asarray(distances, dtype=np.float64).ravel()
    if len(distances) != len(theta):
        raise ValueError("need one distance per table row")
    k = accept_count(q, len(theta))
    order = np.argsort(distances, kind="stable")[:k]
    return np.asarray(theta)[order]


# ------------------------------------------------------------------ summary statistics

def ss_distance(s_fn, x, x0, scale=None):
    """Euclidean distance between summaries, coordinates divided by ``scale``."""
    d = np.asarray(s_fn(x), dtype=np.float64) - np.asarray(s_fn(x0), dtype=np.float64)
    if scale is not None:
        d = d / scale
    return float(np.sqrt(np.sum(d * d)))


def summaries(model, xs):
    xs = np.atleast_2d(xs)
    if model.name == "gauss_toy":
        return model.summary(xs)
    return np.array([model.summary(x) for x in xs])


def summary_scale(S):
    sd = S.std(axis=0, ddof=1) if len(S) > 1 else np.ones(S.shape[1])
    return np.where(sd > 0, sd, 1.0)


def ss_distances(model, table, x0):
    """Distances from every table row to x0, plus the scale vector used."""
    S = summaries(model, table.x)
    scale = summary_scale(S)
    s0 = summaries(model, x0)[0]
    diff = (S - s0) / scale
    return np.sqrt(np.sum(diff * diff, axis=1)), scale


# ------------------------------------------------------------------ Wasserstein

def w2_distance(a, b):
    """Exact 2-Wasserstein distance between two equal-size point clouds.

    With uniform weights and equal counts the optimal coupling is a
    permutation, so this is an assignment problem on squared Euclidean costs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise ValueError(f"point clouds differ in shape: {a.shape} vs {b.shape}")
    if a.shape[1] == 1:
        return w2_sorted(a[:, 0], b[:, 0])
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(math.fsum(cost[rows, cols]))


def w2_sorted(a, b):
    """1-d case: the optimal plan matches order statistics."""
    a, b = np.sort(a), np.sort(b)
    if a.shape != b.shape:
        raise ValueError("samples differ in length")
    return math.sqrt(math.fsum((a - b) ** 2))


def point_cloud(model, x):
    return np.asarray(x, dtype=np.float64).reshape(-1, model.point_dim)


def _w2_rows(model_name, xs, x0):
    model = get_model(model_name)
    p0 = point_cloud(model, x0)
    return np.array([w2_distance(point_cloud(model, x), p0) for x in xs])


def w2_distances(model, table, x0, workers=1):
    if workers <= 1 or table.T < 2 * workers:
        return _w2_rows(model.name, table.x, x0)
    chunks = np.array_split(table.x, workers)
    with ProcessPoolExecutor(workers) as ex:
        parts = list(ex.map(_w2_rows, [model.name] * len(chunks), chunks, [x0] * len(chunks)))
    return np.concatenate(parts)


def run_abc(model, table, x0, method="ss", q=0.01, workers=1):
    """Accepted parameter draws and a small metadata dict."""
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.size != table.d_x:
        raise ValueError(f"observed data has length {x0.size}, table rows have {table.d_x}")
    meta = {"method": method, "q": q, "T": table.T, "accepted": accept_count(q, table.T)}
    if method == "ss":
        dist, scale = ss_distances(model, table, x0)
        meta["summary_scale"] = "table sd"
        meta["scale"] = scale.tolist()
    elif method == "w2":
        dist = w2_distances(model, table, x0, workers)
        meta["point_dim"] = model.point_dim
    else:
        raise ValueError(f"unknown ABC method {method!r}")
    return rejection_abc(table.theta, dist, q), meta
