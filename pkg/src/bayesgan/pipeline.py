"""Experiment recipes shared by the command line and the acceptance tests.

Each stage takes the parsed config dict (see :mod:`bayesgan.config`) and
derives its own seed from ``experiment.seed``, so any stage can be rerun alone
and gives the same result.
"""
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .abc import run_abc
from .avb import avb_posterior, train_avb
from .bgan import sample_posterior, save_artifact, train_bgan, train_bgan_js, write_history
from .config import SCHEMA, config_hash, dump_config, train_config, with_overrides
from .evaluation import mmd, posterior_summary, true_posterior_toy, write_comparison
from .models import get_model, write_observed
from .refine import run_two_step, uniform_posterior
from .reftable import PriorSampler, feature_table, generate_table
from .rng import child_seed, rng_stream

log = logging.getLogger(__name__)

GAN_METHODS = ("bgan", "bgan-js", "bgan-2s", "bgan-vb")
EXPERIMENTS = {"toy": "gauss_toy", "lv": "lotka_volterra", "bnb": "boom_bust"}

_SMOKE_NETS = {"gen_hidden": (32, 32), "critic_hidden": (32, 32)}

# Overrides on top of the config defaults, which already hold the full-size toy settings.
PRESETS = {
    ("toy", "paper"): {},
    ("toy", "desk"): {"table": {"T": 50_000},
                      "bgan": {"batch_size": 3200, "epochs": 300},
                      "refine": {"epochs": 50}, "avb": {"epochs": 50}},
    ("toy", "smoke"): {"table": {"T": 2000},
                       "bgan": {"batch_size": 200, "epochs": 3, "n_critic": 5, **_SMOKE_NETS},
                       "refine": {"batch_size": 200, "epochs": 2, "n_critic": 5, "T2": 1000, "M": 200,
                                  "n_density": 500, **_SMOKE_NETS},
                       "avb": {"batch_size": 200, "epochs": 2, "n_critic": 5, **_SMOKE_NETS},
                       "eval": {"M": 200, "oracle_iter": 20_000}},
    ("lv", "paper"): {"table": {"T": 1_000_000},
                      "bgan": {"batch_size": 12_800, "gen_hidden": (256, 256, 128),
                               "critic_hidden": (256, 256, 128)}},
    ("lv", "desk"): {"table": {"T": 100_000},
                     "bgan": {"batch_size": 10_000, "epochs": 200, "gen_hidden": (256, 256, 128),
                              "critic_hidden": (256, 256, 128)},
                     "refine": {"epochs": 50}, "avb": {"epochs": 50}},
    ("lv", "smoke"): {"table": {"T": 300},
                      "bgan": {"batch_size": 100, "epochs": 2, "n_critic": 2, **_SMOKE_NETS},
                      "refine": {"batch_size": 100, "epochs": 1, "n_critic": 2, "T2": 200, "M": 100,
                                 "n_density": 300, **_SMOKE_NETS},
                      "avb": {"batch_size": 100, "epochs": 1, "n_critic": 2, **_SMOKE_NETS},
                      "abc": {"q": 0.05}, "eval": {"M": 100}},
    ("bnb", "paper"): {"table": {"T": 500_000}, "bgan": {"epochs": 2000}},
    ("bnb", "desk"): {"table": {"T": 50_000},
                      "bgan": {"batch_size": 3200, "epochs": 300},
                      "refine": {"epochs": 50}, "avb": {"epochs": 50}},
    ("bnb", "smoke"): {"table": {"T": 1000},
                       "bgan": {"batch_size": 200, "epochs": 2, "n_critic": 3, **_SMOKE_NETS},
                       "refine": {"batch_size": 200, "epochs": 1, "n_critic": 3, "T2": 500, "M": 200,
                                  "n_density": 500, **_SMOKE_NETS},
                       "avb": {"batch_size": 200, "epochs": 1, "n_critic": 3, **_SMOKE_NETS},
                       "eval": {"M": 200}},
}


def preset(experiment, scale, seed=0):
    if (experiment, scale) not in PRESETS:
        raise ValueError(f"no preset for experiment {experiment!r} at scale {scale!r}")
    base = {s: dict(v) for s, v in SCHEMA.items()}
    base["experiment"]["simulator"] = EXPERIMENTS[experiment]
    base["experiment"]["seed"] = int(seed)
    return with_overrides(base, **PRESETS[(experiment, scale)])


# ------------------------------------------------------------------ stages

def theta0_of(cfg):
    model = get_model(cfg["experiment"]["simulator"])
    raw = cfg["experiment"]["theta0"]
    if not raw:
        return model.theta0.copy()
    vals = np.array([float(v) for v in str(raw).split(",")])
    if vals.size != model.d_theta:
        raise ValueError(f"theta0 needs {model.d_theta} values, got {vals.size}")
    return vals


def observed_data(cfg):
    """(theta0, x0): x0 is simulated at theta0 from a dedicated seed."""
    model = get_model(cfg["experiment"]["simulator"])
    theta0 = theta0_of(cfg)
    x0_seed = cfg["experiment"]["x0_seed"]
    x0_seed = child_seed(cfg["experiment"]["seed"], "x0") if str(x0_seed) == "auto" else int(x0_seed)
    return theta0, model.simulate(theta0, rng_stream(x0_seed))[0]


def build_table(cfg, T=None):
    model = get_model(cfg["experiment"]["simulator"])
    return generate_table(PriorSampler(model.prior), model, T or cfg["table"]["T"],
                          child_seed(cfg["experiment"]["seed"], "table"), cfg["experiment"]["workers"])


@dataclass
class MethodResult:
    method: str
    posterior: object
    artifact: object = None
    extras: dict = field(default_factory=dict)


def fit_bgan(cfg, table, x0, js=False):
    model = get_model(cfg["experiment"]["simulator"])
    tcfg = train_config(cfg, "bgan")
    art = (train_bgan_js if js else train_bgan)(feature_table(table, model), tcfg)
    name = "bgan-js" if js else "bgan"
    draws = sample_posterior(art, model.features(x0), cfg["refine"]["M"], child_seed(tcfg.seed, "draws"))
    return MethodResult(name, uniform_posterior(draws, name), art)


def fit_two_step(cfg, x0, pilot):
    model = get_model(cfg["experiment"]["simulator"])
    r = cfg["refine"]
    method = None if r["weights"] == "auto" else r["weights"]
    res = run_two_step(model, x0, refine_cfg=train_config(cfg, "refine"), T2=r["T2"], M=r["M"],
                       method=method, seed=child_seed(cfg["experiment"]["seed"], "bgan-2s"),
                       rounds=r["rounds"], pilot=pilot, workers=cfg["experiment"]["workers"],
                       n_density=r["n_density"])
    return MethodResult("bgan-2s", res.posterior, res.artifact, {"two_step": res})


def fit_avb(cfg, x0, two_step, pilot):
    model = get_model(cfg["experiment"]["simulator"])
    a = cfg["avb"]
    init = two_step.artifact if a["init_from"] == "bgan-2s" else pilot
    if a["init_from"] not in ("bgan-2s", "bgan"):
        raise ValueError("avb.init_from must be bgan-2s or bgan")
    xf = model.features(x0)
    art = train_avb(two_step.table, xf, init, train_config(cfg, "avb"), critic_init=a["critic_init"])
    art.provenance["init_from"] = a["init_from"]
    r = cfg["refine"]
    method = None if r["weights"] == "auto" else r["weights"]
    wp = avb_posterior(art, xf, model.prior, two_step.proposal, method, r["M"],
                       child_seed(cfg["experiment"]["seed"], "bgan-vb"), r["n_density"])
    return MethodResult("bgan-vb", wp, art)


def fit_method(method, cfg, table, x0):
    """Train one GAN method; bgan-2s and bgan-vb also run their pilot."""
    if method not in GAN_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {GAN_METHODS}")
    if method in ("bgan", "bgan-js"):
        return fit_bgan(cfg, table, x0, js=method == "bgan-js")
    pilot = fit_bgan(cfg, table, x0)
    two = fit_two_step(cfg, x0, pilot.artifact)
    two.extras["pilot"] = pilot
    if method == "bgan-2s":
        return two
    vb = fit_avb(cfg, x0, two.extras["two_step"], pilot.artifact)
    vb.extras["pilot"] = pilot
    return vb


def fit_abc(cfg, table, x0, method, q=None):
    model = get_model(cfg["experiment"]["simulator"])
    a = cfg["abc"]
    if a["T"] and a["T"] != table.T:
        table = build_table(cfg, a["T"])
    acc, meta = run_abc(model, table, x0, method, q if q is not None else a["q"], cfg["experiment"]["workers"])
    return MethodResult(f"abc-{method}", uniform_posterior(acc, f"abc-{method}"), None, meta)


def fold_of(cfg):
    fold = cfg["eval"]["fold"]
    if fold == "auto":
        return (2, 3) if cfg["experiment"]["simulator"] == "gauss_toy" else ()
    return tuple(int(i) - 1 for i in str(fold).split(",") if i.strip())


def oracle_draws(cfg, x0):
    use = cfg["eval"]["oracle"]
    if use == "auto":
        use = "true" if cfg["experiment"]["simulator"] == "gauss_toy" else "false"
    if use != "true":
        return None
    return true_posterior_toy(x0, cfg["eval"]["M"], child_seed(cfg["experiment"]["seed"], "oracle"),
                              n_iter=cfg["eval"]["oracle_iter"])


def save_result(res, run_dir, stamp, prefix=None):
    prefix = prefix or res.method
    res.posterior.to_csv(run_dir / f"{prefix}.samples.csv")
    if res.artifact is not None:
        res.artifact.provenance.update(stamp)
        save_artifact(res.artifact, run_dir / f"{prefix}.generator.json")
        write_history(res.artifact, run_dir / f"{prefix}.loss.csv")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def reproduce(cfg, out_root, label):
    """Full pipeline: table, every GAN method, both ABC baselines, evaluation.

    Everything except ``timings.json`` is a deterministic function of ``cfg``.
    Returns the run directory.
    """
    run_dir = Path(out_root) / f"{label}-{config_hash(cfg)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(dump_config(cfg))
    model = get_model(cfg["experiment"]["simulator"])
    timings = {}

    def timed(name, fn, *a):
        t = time.perf_counter()
        out = fn(*a)
        timings[name] = time.perf_counter() - t
        log.info("%s done in %.1f s", name, timings[name])
        return out

    theta0, x0 = observed_data(cfg)
    write_observed(run_dir / "x0.csv", x0)
    table = timed("table", build_table, cfg)
    _write_json(run_dir / "table.meta.json", table.metadata())

    results = [timed("bgan", fit_bgan, cfg, table, x0)]
    pilot = results[0].artifact
    results.append(timed("bgan-2s", fit_two_step, cfg, x0, pilot))
    results.append(timed("bgan-vb", fit_avb, cfg, x0, results[1].extras["two_step"], pilot))
    for m in [s.strip() for s in cfg["abc"]["methods"].split(",") if s.strip()]:
        results.append(timed(f"abc-{m}", fit_abc, cfg, table, x0, m))
    stamp = {"config_hash": config_hash(cfg), "seed": cfg["experiment"]["seed"]}
    for res in results:
        save_result(res, run_dir, stamp)

    ref = timed("oracle", oracle_draws, cfg, x0)
    if ref is not None:
        uniform_posterior(ref, "oracle").to_csv(run_dir / "oracle.samples.csv")
    reports = []
    for res in results:
        rep = posterior_summary(res.posterior, theta0, res.method, cfg["experiment"]["seed"],
                                fold_of(cfg), model.param_names)
        if ref is not None:
            draws = res.posterior.resample(len(ref), rng_stream(child_seed(cfg["experiment"]["seed"], "mmd")))
            rep.mmd = mmd(draws, ref)
        rep.extra = {"ess": res.posterior.ess, "weights": res.posterior.method}
        reports.append(rep)
    _write_json(run_dir / "report.json", [r.to_dict() | {"seconds": None} for r in reports])
    write_comparison(reports, run_dir / "comparison.csv")
    _write_json(run_dir / "timings.json", timings)
    return run_dir

