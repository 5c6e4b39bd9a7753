"""Command line driver.

    bayesgan table CONFIG
    bayesgan train --method {bgan,bgan-js,bgan-2s,bgan-vb} CONFIG --x0 FILE [--table STEM]
    bayesgan abc --method {ss,w2} --q Q --table STEM --x0 FILE
    bayesgan eval SAMPLES... --theta0 V1,V2,... [--reference FILE]
    bayesgan reproduce --experiment {toy,lv,bnb} --scale {desk,paper,smoke}

Every command takes ``--seed`` and ``--out`` and writes into
``OUT/<command>-<hash>/``, where the hash covers the config and all inputs.
"""
import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .abc import run_abc
from .bgan import save_artifact, write_history
from .config import ConfigError, config_hash, dump_config, load_config, with_overrides
from .evaluation import mmd, posterior_summary, write_comparison
from .models import get_model, read_observed
from .refine import WeightedPosterior, uniform_posterior
from .reftable import load_table, save_table
from .rng import rng_stream

log = logging.getLogger("bayesgan")


class CommandError(Exception):
    pass


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _run_dir(args, command, *inputs):
    return Path(args.out) / f"{command}-{config_hash(*inputs)}"


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_overrides(cfg, experiment={"seed": args.seed})
    return cfg


def _observed(path, model):
    try:
        return read_observed(path, model)
    except ValueError as err:
        raise CommandError(str(err)) from None


def cmd_table(args):
    cfg = _config(args)
    run = _run_dir(args, "table", cfg)
    table = pipeline.build_table(cfg)
    table.meta.update(config_hash=config_hash(cfg))
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.ini").write_text(dump_config(cfg))
    save_table(table, run / "table")
    return run


def cmd_train(args):
    cfg = _config(args)
    model = get_model(cfg["experiment"]["simulator"])
    x0 = _observed(args.x0, model)
    if args.table:
        table = load_table(args.table)
        if table.simulator != model.name:
            raise CommandError(f"table was simulated from {table.simulator}, config says {model.name}")
        table_id = table.fingerprint()
    else:
        table = pipeline.build_table(cfg)
        table_id = "from-config"
    run = _run_dir(args, "train", cfg, args.method, _file_digest(args.x0), table_id)
    res = pipeline.fit_method(args.method, cfg, table, x0)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.ini").write_text(dump_config(cfg))
    stamp = {"config_hash": config_hash(cfg), "seed": cfg["experiment"]["seed"]}
    res.artifact.provenance.update(stamp)
    save_artifact(res.artifact, run / f"{args.method}.generator.json")
    write_history(res.artifact, run / f"{args.method}.loss.csv")
    res.posterior.to_csv(run / f"{args.method}.samples.csv")
    _write_json(run / f"{args.method}.provenance.json", {
        **stamp, "method": args.method, "x0_sha256": _file_digest(args.x0),
        "table": table.metadata(), "generator_fingerprint": res.artifact.fingerprint(),
        "weights": res.posterior.method, "ess": res.posterior.ess,
        "training": res.artifact.provenance})
    return run


def cmd_abc(args):
    table = load_table(args.table)
    model = get_model(table.simulator)
    x0 = _observed(args.x0, model)
    seed = 0 if args.seed is None else args.seed     # ABC itself draws no random numbers
    run = _run_dir(args, "abc", args.method, args.q, table.fingerprint(), _file_digest(args.x0), seed)
    acc, meta = run_abc(model, table, x0, args.method, args.q, args.workers)
    run.mkdir(parents=True, exist_ok=True)
    uniform_posterior(acc, f"abc-{args.method}").to_csv(run / f"abc-{args.method}.samples.csv")
    _write_json(run / f"abc-{args.method}.provenance.json", {
        "config_hash": run.name.split("-", 1)[1], "seed": seed, "method": args.method,
        "table": table.metadata(), "x0_sha256": _file_digest(args.x0), **meta})
    return run


def _parse_vector(text, flag):
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise CommandError(f"{flag}: cannot read {text!r} as comma-separated numbers") from None


def cmd_eval(args):
    theta0 = _parse_vector(args.theta0, "--theta0")
    seed = 0 if args.seed is None else args.seed
    fold = tuple(int(i) - 1 for i in args.fold.split(",") if i.strip()) if args.fold else ()
    ref = WeightedPosterior.from_csv(args.reference).draws if args.reference else None
    digests = [_file_digest(p) for p in args.samples]
    run = _run_dir(args, "eval", digests, list(theta0), args.reference and _file_digest(args.reference),
                   fold, seed)
    reports = []
    for path in args.samples:
        name = Path(path).name.split(".")[0]
        wp = WeightedPosterior.from_csv(path, name)
        if wp.d_theta != theta0.size:
            raise CommandError(f"{path} has {wp.d_theta} parameters but --theta0 has {theta0.size}")
        rep = posterior_summary(wp, theta0, name, seed, fold)
        if ref is not None:
            rep.mmd = mmd(wp.resample(len(ref), rng_stream(seed)), ref)
        rep.extra = {"ess": wp.ess, "source": str(path)}
        reports.append(rep)
    run.mkdir(parents=True, exist_ok=True)
    _write_json(run / "report.json", [r.to_dict() for r in reports])
    write_comparison(reports, run / "comparison.csv")
    return run


def cmd_reproduce(args):
    cfg = pipeline.preset(args.experiment, args.scale, args.seed or 0)
    cfg = with_overrides(cfg, experiment={"workers": args.workers})
    return pipeline.reproduce(cfg, args.out, f"{args.experiment}-{args.scale}")


def build_parser():
    p = argparse.ArgumentParser(prog="bayesgan", description="GAN-based posterior sampling for simulators")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="overrides experiment.seed")
        sp.add_argument("--out", default="runs", help="parent of the run directory (default: runs)")
        sp.add_argument("--workers", type=int, default=1)
        return sp

    sp = common(sub.add_parser("table", help="simulate a reference table"))
    sp.add_argument("config")
    sp.set_defaults(func=cmd_table)

    sp = common(sub.add_parser("train", help="train a generator and sample the posterior at x0"))
    sp.add_argument("--method", required=True, choices=pipeline.GAN_METHODS)
    sp.add_argument("config")
    sp.add_argument("--x0", required=True, help="one-row CSV of observed data")
    sp.add_argument("--table", help="stem of a saved table (default: simulate from the config)")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("abc", help="rejection ABC baseline"))
    sp.add_argument("--method", required=True, choices=["ss", "w2"])
    sp.add_argument("--q", type=float, default=0.01, help="accepted fraction (default 0.01)")
    sp.add_argument("--table", required=True)
    sp.add_argument("--x0", required=True)
    sp.set_defaults(func=cmd_abc)

    sp = common(sub.add_parser("eval", help="summarize sample files against the true parameter"))
    sp.add_argument("samples", nargs="+")
    sp.add_argument("--theta0", required=True, help="comma-separated true parameter")
    sp.add_argument("--reference", help="reference draws; adds an MMD column")
    sp.add_argument("--fold", default="", help="1-based coordinates compared in absolute value, e.g. 3,4")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("reproduce", help="run a whole experiment"))
    sp.add_argument("--experiment", required=True, choices=sorted(pipeline.EXPERIMENTS))
    sp.add_argument("--scale", required=True, choices=["desk", "paper", "smoke"])
    sp.set_defaults(func=cmd_reproduce)
    return p


def _glue_vectors(argv):
    """Turn ``--theta0 -0.7,1`` into ``--theta0=-0.7,1`` so argparse does not
    mistake a leading minus sign for an option."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--theta0" and i + 1 < len(argv) and argv[i + 1][:2] not in ("--", ""):
            out.append(f"--theta0={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_glue_vectors(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s:%(name)s:%(message)s")
    try:
        run = args.func(args)
    except (ConfigError, CommandError, ValueError, FileNotFoundError) as err:
        print(f"bayesgan {args.command}: error: {err}", file=sys.stderr)
        return 2
    print(run)
    return 0


if __name__ == "__main__":
    sys.exit(main())
