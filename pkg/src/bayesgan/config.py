"""Experiment configuration files.

A config is an INI file with one section per stage::

    [experiment]
    simulator = gauss_toy      ; required
    seed = 1
    theta0 = -0.7, -2.9, -1, -0.9, 0.6
    x0_seed = auto             ; or an integer

    [table]
    T = 50000

    [bgan]                     ; any TrainConfig field except seed
    batch_size = 3200
    epochs = 300

    [refine]                   ; TrainConfig fields plus T2, M, weights, rounds, n_density
    [avb]                      ; TrainConfig fields plus init_from, critic_init
    [abc]                      ; q, T (0 = reuse the training table), methods
    [eval]                     ; M, oracle, oracle_iter, fold

Missing sections and keys take the defaults below.  Stage seeds are derived
from ``experiment.seed``.
"""
import configparser
import hashlib
import json
import re
from dataclasses import fields

from .bgan import REFINE_DEFAULTS, TrainConfig
from .models import get_model
from .rng import child_seed


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "seed"]


def _train_defaults(base):
    d = {k: getattr(base, k) for k in _TRAIN_KEYS}
    d["standardize"] = "auto"     # the model's default
    d["d_z"] = 0                  # 0 = same as the parameter dimension
    return d


SCHEMA = {
    "experiment": {"simulator": None, "seed": 0, "theta0": "", "x0_seed": "auto", "workers": 1},
    "table": {"T": 100_000},
    "bgan": _train_defaults(TrainConfig()),
    "refine": {**_train_defaults(REFINE_DEFAULTS),
               "T2": 50_000, "M": 1000, "weights": "auto", "rounds": 1, "n_density": 2000},
    "avb": {**_train_defaults(REFINE_DEFAULTS), "init_from": "bgan-2s", "critic_init": "he_uniform"},
    "abc": {"q": 0.01, "T": 0, "methods": "ss,w2"},
    "eval": {"M": 1000, "oracle": "auto", "oracle_iter": 100_000, "fold": "auto"},
}
REQUIRED = {("experiment", "simulator")}


def _line_of(text, section, key=None):
    """Line number of ``key`` in ``section`` (or of the section header)."""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
        elif key and current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return i
    return None


def _convert(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if isinstance(default, int):
            try:
                return int(raw)
            except ValueError:
                f = float(raw)      # allows 1e5
                if not f.is_integer():
                    raise
                return int(f)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if default is None and raw == "":
            raise ValueError("empty")
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(default).__name__}") from None


def parse_config(text, source="<config>"):
    """Parse config text into a dict of sections with typed values."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(str(err).replace("\n", " ")) from None
    out = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}, line {_line_of(text, section)}: unknown section [{section}]")
    for section, defaults in SCHEMA.items():
        vals = {}
        given = cp[section] if cp.has_section(section) else {}
        for key in given:
            if key not in defaults:
                raise ConfigError(f"{source}, line {_line_of(text, section, key)}: unknown key "
                                  f"'{key}' in section [{section}]")
        for key, default in defaults.items():
            if key in given:
                where = f"{source}, line {_line_of(text, section, key)}, key '{key}'"
                vals[key] = _convert(given[key], default, where)
            elif (section, key) in REQUIRED:
                raise ConfigError(f"{source}: missing required key '{key}' in section [{section}]")
            else:
                vals[key] = default
        out[section] = vals
    try:
        get_model(out["experiment"]["simulator"])
    except KeyError as err:
        raise ConfigError(f"{source}: {err.args[0]}") from None
    return out


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def config_hash(cfg, *extra):
    blob = json.dumps([cfg, *extra], sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def train_config(cfg, section, stage=None):
    """TrainConfig for a stage, with its seed derived from the experiment seed.

    ``standardize`` follows the model default unless the section sets it.
    """
    vals = {k: cfg[section][k] for k in _TRAIN_KEYS}
    std = str(vals["standardize"]).lower()
    if std == "auto":
        vals["standardize"] = get_model(cfg["experiment"]["simulator"]).standardize
    elif std in ("true", "false"):
        vals["standardize"] = std == "true"
    else:
        raise ConfigError(f"[{section}] standardize must be auto, true or false, not {std!r}")
    vals["d_z"] = vals["d_z"] or None
    return TrainConfig(seed=child_seed(cfg["experiment"]["seed"], stage or section), **vals)


def with_overrides(cfg, **sections):
    """Copy of ``cfg`` with some section values replaced."""
    out = {s: dict(v) for s, v in cfg.items()}
    for section, vals in sections.items():
        out[section].update(vals)
    return out


def dump_config(cfg):
    """INI text that parses back to ``cfg``."""
    lines = []
    for section, vals in cfg.items():
        lines.append(f"[{section}]")
        for key, v in vals.items():
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            elif v is None:
                v = ""
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
