import json
import math

import numpy as np
import pytest

from bayesgan.cli import main
from bayesgan.models import get_model, write_observed
from bayesgan.refine import WeightedPosterior
from bayesgan.rng import rng_stream

TINY_NETS = "gen_hidden = 16, 16\ncritic_hidden = 16, 16\n"
TINY = f"""[experiment]
simulator = gauss_toy
seed = 1

[table]
T = 400

[bgan]
batch_size = 100
epochs = 2
n_critic = 2
{TINY_NETS}
[refine]
batch_size = 100
epochs = 1
n_critic = 2
T2 = 300
M = 150
n_density = 300
{TINY_NETS}
[avb]
batch_size = 100
epochs = 1
n_critic = 2
{TINY_NETS}"""


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.strip(), err


@pytest.fixture
def files(tmp_path):
    m = get_model("gauss_toy")
    (tmp_path / "tiny.ini").write_text(TINY)
    write_observed(tmp_path / "x0.csv", m.simulate(m.theta0, rng_stream(0))[0])
    write_observed(tmp_path / "x0b.csv", m.simulate(m.theta0, rng_stream(1))[0])
    write_observed(tmp_path / "short.csv", np.zeros(5))
    return tmp_path


# ------------------------------------------------------------------ table

def test_table_minimal_and_repeatable(files, capsys):
    (files / "min.ini").write_text("[experiment]\nsimulator = gauss_toy\n[table]\nT = 10\n")
    code, out, _ = run(["table", files / "min.ini", "--out", files / "a"], capsys)
    assert code == 0
    lines = (files / "a").joinpath(out.split("/")[-1], "table.table.csv").read_text().splitlines()
    assert len(lines) == 11 and lines[0].startswith("theta_1,")
    run(["table", files / "min.ini", "--out", files / "b"], capsys)
    for name in ("table.table.csv", "table.meta.json", "config.ini"):
        a = next((files / "a").glob(f"*/{name}")).read_bytes()
        b = next((files / "b").glob(f"*/{name}")).read_bytes()
        assert a == b
    meta = json.loads(next((files / "a").glob("*/table.meta.json")).read_text())
    assert "config_hash" in meta and meta["T"] == 10


def test_table_config_errors(files, capsys):
    (files / "bad.ini").write_text("[experiment]\nseed = 3\n")
    code, _, err = run(["table", files / "bad.ini"], capsys)
    assert code == 2 and "simulator" in err
    (files / "bad2.ini").write_text("[experiment]\nsimulator = gauss_toy\n[table]\nT = lots\n")
    code, _, err = run(["table", files / "bad2.ini"], capsys)
    assert code == 2 and "line 4" in err


# ------------------------------------------------------------------ train

def test_bgan_checkpoint_ignores_x0(files, capsys):
    _, d1, _ = run(["train", "--method", "bgan", files / "tiny.ini", "--x0", files / "x0.csv",
                    "--out", files / "r"], capsys)
    _, d2, _ = run(["train", "--method", "bgan", files / "tiny.ini", "--x0", files / "x0b.csv",
                    "--out", files / "r"], capsys)
    assert d1 != d2
    ckpt = [(files / "r" / d.split("/")[-1] / "bgan.generator.json").read_bytes() for d in (d1, d2)]
    assert ckpt[0] == ckpt[1]
    prov = json.loads(ckpt[0])["provenance"]
    assert prov["seed"] == 1 and len(prov["config_hash"]) == 12


def test_two_step_weights_not_all_equal(files, capsys):
    code, d, _ = run(["train", "--method", "bgan-2s", files / "tiny.ini", "--x0", files / "x0.csv",
                      "--out", files / "r"], capsys)
    assert code == 0
    wp = WeightedPosterior.from_csv(f"{d}/bgan-2s.samples.csv")
    assert wp.M == 150 and len(np.unique(wp.weights)) > 1
    prov = json.loads(open(f"{d}/bgan-2s.provenance.json").read())
    assert prov["weights"] == "kde" and prov["training"]["method"] == "bgan-2s"


def test_train_errors(files, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--method", "bgan-xl", str(files / "tiny.ini"), "--x0", str(files / "x0.csv")])
    assert exc.value.code == 2
    assert "invalid choice" in capsys.readouterr().err
    code, _, err = run(["train", "--method", "bgan", files / "tiny.ini", "--x0", files / "short.csv",
                        "--out", files / "r"], capsys)
    assert code == 2 and "expects 8 values" in err


# ------------------------------------------------------------------ abc and eval

@pytest.fixture
def table_stem(files, capsys):
    _, d, _ = run(["table", files / "tiny.ini", "--out", files / "t"], capsys)
    return f"{d}/table"


@pytest.mark.parametrize("method", ["ss", "w2"])
def test_abc_rows(files, table_stem, capsys, method):
    _, d, _ = run(["abc", "--method", method, "--table", table_stem, "--x0", files / "x0.csv",
                   "--out", files / "a"], capsys)
    assert WeightedPosterior.from_csv(f"{d}/abc-{method}.samples.csv").M == math.ceil(0.01 * 400)
    _, d, _ = run(["abc", "--method", method, "--q", "0.07", "--table", table_stem, "--x0",
                   files / "x0.csv", "--out", files / "a"], capsys)
    assert WeightedPosterior.from_csv(f"{d}/abc-{method}.samples.csv").M == 28
    code, _, err = run(["abc", "--method", method, "--q", "1.5", "--table", table_stem, "--x0",
                        files / "x0.csv"], capsys)
    assert code == 2 and "fraction" in err


def test_eval_reports(files, table_stem, capsys):
    _, d, _ = run(["abc", "--method", "ss", "--q", "0.1", "--table", table_stem, "--x0", files / "x0.csv",
                   "--out", files / "a"], capsys)
    samples = f"{d}/abc-ss.samples.csv"
    theta0 = "-0.7,-2.9,-1,-0.9,0.6"
    _, e, _ = run(["eval", samples, "--theta0", theta0, "--out", files / "e"], capsys)
    rep = json.loads(open(f"{e}/report.json").read())
    assert len(rep) == 1 and rep[0]["method"] == "abc-ss"
    head = open(f"{e}/comparison.csv").readline().strip()
    assert head == "method,parameter,bias,ci_width,coverage"
    _, e2, _ = run(["eval", samples, "--theta0", theta0, "--reference", samples, "--fold", "3,4",
                    "--out", files / "e"], capsys)
    assert open(f"{e2}/comparison.csv").readline().strip().endswith(",mmd")
    with pytest.raises(SystemExit):
        main(["eval", samples])
    code, _, err = run(["eval", samples, "--theta0", "1,2"], capsys)
    assert code == 2 and "parameters" in err


# ------------------------------------------------------------------ reproduce

def test_reproduce_smoke_is_byte_identical(tmp_path, capsys):
    dirs = []
    for root in ("one", "two"):
        code, d, _ = run(["reproduce", "--experiment", "toy", "--scale", "smoke", "--seed", "3",
                          "--out", tmp_path / root], capsys)
        assert code == 0
        dirs.append(tmp_path / root / d.split("/")[-1])
    a, b = dirs
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        if n != "timings.json":
            assert (a / n).read_bytes() == (b / n).read_bytes(), n
    timings = json.loads((a / "timings.json").read_text())
    assert {"bgan", "bgan-2s", "bgan-vb", "abc-ss", "abc-w2", "table", "oracle"} <= set(timings)
    rows = (a / "comparison.csv").read_text().splitlines()
    assert rows[0].endswith(",mmd") and len(rows) == 1 + 5 * 5
    for gen in a.glob("*.generator.json"):
        prov = json.loads(gen.read_text())["provenance"]
        assert prov["seed"] == 3 and a.name.endswith(prov["config_hash"])


def test_reproduce_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["reproduce", "--experiment", "sir", "--scale", "desk"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["reproduce", "--experiment", "toy", "--scale", "huge"])
