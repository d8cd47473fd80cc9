import csv
import hashlib
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from causalvd.cli import main
from causalvd.data import write_csv
from causalvd.simulate import builtin

from conftest import make_dataset

BASE = ["--outcome", "y", "--hospital", "h", "--group", "g", "--covariates", "x1,x2", "--outcome-kind", "binary"]


@pytest.fixture(scope="module")
def tiny_csv(tmp_path_factory):
    ds = make_dataset(np.random.default_rng(1), 150, 3, 2, 2)
    path = tmp_path_factory.mktemp("data") / "tiny.csv"
    write_csv(ds, path)
    return path


def _digests(folder, names):
    return {n: hashlib.sha256((folder / n).read_bytes()).hexdigest() for n in names}


def test_decompose_stdout(tiny_csv, capsys):
    assert main(["decompose", "--data", str(tiny_csv), *BASE, "--scale", "raw"]) == 0
    out = json.loads(capsys.readouterr().out)
    comp = out["components"]
    assert len(comp) == 9 and all(isinstance(v, float) for v in comp.values())
    assert math.fsum(v for k, v in comp.items() if k != "total") == pytest.approx(comp["total"], rel=1e-10)
    assert out["multiplier"] == 100.0


def test_decompose_percent_default(tiny_csv, capsys):
    assert main(["decompose", "--data", str(tiny_csv), *BASE]) == 0
    comp = json.loads(capsys.readouterr().out)["components"]
    assert comp["total"] == 100.0
    assert math.fsum(v for k, v in comp.items() if k != "total") == pytest.approx(100.0)


def test_missing_hospital(tiny_csv, capsys):
    args = ["decompose", "--data", str(tiny_csv), "--outcome", "y", "--group", "g", "--outcome-kind", "binary"]
    assert main(args) == 2
    assert "--hospital" in capsys.readouterr().err


def test_bad_column_named(tiny_csv, capsys):
    args = ["decompose", "--data", str(tiny_csv), *BASE[:2], "--hospital", "nope", *BASE[4:]]
    assert main(args) == 2
    assert "nope" in capsys.readouterr().err


def test_seed_required_for_uncertainty(tiny_csv):
    assert main(["decompose", "--data", str(tiny_csv), *BASE, "--uncertainty", "draws"]) == 2


def test_rank_deficient_exit_3(tmp_path, capsys):
    rows = [{"y": i % 2, "h": "A" if i % 3 else "B", "g": "P" if i % 4 < 2 else "Q", "c": 1.0, "d": 2.0}
            for i in range(60)]
    path = tmp_path / "flat.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    args = ["decompose", "--data", str(path), "--outcome", "y", "--hospital", "h", "--group", "g",
            "--covariates", "c", "--outcome-kind", "binary"]
    assert main(args) == 3


def test_config_file_and_override(tiny_csv, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data = {tiny_csv}\noutcome = y\nhospital = h\ngroup = g\ncovariates = x1, x2\n"
                   "outcome_kind = binary\nscale = percent\n")
    assert main(["decompose", "--config", str(cfg), "--scale", "raw"]) == 0
    assert json.loads(capsys.readouterr().out)["scale"] == "raw"


def test_bootstrap_determinism(tiny_csv, tmp_path):
    names = ["components.json", "components.csv", "replicates.csv"]
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        args = ["decompose", "--data", str(tiny_csv), *BASE, "--uncertainty", "bootstrap", "--B", "1000",
                "--seed", "7", "--out", str(out)]
        assert main(args) == 0
        digests.append(_digests(out, names))
    assert digests[0] == digests[1]
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 7 and len(manifest["inputs"]["data"]["sha256"]) == 64
    res = json.loads((tmp_path / "a" / "components.json").read_text())["uncertainty"]
    assert res["B"] + res["failures"] == 1000


def test_draws_threads_invariant(tiny_csv, tmp_path):
    out = {}
    for t in ("1", "2"):
        d = tmp_path / t
        assert main(["decompose", "--data", str(tiny_csv), *BASE, "--uncertainty", "draws", "--B", "20",
                     "--seed", "3", "--threads", t, "--out", str(d)]) == 0
        out[t] = (d / "replicates.csv").read_bytes()
    assert out["1"] == out["2"]


def test_input_not_mutated(tiny_csv, tmp_path):
    before = tiny_csv.read_bytes()
    main(["decompose", "--data", str(tiny_csv), *BASE, "--out", str(tmp_path / "o")])
    assert tiny_csv.read_bytes() == before


def test_simulate_truth(tmp_path):
    assert main(["simulate", "--scenario", "j5-binary", "--truth", "--seed", "1", "--superpop", "2000",
                 "--out", str(tmp_path)]) == 0
    t = json.loads((tmp_path / "truth.json").read_text())["components"]
    assert len(t) == 9
    assert math.fsum(v for k, v in t.items() if k != "total") == pytest.approx(t["total"], rel=1e-10)


def test_simulate_reps_and_determinism(tmp_path):
    names = ["replicates_n300.csv", "replicates_n300.json", "figure_sampling_distribution.csv", "figure_sd_se.csv"]
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["simulate", "--scenario", "j5-continuous", "--n", "300", "--reps", "2", "--seed", "4",
                     "--draws", "5", "--figure-data", "--superpop", "1000", "--out", str(out)]) == 0
        digests.append(_digests(out, names))
    assert digests[0] == digests[1]
    rows = list(csv.DictReader(open(tmp_path / "a" / "replicates_n300.csv")))
    assert len(rows) == 2
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["error_sd"] == 1.0


def test_simulate_custom_scenario(tmp_path, capsys):
    path = tmp_path / "s.json"
    builtin("j5-binary").save(path)
    assert main(["simulate", "--scenario", str(path), "--n", "300", "--reps", "2", "--seed", "1"]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text('{"J": 5}')
    assert main(["simulate", "--scenario", str(bad), "--truth", "--seed", "1"]) == 2
    bad.write_text("not json")
    assert main(["simulate", "--scenario", str(bad), "--truth", "--seed", "1"]) == 2
    assert main(["simulate", "--scenario", "nowhere.json", "--truth", "--seed", "1"]) == 2


def test_simulate_seed_required():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--scenario", "j5-binary", "--truth"])
    assert exc.value.code == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "causalvd.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout
