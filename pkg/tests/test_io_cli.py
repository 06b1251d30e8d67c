import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from momineq import io as mio
from momineq.cli import main
from momineq.exceptions import SchemaError

SMALL = ["--n-markets", "40", "--expectation-draws", "200"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--seed", "42"] + SMALL) == 0
    assert main(["first-stage", "--demand", str(out / "demand.csv"), "--out", str(out / "fs.json")]) == 0
    return out


def test_demand_csv_round_trip(tmp_path, small_dataset):
    path = tmp_path / "d.csv"
    mio.write_demand_csv(small_dataset.demand, path, {"seed": 3})
    back = mio.read_demand_csv(path)
    d = small_dataset.demand
    for name in ("x", "price", "mc", "quantity", "market_size", "instruments", "market", "firm", "product"):
        assert np.array_equal(getattr(back, name), getattr(d, name)), name
    mio.write_demand_csv(back, tmp_path / "again.csv", {"seed": 3})
    assert sha(path) == sha(tmp_path / "again.csv")


def test_events_csv_round_trip(tmp_path, small_dataset):
    mio.write_events_csv(small_dataset.events, tmp_path / "e.csv")
    assert mio.read_events_csv(tmp_path / "e.csv") == small_dataset.events


def test_matrix_and_json_helpers(tmp_path):
    M = np.array([[1.0, -2.5], [0.1, 3.0]])
    mio.write_matrix_csv(M, tmp_path / "m.csv", {"a": 1})
    assert np.array_equal(mio.read_matrix_csv(tmp_path / "m.csv"), M)
    (tmp_path / "r.csv").write_text("1,2\n3\n")
    with pytest.raises(SchemaError):
        mio.read_matrix_csv(tmp_path / "r.csv")
    assert json.loads(mio.dumps_json({"x": np.arange(2), "y": float("inf")})) == {"x": [0, 1], "y": None}


def test_simulate_is_deterministic(tmp_path, simulated):
    again = tmp_path / "again"
    assert main(["simulate", "--out", str(again), "--seed", "42"] + SMALL) == 0
    for name in ("demand.csv", "events.csv", "truth.json"):
        assert sha(again / name) == sha(simulated / name)
    other = tmp_path / "other"
    main(["simulate", "--out", str(other), "--seed", "43"] + SMALL)
    assert sha(other / "demand.csv") != sha(simulated / "demand.csv")


def test_mangled_header_exits_2_without_output(tmp_path, simulated):
    text = (simulated / "demand.csv").read_text().replace("gvwr", "gvw", 1)
    (tmp_path / "bad.csv").write_text(text)
    out = tmp_path / "fs.json"
    assert main(["first-stage", "--demand", str(tmp_path / "bad.csv"), "--out", str(out)]) == 2
    assert not out.exists()


def test_unknown_config_key_exits_2(tmp_path, simulated, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tolerance": 1e-6}))
    code = main(["first-stage", "--demand", str(simulated / "demand.csv"), "--out", str(tmp_path / "x.json"),
                 "--config", str(cfg)])
    assert code == 2
    assert "tolerance" in capsys.readouterr().err


def test_config_values_act_as_defaults(tmp_path, simulated):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_iter": 1}))
    out = tmp_path / "fs.json"
    code = main(["first-stage", "--demand", str(simulated / "demand.csv"), "--out", str(out), "--config", str(cfg)])
    assert code == 4
    assert json.loads(out.read_text())["converged"] is False
    code = main(["first-stage", "--demand", str(simulated / "demand.csv"), "--out", str(out),
                 "--config", str(cfg), "--max-iter", "500"])
    assert code == 0


def test_bad_arguments_exit_2(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--lam", "1.5"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 2


def test_missing_input_exits_3(tmp_path):
    assert main(["first-stage", "--demand", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x")]) == 3


def test_help_lists_flags():
    out = subprocess.run([sys.executable, "-m", "momineq.cli", "confset", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for flag in ("--demand", "--events", "--grid", "--fix", "--alpha", "--workers", "--seed", "--config"):
        assert flag in out


def test_rcc_test_accepts_truth_and_rejects_far_point(tmp_path, simulated, capsys):
    base = ["rcc-test", "--demand", str(simulated / "demand.csv"), "--events", str(simulated / "events.csv"),
            "--first-stage", str(simulated / "fs.json")]
    truth = json.loads((simulated / "truth.json").read_text())
    theta = ",".join(repr(v) for v in [truth["lambda"]] + truth["eta"])
    assert main(base + ["--theta", theta]) == 0
    assert json.loads(capsys.readouterr().out)["reject"] is False
    assert main(base + ["--theta", "1,40,40,40,40", "--out", str(tmp_path / "r.json")]) == 0
    assert json.loads(capsys.readouterr().out)["reject"] is True
    assert json.loads((tmp_path / "r.json").read_text())["reject"] is True
    assert main(base + ["--theta", "1,2"]) == 2


def test_confset_writes_json_and_slice(tmp_path, simulated):
    grid = {"dims": [{"label": "lambda", "min": 0, "max": 1, "count": 3},
                     {"label": "eta_1", "min": 0, "max": 2, "count": 4},
                     {"label": "eta_2", "fixed": 0.2}, {"label": "eta_3", "fixed": 0.1},
                     {"label": "eta_4", "fixed": 0.3}]}
    args = ["confset", "--demand", str(simulated / "demand.csv"), "--events", str(simulated / "events.csv"),
            "--first-stage", str(simulated / "fs.json"), "--grid", json.dumps(grid)]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in ("confset.json", "slice_lambda_eta_1.csv"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)
    rows = [l for l in (tmp_path / "a" / "slice_lambda_eta_1.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 13
    bad = args + ["--out", str(tmp_path / "c"), "--fix", "eta_2=0.25,eta_3=0.1,eta_4=0.3"]
    assert main(bad) == 2


def test_eliminate_without_nuisance_echoes_inputs(tmp_path):
    (tmp_path / "B.csv").write_text("1,0\n0,2\n")
    (tmp_path / "C.csv").write_text("")
    (tmp_path / "d.csv").write_text("0.5\n1.5\n")
    assert main(["eliminate", "--B", str(tmp_path / "B.csv"), "--C", str(tmp_path / "C.csv"),
                 "--d", str(tmp_path / "d.csv"), "--out", str(tmp_path / "o")]) == 0
    assert np.array_equal(mio.read_matrix_csv(tmp_path / "o" / "A.csv"), [[1.0, 0.0], [0.0, 2.0]])
    assert np.array_equal(mio.read_matrix_csv(tmp_path / "o" / "b.csv").ravel(), [0.5, 1.5])


def test_eliminate_with_nuisance(tmp_path):
    (tmp_path / "B.csv").write_text("1\n1\n")
    (tmp_path / "C.csv").write_text("1\n-1\n")
    (tmp_path / "d.csv").write_text("0\n0\n")
    assert main(["eliminate", "--B", str(tmp_path / "B.csv"), "--C", str(tmp_path / "C.csv"),
                 "--d", str(tmp_path / "d.csv"), "--out", str(tmp_path / "o")]) == 0
    A = mio.read_matrix_csv(tmp_path / "o" / "A.csv")
    b = mio.read_matrix_csv(tmp_path / "o" / "b.csv").ravel()
    # C delta >= B mu - d  has a solution iff 2 mu <= 0
    for mu in (-1.0, 0.0, 1.0):
        assert np.all(A @ [mu] <= b + 1e-12) == (mu <= 0)


def test_empty_events_file_is_header_only(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", "--out", str(out), "--event-rate", "0", "--n-markets", "10",
                 "--expectation-draws", "50"]) == 0
    lines = [l for l in (out / "events.csv").read_text().splitlines() if not l.startswith("#")]
    assert lines == ["firm,period,product,kind"]
    assert mio.read_events_csv(out / "events.csv") == []


def test_size_study_cli(tmp_path):
    out = tmp_path / "s.json"
    assert main(["size-study", "--design", "violated", "--reps", "200", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert rec["studies"][0]["rate"] == 1.0
    assert main(["size-study", "--design", "boundary", "--reps", "10", "--out", str(out)]) == 2
