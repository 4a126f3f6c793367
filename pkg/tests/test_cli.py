import json
import subprocess
import sys

import pandas as pd
import pytest

from rdrp.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    for name, seed, n in (("train", 1, 6000), ("cali", 2, 2000), ("test", 3, 2000)):
        assert main(["gen", "--n", str(n), "--seed", str(seed), "--out", str(d / f"{name}.csv"),
                     "--truth", str(d / f"{name}_truth.csv")]) == 0
    assert main(["train", "--data", str(d / "train.csv"), "--epochs", "3", "--out", str(d / "w.npz")]) == 0
    assert main(["calibrate", "--weights", str(d / "w.npz"), "--data", str(d / "cali.csv"), "--passes", "10",
                 "--seed", "4", "--out", str(d / "cal.json")]) == 0
    assert main(["predict", "--weights", str(d / "w.npz"), "--calibration", str(d / "cal.json"),
                 "--data", str(d / "test.csv"), "--truth", str(d / "test_truth.csv"), "--out", str(d / "p.csv")]) == 0
    return d


def test_gen_is_seeded(tmp_path, pipeline):
    assert main(["gen", "--n", "6000", "--seed", "1", "--out", str(tmp_path / "again.csv")]) == 0
    assert (tmp_path / "again.csv").read_bytes() == (pipeline / "train.csv").read_bytes()


def test_predict_output(pipeline):
    frame = pd.read_csv(pipeline / "p.csv")
    assert list(frame.columns) == ["index", "roi_hat", "r_hat", "lo", "hi", "roi_tilde", "tau_r", "tau_c"]
    assert len(frame) == 2000
    assert (frame.lo <= frame.roi_hat).all() and (frame.roi_hat <= frame.hi).all()
    cal = json.loads((pipeline / "cal.json").read_text())
    assert cal["n"] == 2000 and cal["mc"]["seed"] == 4


def test_allocate(capsys, pipeline, tmp_path):
    code, out, _ = run(capsys, "allocate", "--predictions", pipeline / "p.csv", "--budget-fraction", 0.3,
                       "--out", tmp_path / "z.csv")
    assert code == 0
    totals = json.loads(out)
    assert totals["total_cost"] <= totals["budget"]
    z = pd.read_csv(tmp_path / "z.csv")
    assert int(z.z.sum()) == totals["treated"]


def test_allocate_brute_force_matches_greedy_bound(capsys, tmp_path):
    pd.DataFrame({"index": [0, 1, 2], "tau_r": [0.3, 0.2, 0.1], "tau_c": [0.3, 0.4, 0.5]}).to_csv(
        tmp_path / "p.csv", index=False)
    code, out, _ = run(capsys, "allocate", "--predictions", tmp_path / "p.csv", "--budget", 0.7,
                       "--score-column", "truth", "--brute-force", "--out", tmp_path / "z.csv")
    assert code == 0 and json.loads(out)["total_revenue"] == pytest.approx(0.5)


def test_allocate_needs_exactly_one_budget(capsys, pipeline, tmp_path):
    code, _, err = run(capsys, "allocate", "--predictions", pipeline / "p.csv", "--out", tmp_path / "z.csv")
    assert code == 2 and "budget" in err


def test_evaluate(capsys, pipeline, tmp_path):
    code, out, _ = run(capsys, "evaluate", "--data", pipeline / "test.csv", "--predictions", pipeline / "p.csv",
                       "--curve", tmp_path / "c.csv")
    assert code == 0
    result = json.loads(out)
    assert 0 <= result["aucc"] <= 1 and 0 <= result["coverage"] <= 1
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 102


@pytest.mark.parametrize(
    "argv",
    [
        ["evaluate", "--data", "missing.csv", "--predictions", "missing.csv"],
        ["gen", "--n", "0", "--out", "x.csv"],
        ["calibrate", "--weights", "missing.npz", "--data", "missing.csv", "--out", "c.json"],
    ],
)
def test_bad_input_exits_2(capsys, argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(capsys, *argv)
    assert code == 2 and err.startswith("error:")


def test_schema_error_names_the_column(capsys, pipeline, tmp_path):
    pd.read_csv(pipeline / "test.csv").drop(columns=["t"]).to_csv(tmp_path / "bad.csv", index=False)
    code, _, err = run(capsys, "evaluate", "--data", tmp_path / "bad.csv", "--predictions", pipeline / "p.csv")
    assert code == 2 and "t" in err


def test_experiment_subcommand(capsys, tmp_path):
    cfg = {"version": 1, "generator": {"n": 6000}, "settings": ["SuNo"], "methods": ["random", "drp"],
           "seeds": [0], "train": {"epochs": 2}, "output_dir": str(tmp_path / "ignored")}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "experiment", "--config", tmp_path / "cfg.json", "--seed", 1, "--seed", 2,
                       "--out", tmp_path / "out")
    assert code == 0
    assert "SuNo  drp" in out
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["config"]["seeds"] == [1, 2]
    assert not (tmp_path / "ignored").exists()


def test_experiment_invalid_config(capsys, tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"version": 1, "settings": ["Nope"]}))
    code, _, err = run(capsys, "experiment", "--config", tmp_path / "cfg.json")
    assert code == 2 and "settings" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rdrp", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("gen", "train", "calibrate", "predict", "allocate", "evaluate", "experiment"):
        assert sub in proc.stdout
