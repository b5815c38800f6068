import json
import subprocess
import sys

import numpy as np
import pytest

from robustpipe.cli import main


def _run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as e:
        return e.code


@pytest.fixture
def moons_csv(tmp_path):
    p = tmp_path / "moons.csv"
    assert _run("gen-data", "two-moons", "--n", 60, "--n-eval", 30, "--gap", "45:135", "--shift", "0.3,10deg", "--seed", 1, "--out", p) == 0
    return p


class TestGenData:
    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert _run("gen-data", "two-moons", "--n", 40, "--label-noise", 0.2, "--seed", 3, "--out", p) == 0
        assert a.read_bytes() == b.read_bytes()
        cols = json.loads((tmp_path / "a.columns.json").read_text())
        assert cols["features"] == ["x0", "x1"] and cols["target"] == "y"

    @pytest.mark.parametrize("kind", ["blobs", "preferences"])
    def test_other_generators(self, tmp_path, kind):
        assert _run("gen-data", kind, "--n", 30, "--out", tmp_path / f"{kind}.csv") == 0

    @pytest.mark.parametrize("flag", [["--gap", "120:30"], ["--gap", "abc"], ["--shift", "1"]])
    def test_bad_flags_exit_two(self, tmp_path, flag):
        assert _run("gen-data", "two-moons", *flag, "--out", tmp_path / "x.csv") == 2

    def test_out_of_range_gap_exits_two(self, tmp_path):
        assert _run("gen-data", "two-moons", "--gap", "-10:200", "--out", tmp_path / "x.csv") == 2


class TestTrain:
    def test_outputs(self, moons_csv, tmp_path, capsys):
        out = tmp_path / "run"
        assert _run("train", "--data", moons_csv, "--epochs", 2, "--out", out) == 0
        for name in ("trial.json", "report.csv", "epochs.csv", "config.json", "decision_boundary.png"):
            assert (out / name).exists()
        assert "active stages: none" in capsys.readouterr().out

    def test_byte_identical_rerun(self, moons_csv, tmp_path):
        outs = [tmp_path / "r1", tmp_path / "r2"]
        for o in outs:
            assert _run("train", "--data", moons_csv, "--epochs", 2, "--no-plots", "--out", o, "--recover", "kl_dro") == 0
        for name in ("trial.json", "report.csv", "epochs.csv", "config.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_recover_activates_one_stage(self, moons_csv, tmp_path):
        out = tmp_path / "r"
        assert _run("train", "--data", moons_csv, "--epochs", 1, "--no-plots", "--recover", "vrm", "--sigma", 0.1, "--out", out) == 0
        flags = json.loads((out / "trial.json").read_text())["stage_flags"]
        assert flags == {"enrich": True, "input": False, "label": False, "aggregate": False}

    def test_config_file_and_resolved_rerun(self, tmp_path, moons_csv):
        cfg = {"schema": 1, "seed": 4, "data": {"path": str(moons_csv)}, "preset": "vrm+w_dro", "train": {"epochs": 2}, "plots": False}
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg))
        assert _run("train", p, "--out", tmp_path / "a") == 0
        assert _run("train", tmp_path / "a" / "config.json", "--out", tmp_path / "b") == 0
        assert (tmp_path / "a" / "trial.json").read_bytes() == (tmp_path / "b" / "trial.json").read_bytes()

    def test_generator_config(self, tmp_path):
        cfg = {"schema": 1, "data": {"generator": "blobs", "params": {"n": 40, "seed": 1}}, "train": {"epochs": 1}, "plots": False}
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg))
        assert _run("train", p, "--out", tmp_path / "o") == 0

    def test_divergence_exits_one(self, tmp_path):
        p = tmp_path / "huge.csv"
        rows = "\n".join(f"{x:.3f},1e200" for x in np.linspace(-1, 1, 20))
        p.write_text("x0,y\n" + rows + "\n")
        (tmp_path / "huge.columns.json").write_text(json.dumps({"features": ["x0"], "target": "y", "task": "regression"}))
        out = tmp_path / "o"
        assert _run("train", "--data", p, "--epochs", 2, "--selection", "brier:train", "--out", out) == 1
        assert json.loads((out / "trial.json").read_text())["diverged"] is True

    @pytest.mark.parametrize(
        "cfg",
        [{"schema": 1, "learning_rate": 0.1}, {"schema": 2}, {"schema": 1, "spec": {"rho": "big"}}],
    )
    def test_bad_config_exits_two(self, tmp_path, moons_csv, cfg):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg))
        assert _run("train", p, "--data", moons_csv) == 2

    def test_usage_errors(self, tmp_path, moons_csv):
        assert _run("train") == 2
        assert _run("train", "--data", tmp_path / "missing.csv") == 2
        assert _run("train", "--data", moons_csv, "--recover", "dropout") == 2
        assert _run("train", "--data", moons_csv, "--tau", -1, "--agg-stance", "pessimistic") == 2
        assert _run("frobnicate") == 2


class TestHpo:
    def test_search_and_rerun_best(self, moons_csv, tmp_path):
        out = tmp_path / "h"
        assert _run("hpo", "--data", moons_csv, "--n-trials", 3, "--epochs", 2, "--out", out) == 0
        assert len((out / "history.jsonl").read_text().splitlines()) == 3
        curve = (out / "running_best.csv").read_text().splitlines()[1:]
        vals = [float(r.split(",")[1]) for r in curve]
        assert vals == sorted(vals, reverse=True)
        assert (out / "running_best.png").exists()
        best = json.loads((out / "best_config.json").read_text())
        history = [json.loads(line) for line in (out / "history.jsonl").read_text().splitlines()]
        assert best["spec"] in [h["spec"] for h in history]
        assert _run("train", out / "best_config.json", "--out", tmp_path / "t") == 0


class TestShapley:
    def test_additive_mode(self, tmp_path):
        out = tmp_path / "s"
        assert _run("shapley", "--players", "vrm,ls,kl_dro", "--additive", "vrm=0.1,ls=0.2,kl_dro=-0.05", "--out", out) == 0
        assert len((out / "coalitions.csv").read_text().splitlines()) == 9
        doc = json.loads((out / "indices.json").read_text())
        assert doc["shapley"] == pytest.approx({"vrm": 0.1, "ls": 0.2, "kl_dro": -0.05}, abs=1e-12)
        assert all(abs(v) < 1e-10 for v in doc["fsii_pairs"].values())
        assert sum(doc["shapley"].values()) == pytest.approx(doc["grand_minus_empty"], abs=1e-12)

    def test_trained_game(self, moons_csv, tmp_path):
        out = tmp_path / "s"
        assert _run("shapley", "--data", moons_csv, "--players", "vrm,w_dro", "--seeds", 1, "--epochs", 1, "--no-plots", "--out", out) == 0
        assert len((out / "coalitions.csv").read_text().splitlines()) == 5

    def test_errors(self, tmp_path):
        assert _run("shapley", "--players", "vrm,dropout", "--additive", "vrm=1,dropout=1", "--out", tmp_path) == 2
        assert _run("shapley", "--players", "w_dro,w_dfo", "--additive", "w_dro=1,w_dfo=1", "--out", tmp_path) == 2
        assert _run("shapley", "--players", "vrm,ls", "--additive", "vrm=1", "--out", tmp_path) == 2
        assert _run("shapley", "--players", "vrm", "--tuned-from", tmp_path / "none", "--additive", "vrm=1", "--out", tmp_path) == 2


class TestVerifyAndCompare:
    @pytest.mark.parametrize("suite", ["closedform", "gradients", "aggregation", "labels", "metrics", "shapley"])
    def test_suites_pass(self, suite, capsys):
        assert _run("verify", suite) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_unknown_suite(self):
        assert _run("verify", "everything") == 2

    def test_compare(self, moons_csv, tmp_path):
        out = tmp_path / "c"
        assert _run("compare", "--data", moons_csv, "--presets", "erm,vrm+w_dro", "--seeds", 2, "--epochs", 1, "--out", out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["mean_test_ood_accuracy"]) == {"erm", "vrm+w_dro"}
        assert (out / "decision_boundaries.png").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "robustpipe", "verify", "metrics"], capture_output=True, text=True)
    assert res.returncode == 0 and "2/2 checks passed" in res.stdout
