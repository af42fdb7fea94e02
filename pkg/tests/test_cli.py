import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from alssm.bench import cli
from alssm.bench.io import read_params, read_table
from alssm.errors import NumericalError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "exp2", "T": 120, "al": {"mu": 0.0, "p": 0.22, "sigma": 0.162}}))
    assert run("simulate", "--config", cfg, "--seed", 7, "--out", d) == 0
    return d


class TestSimulate:
    def test_outputs(self, simulated):
        obs = read_table(simulated / "observations.csv")
        states = read_table(simulated / "states.csv")
        assert list(obs) == ["t", "y_1"] and len(obs["t"]) == 120
        assert list(states) == ["t", "x_1"]
        theta = read_params(simulated / "model.json")
        assert theta.p[0] == 0.22
        manifest = json.loads((simulated / "manifest.json").read_text())
        assert manifest["seed"] == 7 and len(manifest["config_sha256"]) == 64
        assert "numpy" in manifest["versions"]

    def test_same_seed_same_bytes(self, simulated, tmp_path):
        cfg = simulated / "cfg.json"
        assert run("simulate", "--config", cfg, "--seed", 7, "--out", tmp_path) == 0
        assert (tmp_path / "observations.csv").read_bytes() == (simulated / "observations.csv").read_bytes()


class TestFilterSmooth:
    @pytest.mark.parametrize("method", cli.METHODS)
    def test_filter_shape(self, simulated, tmp_path, method):
        assert run("filter", "--method", method, "--data", simulated / "observations.csv", "--out", tmp_path) == 0
        table = read_table(tmp_path / "filtered.csv")
        assert list(table) == ["t", "xhat_1", "var_1"]
        assert len(table["t"]) == 120 and np.all(table["var_1"] > 0)
        assert (tmp_path / "lambda.csv").exists() == (method in ("fast-al", "exact-al", "laplace"))

    @pytest.mark.parametrize("method", ["fast-al", "kalman"])
    def test_smooth(self, simulated, tmp_path, method):
        assert run("smooth", "--method", method, "--data", simulated / "observations.csv", "--out", tmp_path) == 0
        assert len(read_table(tmp_path / "smoothed.csv")["xhat_1"]) == 120

    def test_smooth_rejects_adaptive(self, simulated, tmp_path):
        assert run("smooth", "--method", "adaptive", "--data", simulated / "observations.csv", "--out", tmp_path) == 2

    def test_json_format(self, simulated, tmp_path):
        assert run("filter", "--format", "json", "--data", simulated / "observations.csv", "--out", tmp_path) == 0
        rows = json.loads((tmp_path / "filtered.json").read_text())
        assert len(rows) == 120 and set(rows[0]) == {"t", "xhat_1", "var_1"}


class TestLearn:
    def test_deterministic_and_replayable(self, simulated, tmp_path):
        cfg = tmp_path / "learn.json"
        cfg.write_text(json.dumps({"learn": {"fixed": ["A", "C", "b", "Q", "pi1", "Sigma1", "mu"],
                                             "outer_max_iters": 40}}))
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run("learn", "--config", cfg, "--seed", 1, "--data", simulated / "observations.csv", "--out", d) == 0
        assert (a / "params.json").read_bytes() == (b / "params.json").read_bytes()
        before = {p.name: p.read_bytes() for p in a.iterdir()}
        assert run("replay", a / "manifest.json") == 0
        assert {p.name: p.read_bytes() for p in a.iterdir()} == before

    def test_rejects_unknown_fixed(self, simulated, tmp_path):
        cfg = tmp_path / "learn.json"
        cfg.write_text(json.dumps({"learn": {"fixed": ["Z"]}}))
        assert run("learn", "--config", cfg, "--data", simulated / "observations.csv", "--out", tmp_path) == 2


class TestDiag:
    def test_outputs(self, tmp_path):
        cfg = tmp_path / "d.json"
        cfg.write_text(json.dumps({"innovation": {"min": -10, "max": 10, "num": 21}}))
        assert run("diag", "--config", cfg, "--out", tmp_path) == 0
        assert list(read_table(tmp_path / "response.csv")) == ["innovation", "exact", "fast_al", "kalman"]
        assert len(read_table(tmp_path / "adaptation.csv")["r"]) == 101


class TestExitCodes:
    def test_missing_config(self, tmp_path):
        assert run("filter", "--config", tmp_path / "none.json", "--out", tmp_path) == 2

    def test_missing_data(self, tmp_path):
        assert run("filter", "--out", tmp_path) == 2

    def test_bad_scenario(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"scenario": "nope"}))
        assert run("simulate", "--config", cfg, "--out", tmp_path) == 2

    def test_negative_seed(self, tmp_path):
        assert run("simulate", "--seed", -1, "--out", tmp_path) == 2

    def test_numerical_failure(self, tmp_path, monkeypatch):
        def boom(args, config, out):
            raise NumericalError("diverged")

        monkeypatch.setitem(cli.COMMANDS, "diag", (boom, "x"))
        assert run("diag", "--out", tmp_path) == 3

    def test_unknown_flag_prints_usage(self):
        proc = subprocess.run([sys.executable, "-m", "alssm.bench", "filter", "--bogus"], capture_output=True, text=True)
        assert proc.returncode == 2 and "usage" in proc.stderr

    def test_bad_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{}")
        assert run("replay", tmp_path / "manifest.json") == 2


class TestShippedConfigs:
    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
    def test_parse(self, name):
        assert isinstance(json.loads((CONFIGS / name).read_text()), dict)

    def test_simulate_exp2_config(self, tmp_path):
        assert run("simulate", "--config", CONFIGS / "simulate_exp2.json", "--seed", 7, "--out", tmp_path) == 0
        assert len(read_table(tmp_path / "observations.csv")["y_1"]) == 1000
