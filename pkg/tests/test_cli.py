"""CLI pipeline, determinism, config validation and flow-check tests."""

import json
from pathlib import Path

import pytest

from tubeflow.cli import main
from tubeflow.config import ConfigError, load_config
from tubeflow.lattice import WeightLayers

ROOT = Path(__file__).resolve().parent.parent
SMOKE = ROOT / "configs" / "smoke.json"
FIXTURES = ROOT / "configs" / "fixtures"


class TestConfig:
    def test_smoke_config_parses(self):
        cfg = load_config(SMOKE)
        assert cfg.grid.lattice_side == 16
        assert cfg.tau.policy == "calibrate"
        assert cfg.kakeya is not None and cfg.bilinear is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"grids": {}}))
        with pytest.raises(ConfigError, match="unknown keys"):
            load_config(bad)

    def test_non_power_of_two_grid_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"grid": {"lattice_side": 10, "points_per_cell": 5}}))
        with pytest.raises(ConfigError, match="power of two"):
            load_config(bad)

    def test_bilinear_separation_validated(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"bilinear": {"pairs": [[4.0, 8.0]], "seeds": [1]}}))
        with pytest.raises(ConfigError, match="m <= n/4"):
            load_config(bad)

    def test_seed_override(self):
        cfg = load_config(SMOKE).with_seed(99)
        assert cfg.field.seed == 99 and cfg.tau.seed == 99 and cfg.verify.seed == 99

    def test_content_hash_stable(self):
        assert load_config(SMOKE).content_hash() == load_config(SMOKE).content_hash()


class TestRunCommand:
    def test_smoke_run_passes(self, tmp_path):
        code = main(["run", "--config", str(SMOKE), "--out-dir", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["passed"] is True
        names = {c["name"] for c in report["checks"]}
        assert {"partition_of_unity", "fs_margins", "flow_marginals_exact",
                "domination", "efficiency", "kakeya_slope"} <= names
        assert (tmp_path / "tubes.csv").exists()
        assert (tmp_path / "decomposition.json").exists()

    def test_identical_runs_byte_identical_csv(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(SMOKE), "--out-dir", str(a)]) == 0
        assert main(["run", "--config", str(SMOKE), "--out-dir", str(b)]) == 0
        for name in ("fs_margins.csv", "tubes.csv", "kakeya.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_malformed_config_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{]")
        assert main(["run", "--config", str(bad)]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_threads_do_not_change_results(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["verify", "--config", str(SMOKE), "--out-dir", str(a)])
        main(["verify", "--config", str(SMOKE), "--out-dir", str(b), "--threads", "4"])
        assert (a / "fs_margins.csv").read_bytes() == (b / "fs_margins.csv").read_bytes()

    def test_oversized_tau_reports_infeasibility_with_cut(self, tmp_path):
        doc = json.loads(SMOKE.read_text())
        doc["tau"] = {"policy": "fixed", "value": 6.0}
        doc["decomposition"] = {"layers": 2}
        cfg_path = tmp_path / "hot.json"
        cfg_path.write_text(json.dumps(doc))
        code = main(["decompose", "--config", str(cfg_path), "--out-dir", str(tmp_path)])
        assert code == 1
        report = json.loads((tmp_path / "report.json").read_text())
        flow = next(c for c in report["checks"] if c["name"] == "flow_feasible")
        assert flow["passed"] is False
        assert flow["witness"]["cut"], "expected a violating cut in the witness"

    def test_calibrate_only_writes_tau(self, tmp_path):
        code = main(["calibrate", "--config", str(SMOKE), "--out-dir", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["tau"] and report["tau"] > 0


class TestFlowCheck:
    def test_feasible_fixture(self, capsys):
        code = main(["flow-check", "--weights",
                     str(FIXTURES / "flow_feasible_s5.json")])
        assert code == 0
        verdicts = json.loads(capsys.readouterr().out)
        assert verdicts["cut-feasibility"]["feasible"] is True
        assert verdicts["brute-force"]["feasible"] is True

    def test_infeasible_fixture_matches_oracle(self, capsys):
        from tubeflow.lattice import LatticeGraph

        from .oracles import brute_conservation_violations

        path = FIXTURES / "flow_infeasible_s7.json"
        code = main(["flow-check", "--weights", str(path)])
        assert code == 0
        verdicts = json.loads(capsys.readouterr().out)
        assert verdicts["cut-feasibility"]["feasible"] is False
        assert verdicts["brute-force"]["feasible"] is False
        weights, graph = WeightLayers.from_json(path.read_text())
        oracle = brute_conservation_violations(weights.layer(0), weights.layer(1), graph)
        reported = frozenset(verdicts["cut-feasibility"]["violations"][0]["sites"])
        assert reported in oracle

    def test_missing_weights_exit_2(self, capsys):
        assert main(["flow-check", "--weights", "/nonexistent.json"]) == 2
