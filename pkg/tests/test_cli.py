"""Command-line interface: exit codes, manifests, and artifact layout."""

from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from waningsim.cli import main
from waningsim.model import build_general, config_to_json
from waningsim.scanfit import simulate_annual_prevalence

ENDEMIC_CFG = build_general(2, (1.5, 2.0, 4.0), 0.02, 0.3, 1.2, 2.0, (0.0, 0.1, 0.5))


@pytest.fixture
def config_path(tmp_path, pertussis):
    path = tmp_path / "config.json"
    path.write_text(config_to_json(pertussis))
    return str(path)


@pytest.fixture
def endemic_config_path(tmp_path):
    path = tmp_path / "endemic.json"
    path.write_text(config_to_json(ENDEMIC_CFG))
    return str(path)


def split_csv_artifact(text: str):
    lines = text.splitlines(keepends=True)
    manifest_lines = [l for l in lines if l.startswith("#")]
    data = "".join(l for l in lines if not l.startswith("#"))
    assert len(manifest_lines) == 1
    manifest = json.loads(manifest_lines[0].split("# manifest: ", 1)[1])
    return manifest, data


class TestSimulate:
    def test_csv_artifact_and_rerun_identity(self, endemic_config_path, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        argv = ["simulate", "--config", endemic_config_path, "--t-end", "50",
                "--samples", "25", "--out"]
        assert main(argv + [str(out1)]) == 0
        assert main(argv + [str(out2)]) == 0
        m1, d1 = split_csv_artifact(out1.read_text())
        m2, d2 = split_csv_artifact(out2.read_text())
        assert d1 == d2  # data section byte-identical across reruns
        assert m1["run_key"] == m2["run_key"]
        assert m1["config_hash"] == m2["config_hash"]
        lines = d1.strip().splitlines()
        assert lines[0] == "t,S_0,S_1,S_2,I"
        assert len(lines) == 27  # header + 26 sample rows including t=0

    def test_json_format(self, endemic_config_path, tmp_path, capsys):
        assert main(["simulate", "--config", endemic_config_path, "--t-end", "10",
                     "--samples", "5", "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["manifest"]["command"] == "simulate"
        assert doc["data"]["terminal_status"] in ("max_time", "converged_endemic")
        assert len(doc["data"]["times"]) == 6

    def test_malformed_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        code = main(["simulate", "--config", str(bad), "--t-end", "10"])
        assert code == 2
        assert "line 1 column" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--t-end", "5"]) == 2

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "typo.json"
        bad.write_text('{"n": 1, "beta": [1, 2], "delta": 0.1, "mu": 0.1, "r": 1, "omega": 0, "p": [0, 0], "betas": 3}')
        assert main(["simulate", "--config", str(bad), "--t-end", "5"]) == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_stiff_blowup_exits_3(self, tmp_path, capsys):
        stiff = tmp_path / "stiff.json"
        stiff.write_text(config_to_json(build_general(1, (1e6, 1e6), 0.0, 1.0, 1.0, 0.0, (0.0, 0.0))))
        code = main(["simulate", "--config", str(stiff), "--t-end", "1000", "--max-steps", "2000"])
        assert code == 3
        assert "integration failed" in capsys.readouterr().err


class TestAnalyze:
    def test_subcritical_report(self, config_path, capsys):
        assert main(["analyze", "--config", config_path]) == 0
        doc = json.loads(capsys.readouterr().out)
        data = doc["data"]
        assert data["r0"]["regime"] == "stable"
        assert data["endemic"] is None
        assert not data["localization"]["validity"]  # waning beyond certificate
        assert data["consistency"]["consistent"]

    def test_supercritical_certified_report(self, endemic_config_path, capsys):
        assert main(["analyze", "--config", endemic_config_path]) == 0
        data = json.loads(capsys.readouterr().out)["data"]
        assert data["r0"]["regime"] == "unstable"
        assert data["localization"]["validity"]
        assert data["endemic"]["certification"] == "certified-contraction"
        assert data["endemic_stability"]["classification"] == "asymptotically_stable"
        assert data["consistency"]["checked"] and data["consistency"]["consistent"]
        assert data["dfe_numeric_gap"] < 1e-10

    def test_large_waning_uncertified_flagged(self, tmp_path, capsys):
        cfg = ENDEMIC_CFG.replace(delta=1.5)
        path = tmp_path / "big_delta.json"
        path.write_text(config_to_json(cfg))
        assert main(["analyze", "--config", str(path)]) == 0
        data = json.loads(capsys.readouterr().out)["data"]
        assert not data["localization"]["validity"]
        assert data["endemic"]["certification"] == "numeric-uncertified"
        assert not data["consistency"]["checked"]


class TestSmallCommands:
    def test_dfe_document(self, config_path, capsys):
        assert main(["dfe", "--config", config_path]) == 0
        data = json.loads(capsys.readouterr().out)["data"]
        assert abs(sum(data["s"]) - 1.0) < 1e-12
        assert data["numeric_gap"] < 1e-10

    def test_r0_document(self, config_path, capsys):
        assert main(["r0", "--config", config_path]) == 0
        data = json.loads(capsys.readouterr().out)["data"]
        assert data["regime"] == "stable"
        assert 0 < data["r0"] < 1


class TestSweep:
    def write_spec(self, tmp_path, **overrides):
        spec = {
            "config": json.loads(config_to_json(ENDEMIC_CFG)),
            "parameter": "delta",
            "grid": {"start": 0.0, "stop": 0.5, "num": 11},
            "observable": "r0",
        }
        spec.update(overrides)
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        return str(path)

    def test_csv_output_and_rerun_identity(self, tmp_path):
        spec = self.write_spec(tmp_path)
        out1, out2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
        assert main(["sweep", "--spec", spec, "--out", str(out1)]) == 0
        assert main(["sweep", "--spec", spec, "--out", str(out2)]) == 0
        m1, d1 = split_csv_artifact(out1.read_text())
        _, d2 = split_csv_artifact(out2.read_text())
        assert d1 == d2
        assert d1.splitlines()[0] == "param_value,observable,classification"
        assert len(d1.strip().splitlines()) == 12
        assert m1["command"] == "sweep"

    def test_parallel_jobs_match_serial(self, tmp_path):
        spec = self.write_spec(tmp_path)
        serial, parallel = tmp_path / "ser.csv", tmp_path / "par.csv"
        assert main(["sweep", "--spec", spec, "--out", str(serial)]) == 0
        assert main(["sweep", "--spec", spec, "--jobs", "3", "--out", str(parallel)]) == 0
        assert split_csv_artifact(serial.read_text())[1] == split_csv_artifact(parallel.read_text())[1]

    def test_json_format(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path, grid=[0.0, 0.1, 0.2])
        assert main(["sweep", "--spec", spec, "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["data"]["points"]) == 3
        # rerun: the data section is byte-identical even though the manifest
        # timestamp moves
        assert main(["sweep", "--spec", spec, "--format", "json"]) == 0
        doc2 = json.loads(capsys.readouterr().out)
        assert json.dumps(doc["data"]) == json.dumps(doc2["data"])

    def test_bad_spec_exits_2(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path, parameter="nonsense")
        assert main(["sweep", "--spec", spec]) == 2
        assert "nonsense" in capsys.readouterr().err


class TestFit:
    def test_round_trip_fixture(self, tmp_path, capsys):
        years = np.arange(2000, 2012)
        values = simulate_annual_prevalence(ENDEMIC_CFG, years, 1999, 1e-4)
        data_path = tmp_path / "data.csv"
        data_path.write_text(
            "year,prevalence\n" + "\n".join(f"{y},{float(v)!r}" for y, v in zip(years, values)) + "\n"
        )
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(config_to_json(ENDEMIC_CFG.replace(omega=2.4)))
        code = main([
            "fit", "--config", str(cfg_path), "--data", str(data_path),
            "--free", "omega", "--i0", "1e-4", "--start-year", "1999",
            "--max-iterations", "120", "--restarts", "0",
        ])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["data"]["converged"]
        assert abs(doc["data"]["parameters"]["omega"] - 2.0) < 1e-3

    def test_missing_data_file_exits_2(self, config_path, tmp_path):
        assert main(["fit", "--config", config_path, "--data", str(tmp_path / "none.csv")]) == 2

    def test_shipped_synthetic_dataset_round_trip(self, tmp_path, capsys):
        from waningsim.data import synthetic_prevalence_path, synthetic_truth_config

        template = synthetic_truth_config().replace(omega=2.4)
        cfg_path = tmp_path / "template.json"
        cfg_path.write_text(config_to_json(template))
        code = main([
            "fit", "--config", str(cfg_path), "--data", str(synthetic_prevalence_path()),
            "--free", "omega", "--i0", "1e-4", "--start-year", "1999",
            "--max-iterations", "150", "--restarts", "0",
        ])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["data"]["converged"] is True
        assert abs(doc["data"]["parameters"]["omega"] - 2.0) < 1e-2


def test_module_entry_point_smoke(config_path):
    proc = subprocess.run(
        [sys.executable, "-m", "waningsim", "r0", "--config", config_path],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0
    doc = json.loads(proc.stdout)
    assert doc["manifest"]["tool_version"]
