import json
import subprocess
import sys

import numpy as np
import pytest

from ewtls.cli import main
from ewtls.dataio import dumps_json, write_json, scenario_to_dict
from ewtls.simulation import default_scenario


def _schema(name):
    import importlib.resources as res

    return json.loads(
        (res.files("ewtls") / "schemas" / f"{name}.schema.json").read_text()
    )


class TestEstimate:
    def test_zero_noise_fixture(self, fixtures_dir, tmp_path,
                                zero_noise_truth):
        import jsonschema

        out = tmp_path / "res.json"
        code = main([
            "estimate",
            "--data", str(fixtures_dir / "zero_noise_data.csv"),
            "--cov", str(fixtures_dir / "zero_noise_cov.json"),
            "--out", str(out),
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        jsonschema.validate(payload, _schema("results"))
        X_hat = np.asarray(payload["X_hat"])
        assert np.linalg.norm(X_hat - zero_noise_truth) <= 1e-8
        assert payload["sigma2_hat"] <= 1e-12
        assert payload["diagnostics"]["converged"] is True

    def test_homoscedastic_matches_tls_method(self, fixtures_dir, tmp_path):
        out_ew = tmp_path / "ew.json"
        out_tls = tmp_path / "tls.json"
        args = ["estimate",
                "--data", str(fixtures_dir / "homosced_data.csv"),
                "--cov", str(fixtures_dir / "homosced_cov.json")]
        assert main(args + ["--out", str(out_ew)]) == 0
        assert main(args + ["--out", str(out_tls), "--method", "tls"]) == 0
        X_ew = np.asarray(json.loads(out_ew.read_text())["X_hat"])
        X_tls = np.asarray(json.loads(out_tls.read_text())["X_hat"])
        assert np.linalg.norm(X_ew - X_tls) <= 1e-8

    def test_with_direction_vector(self, fixtures_dir, tmp_path):
        import jsonschema

        out = tmp_path / "res.json"
        code = main([
            "estimate",
            "--data", str(fixtures_dir / "homosced_data.csv"),
            "--cov", str(fixtures_dir / "homosced_cov.json"),
            "--out", str(out), "--u", "1", "--level", "0.9",
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        jsonschema.validate(payload, _schema("results"))
        assert payload["Su_hat"]["u"] == [1.0]
        assert payload["ellipsoid"]["level"] == 0.9
        assert len(payload["ellipsoid"]["center"]) == 2

    def test_missing_sigma_row_named(self, fixtures_dir, tmp_path, capsys):
        cov = {
            "d": 1, "J": [1, 2, 3],
            "sigma_per_row": [np.eye(3).tolist()] * 10,
        }
        cov_path = tmp_path / "cov.json"
        write_json(cov_path, cov)
        code = main([
            "estimate",
            "--data", str(fixtures_dir / "zero_noise_data.csv"),
            "--cov", str(cov_path), "--out", str(tmp_path / "res.json"),
        ])
        assert code == 1
        err = capsys.readouterr().err
        assert "row 11" in err

    def test_malformed_csv_positions(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        data.write_text("1,2,3\n4,x,6\n")
        cov = tmp_path / "cov.json"
        write_json(cov, {"d": 1, "J": [1, 2, 3],
                         "sigma_common": np.eye(3).tolist()})
        code = main(["estimate", "--data", str(data), "--cov", str(cov),
                     "--out", str(tmp_path / "res.json")])
        assert code == 1
        err = capsys.readouterr().err
        assert "line 2" in err and "field 2" in err

    def test_missing_file(self, tmp_path, capsys):
        code = main(["estimate", "--data", str(tmp_path / "no.csv"),
                     "--cov", str(tmp_path / "no.json"),
                     "--out", str(tmp_path / "res.json")])
        assert code == 1

    def test_wrong_u_length(self, fixtures_dir, tmp_path, capsys):
        code = main([
            "estimate",
            "--data", str(fixtures_dir / "zero_noise_data.csv"),
            "--cov", str(fixtures_dir / "zero_noise_cov.json"),
            "--out", str(tmp_path / "res.json"), "--u", "1,0",
        ])
        assert code == 1


class TestSimulate:
    def test_summary_and_csv(self, tmp_path):
        import jsonschema

        out = tmp_path / "summary.json"
        code = main(["simulate", "--out", str(out), "--m", "150",
                     "--replicates", "6", "--seed", "11"])
        assert code == 0
        payload = json.loads(out.read_text())
        jsonschema.validate(payload, _schema("summary"))
        assert payload["replicates"] == 6
        csv_path = tmp_path / "summary.replicates.csv"
        lines = csv_path.read_text().splitlines()
        assert len(lines) == 7  # header + 6 replicates
        assert lines[0].startswith("replicate,converged")

    def test_byte_identical_reruns(self, tmp_path):
        for tag in ("a", "b"):
            code = main(["simulate", "--out", str(tmp_path / f"{tag}.json"),
                         "--m", "120", "--replicates", "4", "--seed", "3"])
            assert code == 0
        assert (tmp_path / "a.json").read_bytes() == \
            (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.replicates.csv").read_bytes() == \
            (tmp_path / "b.replicates.csv").read_bytes()

    def test_scenario_file(self, tmp_path):
        scenario = tmp_path / "scenario.json"
        write_json(scenario, scenario_to_dict(
            default_scenario(m=100, seed=2),
            mc={"replicates": 3, "u": [1.0], "level": 0.9},
        ))
        out = tmp_path / "summary.json"
        code = main(["simulate", "--scenario", str(scenario),
                     "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["replicates"] == 3
        assert payload["level"] == 0.9

    def test_single_replicate_coverage(self, tmp_path):
        out = tmp_path / "summary.json"
        code = main(["simulate", "--out", str(out), "--m", "150",
                     "--replicates", "1", "--seed", "5"])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["coverage"] in (0.0, 1.0)

    def test_bad_scenario_file(self, tmp_path, capsys):
        bad = tmp_path / "scenario.json"
        bad.write_text("{}")
        code = main(["simulate", "--scenario", str(bad),
                     "--out", str(tmp_path / "s.json")])
        assert code == 1


class TestValidate:
    def test_quick_gradient_suite(self, capsys):
        code = main(["validate", "--quick", "--suite", "gradient"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["passed"] is True
        assert report["suites"][0]["suite"] == "gradient"

    def test_report_file(self, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = main(["validate", "--quick", "--suite", "oracle",
                     "--out", str(out)])
        assert code == 0
        assert json.loads(out.read_text())["passed"] is True

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "ewtls", "validate", "--quick",
             "--suite", "gradient"],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["passed"] is True
