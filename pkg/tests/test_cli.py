import json

import numpy as np
import pytest

from abcgbi.cli import main
from abcgbi.config import resolve_config_path

FIG1_LABELS = ["rejection_abc", "grid_abc_uniform", "cf_uniform", "cf_exponential",
               "cf_exponential_constvar", "cf_gaussian_constvar"]


@pytest.fixture(scope="module")
def fig1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig1")
    assert main(["run", "example1_fig1", "--out", str(out)]) == 0
    return out


def bundled(name):
    return json.loads(resolve_config_path(name).read_text(encoding="utf-8"))


class TestRun:
    def test_fig1_artifacts(self, fig1_run):
        manifest = json.loads((fig1_run / "manifest.json").read_text(encoding="utf-8"))
        assert [p["label"] for p in manifest["posteriors"]] == FIG1_LABELS
        for label in FIG1_LABELS:
            assert (fig1_run / f"posterior_{label}.csv").is_file()
        assert (fig1_run / "distances.csv").is_file()

    def test_manifest_complete(self, fig1_run):
        manifest = json.loads((fig1_run / "manifest.json").read_text(encoding="utf-8"))
        on_disk = {p.name for p in fig1_run.iterdir()} - {"manifest.json"}
        assert set(manifest["artifacts"]) == on_disk
        assert manifest["seed"] == bundled("example1_fig1")["seed"]
        assert manifest["runtime_seconds"] >= 0

    def test_distances_csv(self, fig1_run):
        lines = (fig1_run / "distances.csv").read_text(encoding="utf-8").splitlines()
        n = len(FIG1_LABELS)
        assert len(lines) == 1 + n * (n - 1) // 2

    def test_unknown_weight_family(self, tmp_path, capsys):
        doc = bundled("example1_fig1")
        doc["posteriors"][1]["weight"]["family"] = "triangle"
        (tmp_path / "bad.json").write_text(json.dumps(doc), encoding="utf-8")
        assert main(["run", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2
        assert "posteriors[1].weight.family" in capsys.readouterr().err

    def test_invalid_json_reports_line(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text('{"schema": 1,\n  "name": }\n', encoding="utf-8")
        assert main(["run", str(tmp_path / "bad.json")]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_missing_seed(self, tmp_path, capsys):
        doc = bundled("calibration_daycare_arith")
        del doc["seed"]
        (tmp_path / "c.json").write_text(json.dumps(doc), encoding="utf-8")
        assert main(["run", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
        assert "seed" in capsys.readouterr().err

    def test_calibration_config(self, tmp_path):
        assert main(["run", "calibration_daycare_arith", "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "calibration.json").read_text(encoding="utf-8"))
        assert 13 <= doc["w"] <= 16

    def test_failed_expectation_is_numeric_exit(self, tmp_path, capsys):
        doc = bundled("calibration_daycare_arith")
        doc["calibration"]["expect_w"] = [1, 2]
        (tmp_path / "c.json").write_text(json.dumps(doc), encoding="utf-8")
        assert main(["run", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 3
        assert "expect_w" in capsys.readouterr().err


class TestReport:
    def test_tv_matrix(self, fig1_run, capsys):
        assert main(["report", str(fig1_run), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        tv = np.array(doc["tv"])
        assert tv.shape == (6, 6)
        assert np.all(np.diag(tv) == 0.0)
        assert np.array_equal(tv, tv.T)
        assert np.all(tv[~np.eye(6, dtype=bool)] > 0)
        assert doc["labels"] == FIG1_LABELS

    def test_summaries(self, fig1_run, capsys):
        main(["report", str(fig1_run), "--json"])
        rows = {r["label"]: r for r in json.loads(capsys.readouterr().out)["posteriors"]}
        for r in rows.values():
            assert 0 < r["mean"][0] < 10 and r["sd"][0] > 0

    def test_table(self, fig1_run, capsys):
        assert main(["report", str(fig1_run)]) == 0
        out = capsys.readouterr().out
        assert "TV distance" in out and "cf_gaussian_constvar" in out

    def test_empty_dir(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 2

    def test_missing_artifact(self, fig1_run, tmp_path):
        import shutil

        copy = tmp_path / "copy"
        shutil.copytree(fig1_run, copy)
        (copy / "posterior_cf_uniform.csv").unlink()
        assert main(["report", str(copy)]) == 2


class TestCalibrateAndMatch:
    def test_calibrate_json(self, capsys):
        assert main(["calibrate", "calibration_daycare_arith", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["delta0"] == pytest.approx(0.8844, abs=1e-12)
        assert 13 <= doc["w"] <= 16

    def test_calibrate_table(self, capsys):
        assert main(["calibrate", "calibration_daycare_arith"]) == 0
        assert "w = 1/h" in capsys.readouterr().out

    def test_calibrate_needs_section(self, capsys):
        assert main(["calibrate", "example1_fig1"]) == 2

    def test_match_kernel(self, capsys):
        assert main(["match-kernel", "--epsilon", "2.0", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["h"] == pytest.approx(2 * doc["ratio_a"], rel=1e-15)
        assert 0.585 <= doc["ratio_a"] <= 0.595

    def test_match_kernel_bad_epsilon(self):
        assert main(["match-kernel", "--epsilon", "-1"]) == 3
