import json
import subprocess
import sys

import pytest

from densify360.cli import main
from densify360.outputs import read_ply


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_ds")
    rc = main([
        "synth", "box", "--out", str(out),
        "--keyframes", "8", "--resolution", "64x32", "--sparse", "120",
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.toml"
    path.write_text(
        "[patchmatch]\n"
        "iterations = 3\n"
        "depth_max = 8.0\n"
        "[consistency]\n"
        "rel_depth_tol = 0.05\n"
        "[processing]\n"
        "threaded = false\n"
    )
    return path


@pytest.fixture(scope="module")
def finished_run(dataset_dir, fast_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    rc = main([
        "run", str(dataset_dir), "--out", str(out),
        "--config", str(fast_config), "--seed", "3", "--save-depth",
    ])
    assert rc == 0
    return out


class TestSynth:
    def test_writes_manifest_and_images(self, dataset_dir):
        manifest = json.loads((dataset_dir / "dataset.json").read_text())
        assert manifest["camera"] == {"width": 64, "height": 32}
        assert len(manifest["keyframes"]) == 8
        for entry in manifest["keyframes"]:
            assert (dataset_dir / entry["image"]).exists()
        assert "synthetic" in manifest


class TestRun:
    def test_outputs_exist(self, finished_run):
        for name in ("cloud.ply", "metrics.json", "config.json", "run.json"):
            assert (finished_run / name).exists(), name
        depth_pngs = sorted((finished_run / "depth").glob("kf*.png"))
        assert depth_pngs

    def test_cloud_and_metrics_consistent(self, finished_run):
        points, colors = read_ply(finished_run / "cloud.ply")
        metrics = json.loads((finished_run / "metrics.json").read_text())
        assert metrics["fused_points"] == len(points)
        assert len(points) > 0
        assert metrics["keyframes_total"] == 8
        assert 0 < metrics["completeness"]["mean"] <= 1

    def test_run_json_records_seed_and_manifest(self, finished_run, dataset_dir):
        run = json.loads((finished_run / "run.json").read_text())
        assert run["seed"] == 3
        assert len(run["manifest_sha256"]) == 64

    def test_config_echo_reflects_flags(self, dataset_dir, fast_config, tmp_path):
        rc = main([
            "run", str(dataset_dir), "--out", str(tmp_path),
            "--config", str(fast_config), "--no-warp",
            "--resolution", "64x32",
        ])
        assert rc == 0
        echoed = json.loads((tmp_path / "config.json").read_text())
        assert echoed["patchmatch"]["warp"] is False
        assert echoed["patchmatch"]["iterations"] == 3
        assert echoed["processing"]["resolution"] == [64, 32]
        assert not (tmp_path / "depth").exists()  # no --save-depth


class TestEval:
    def test_eval_reports_accuracy(self, dataset_dir, finished_run, capsys):
        rc = main(["eval", str(dataset_dir), str(finished_run)])
        assert rc == 0
        line = capsys.readouterr().out.strip().splitlines()[-1]
        assert 0 < json.loads(line)["completeness"] <= 1
        report = json.loads((finished_run / "eval.json").read_text())
        assert report["completeness"]["mean"] > 0
        assert report["accuracy"]["mean_abs_rel"] is not None
        assert 0 <= report["accuracy"]["inlier_2pc"] <= 1

    def test_eval_without_cloud_is_data_error(self, dataset_dir, tmp_path):
        assert main(["eval", str(dataset_dir), str(tmp_path)]) == 3


class TestExitCodes:
    def test_unknown_config_key(self, dataset_dir, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[patchmatch]\nitterations = 3\n")
        rc = main([
            "run", str(dataset_dir), "--out", str(tmp_path / "o"),
            "--config", str(bad),
        ])
        assert rc == 2

    def test_malformed_resolution(self, dataset_dir, tmp_path):
        rc = main([
            "run", str(dataset_dir), "--out", str(tmp_path / "o"),
            "--resolution", "512by256",
        ])
        assert rc == 2

    def test_missing_dataset(self, tmp_path):
        rc = main(["run", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
        assert rc == 3

    def test_out_of_order_ids(self, dataset_dir, tmp_path):
        manifest = json.loads((dataset_dir / "dataset.json").read_text())
        manifest["keyframes"][1]["id"] = 0  # duplicate of the first id
        broken = tmp_path / "broken"
        broken.mkdir()
        (broken / "dataset.json").write_text(json.dumps(manifest))
        rc = main(["run", str(broken), "--out", str(tmp_path / "o")])
        assert rc == 3


def test_console_script_help():
    proc = subprocess.run(
        [sys.executable, "-c",
         "from densify360.cli import main; main(['--help'])"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "run" in proc.stdout and "eval" in proc.stdout and "synth" in proc.stdout
