"""End-to-end command-line checks via `python -m cono` subprocesses."""

import json
import os
import subprocess
import sys

import pytest

SMALL_CONFIG = {
    "prompts": ["cli-a"],
    "expansions": 1,
    "N": 4,
    "N1": 1,
    "N2": 2,
    "Td": 2,
    "delta": 1.0,
    "dims": [4, 1, 8, 8],
    "steps": 5,
    "seed": 5,
}


def run_cli(*args, **kw):
    return subprocess.run(
        [sys.executable, "-m", "cono", *args],
        capture_output=True,
        text=True,
        timeout=180,
        **kw,
    )


def write_config(tmp_path, overrides=None, name="config.json"):
    cfg = dict(SMALL_CONFIG)
    if overrides:
        cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestGenerate:
    def test_generate_writes_outputs(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "run")
        proc = run_cli("generate", "--config", cfg, "--out", out)
        assert proc.returncode == 0, proc.stderr
        assert "wrote 10 frames" in proc.stdout
        for name in ("video.lat", "scale.json", "config.resolved.json", "manifest.json"):
            assert os.path.exists(os.path.join(out, name))
        stage_files = sorted(
            f for f in os.listdir(out) if f.startswith("stage_") and f.endswith(".lat")
        )
        assert stage_files == [
            "stage_00_first.lat",
            "stage_01_extend.lat",
            "stage_02_internal.lat",
            "stage_03_extend2.lat",
        ]
        manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
        assert manifest["frames"] == 10
        assert manifest["config"]["seed"] == 5
        assert len(manifest["traces"]) == 3
        assert len(manifest["drift"]["drifts"]) == 4

    def test_generate_is_deterministic(self, tmp_path):
        cfg = write_config(tmp_path)
        blobs = []
        for name in ("run1", "run2"):
            out = str(tmp_path / name)
            proc = run_cli("generate", "--config", cfg, "--out", out)
            assert proc.returncode == 0, proc.stderr
            blobs.append(open(os.path.join(out, "video.lat"), "rb").read())
        assert blobs[0] == blobs[1]

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write_config(tmp_path)
        out1 = str(tmp_path / "run1")
        out2 = str(tmp_path / "run2")
        assert run_cli("generate", "--config", cfg, "--out", out1).returncode == 0
        assert (
            run_cli("generate", "--config", cfg, "--out", out2, "--seed", "6").returncode
            == 0
        )
        a = open(os.path.join(out1, "video.lat"), "rb").read()
        b = open(os.path.join(out2, "video.lat"), "rb").read()
        assert a != b

    def test_unknown_config_key_fails_cleanly(self, tmp_path):
        cfg = write_config(tmp_path, {"frobnicate": 1})
        proc = run_cli("generate", "--config", cfg, "--out", str(tmp_path / "run"))
        assert proc.returncode == 1
        assert proc.stderr.startswith("error:")
        assert "frobnicate" in proc.stderr

    def test_missing_config_file_fails_cleanly(self, tmp_path):
        proc = run_cli("generate", "--config", str(tmp_path / "nope.json"))
        assert proc.returncode == 1
        assert proc.stderr.startswith("error:")


class TestOtherCommands:
    def test_shuffle_demo_tables(self):
        proc = run_cli("shuffle-demo", "--n", "4", "--n1", "2", "--n2", "1")
        assert proc.returncode == 0
        assert proc.stdout.splitlines() == ["2 3 1 0", "0 1 3 2"]

    def test_shuffle_demo_rejects_bad_split(self):
        proc = run_cli("shuffle-demo", "--n", "4", "--n1", "5")
        assert proc.returncode == 1
        assert proc.stderr.startswith("error:")

    def test_inspect_prints_header(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "run")
        assert run_cli("generate", "--config", cfg, "--out", out).returncode == 0
        proc = run_cli("inspect", os.path.join(out, "video.lat"))
        assert proc.returncode == 0
        info = json.loads(proc.stdout)
        assert info["dims"] == [10, 1, 8, 8]
        assert info["dtype"] == "f32le"

    def test_no_arguments_is_usage_error(self):
        proc = run_cli()
        assert proc.returncode == 2

    def test_version_flag(self):
        proc = run_cli("--version")
        assert proc.returncode == 0
        assert proc.stdout.startswith("cono ")

    def test_bad_log_level_rejected(self):
        proc = run_cli("shuffle-demo", "--n", "4", "--n1", "2", env={**os.environ, "CONO_LOG": "loud"})
        assert proc.returncode == 1
        assert "CONO_LOG" in proc.stderr


class TestVerify:
    def test_verify_passes_and_writes_report(self, tmp_path):
        report_path = str(tmp_path / "report.json")
        proc = run_cli("verify", "--report", report_path)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        report = json.loads(open(report_path).read())
        assert report["all_pass"] is True
        names = [c["name"] for c in report["checks"]]
        assert "analytic_vs_monte_carlo" in names
        assert "shuffle_index_maps" in names
