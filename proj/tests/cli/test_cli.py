"""End-to-end checks of the hcanet command-line tool."""

import json
import math
import os
import subprocess
from pathlib import Path

import pytest

HCANET = os.environ.get("HCANET_CLI", "hcanet")


def run(*args, cwd=None, check=True):
    proc = subprocess.run([HCANET, *map(str, args)], cwd=cwd, capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"exit {proc.returncode}: {proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    run("synth", "--out", d, "--count", 2, "--height", 128, "--width", 128, "--samples", 24, "--patch", 16)
    return d


def test_g30_psnr_matches_closed_form(data, tmp_path):
    noisy = tmp_path / "n.hsic"
    run("simulate", "--in", data / "cube_0.hsic", "--case", "g30", "--seed", 1, "--out", noisy,
        "--report", tmp_path / "r.json")
    report = json.loads(run("eval", "--pred", noisy, "--ref", data / "cube_0.hsic").stdout)
    expected = 10 * math.log10(1 / (30 / 255) ** 2)
    assert abs(report["psnr_db"] - expected) <= 0.3
    degr = json.loads((tmp_path / "r.json").read_text())
    assert degr["kind"] == "gaussian"
    assert (tmp_path / "n.hsic.manifest.json").exists()


def test_simulate_is_deterministic(data, tmp_path):
    for name in ("a", "b"):
        run("simulate", "--in", data / "cube_1.hsic", "--case", "case5", "--seed", 9,
            "--out", tmp_path / f"{name}.hsic", "--report", tmp_path / f"{name}.json")
    assert (tmp_path / "a.hsic").read_bytes() == (tmp_path / "b.hsic").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_invalid_case_token(data, tmp_path):
    proc = run("simulate", "--in", data / "cube_0.hsic", "--case", "g31", "--out", tmp_path / "x.hsic", check=False)
    assert proc.returncode == 2
    assert "Usage" in proc.stderr
    assert proc.stdout == ""


def test_missing_input_is_io_error(tmp_path):
    proc = run("simulate", "--in", tmp_path / "nope.hsic", "--case", "g30", "--out", tmp_path / "x.hsic", check=False)
    assert proc.returncode == 3


def test_eval_identity(data, tmp_path):
    out = tmp_path / "m.json"
    run("eval", "--pred", data / "cube_0.hsic", "--ref", data / "cube_0.hsic", "--out", out)
    m = json.loads(out.read_text())
    assert m["psnr_db"] == 100.0
    assert m["ssim"] == pytest.approx(1.0, abs=1e-12)
    assert m["sam_rad"] == 0.0
    assert (tmp_path / "m.json.manifest.json").exists()


def test_zero_tail_denoise_is_identity(data, tmp_path):
    model = tmp_path / "z.hcaw"
    run("init", "--out", model, "--zero-tail")
    out = tmp_path / "o.hsic"
    run("denoise", "--model", model, "--in", data / "cube_0.hsic", "--out", out)
    assert out.read_bytes() == (data / "cube_0.hsic").read_bytes()


def test_denoise_clips_to_unit_range(data, tmp_path):
    noisy = tmp_path / "n.hsic"
    run("simulate", "--in", data / "cube_0.hsic", "--case", "g70", "--seed", 2, "--out", noisy)
    model = tmp_path / "z.hcaw"
    run("init", "--out", model, "--zero-tail")
    out = tmp_path / "o.hsic"
    run("denoise", "--model", model, "--in", noisy, "--out", out)
    import struct
    raw = out.read_bytes()[24:]
    values = struct.unpack(f"<{len(raw) // 4}f", raw)
    assert min(values) >= 0.0 and max(values) <= 1.0
    assert min(values) == 0.0 and max(values) == 1.0


def test_denoise_errors(data, tmp_path):
    model = tmp_path / "b4.hcaw"
    run("init", "--bands", 4, "--out", model)
    proc = run("denoise", "--model", model, "--in", data / "cube_0.hsic", "--out", tmp_path / "o.hsic", check=False)
    assert proc.returncode == 2
    assert "expects 4" in proc.stderr and "has 8" in proc.stderr

    good = tmp_path / "g.hcaw"
    run("init", "--out", good)
    corrupt = tmp_path / "c.hcaw"
    corrupt.write_bytes(good.read_bytes()[:-7])
    proc = run("denoise", "--model", corrupt, "--in", data / "cube_0.hsic", "--out", tmp_path / "o.hsic", check=False)
    assert proc.returncode == 3
    assert "offset" in proc.stderr


def test_gradcheck_cafm_exits_zero(tmp_path):
    out = tmp_path / "gc.json"
    proc = run("gradcheck", "--preset", "cafm", "--out", out)
    summary = json.loads(proc.stdout)
    assert summary["passed"] is True
    assert json.loads(out.read_text())["max_rel_err"] < 1e-3


def test_train_and_rerun_are_identical(data, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "network": {"preset": "desk", "bands": 8},
        "train": {"epochs": 2, "batch_size": 4, "lr0": 2e-3, "lr_final": 1e-5},
        "noise": {"kind": "gaussian", "sigma": 30},
    }))
    env_runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = run("train", "--config", cfg, "--data", data / "dataset.json", "--out", out)
        summary = json.loads(proc.stdout)
        assert summary["param_count"] == 130862
        env_runs.append(out)
    a, b = env_runs
    for f in ("log.jsonl", "last.hcaw", "best.hcaw"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    lines = (a / "log.jsonl").read_text().splitlines()
    assert len(lines) == 2
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["config"]["train"]["epochs"] == 2
    assert set(manifest["outputs"]) >= {str(a / "best.hcaw")}

    proc = run("train", "--config", cfg, "--data", data / "dataset.json", "--out", tmp_path / "c",
               "--epochs", 0, check=False)
    assert proc.returncode == 2


def test_train_rejects_unknown_section(data, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"optimizer": {}}))
    proc = run("train", "--config", cfg, "--data", data / "dataset.json", "--out", tmp_path / "o", check=False)
    assert proc.returncode == 2
