import json
import subprocess
import sys

import numpy as np
import pytest

from sblab.checkpoint import load_checkpoint
from sblab.cli import main, oracle_report

SMALL = {
    "schedule": {"type": "symmetric", "n": 6, "gamma_min": 1.0, "gamma_max": 3.0, "normalize": True},
    "train": {"n_epochs": 1, "steps_per_half_epoch": 20, "batch_size": 32, "cache_size": 256,
              "cache_refresh_interval": 10, "eval_paths": 200, "lr": 1e-3,
              "arch": {"hidden": 16, "n_layers": 2, "embed_dim": 4, "activation": "silu"}},
    "pretrain": {"steps": 20, "batch_size": 32},
    "eval": {"n_paths": 500},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def test_oracle_check(tmp_path, capsys):
    out = tmp_path / "oracle.json"
    assert main(["oracle-check", "-o", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["c_abs_diff"] < 1e-2
    assert report["endpoint_max_error"] == 0.0
    assert report["posterior_max_abs_mean_diff"] < 1e-9
    assert json.loads(capsys.readouterr().out) == report


def test_oracle_report_is_seeded():
    assert oracle_report(n_grid=101, seed=1) == oracle_report(n_grid=101, seed=1)


def test_pretrain_deterministic(tmp_path, cfg_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pretrain", "--config", cfg_path, "--out", str(a)]) == 0
    assert main(["pretrain", "--config", cfg_path, "--out", str(b)]) == 0
    for name in ("sgm_backward.sbck", "sgm_forward.sbck"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ck = load_checkpoint(a / "sgm_forward.sbck")
    assert ck.pretrained and ck.direction == "forward" and ck.reverse_time


def test_pretrain_zero_steps_emits_init(tmp_path, cfg_path):
    out = tmp_path / "z"
    assert main(["pretrain", "--config", cfg_path, "--out", str(out), "--pretrain-steps", "0"]) == 0
    summary = json.loads((out / "pretrain_summary.json").read_text())
    assert summary["models"]["backward"]["steps"] == 0


def test_train_eval_sample_plot(tmp_path, cfg_path):
    pre, run = tmp_path / "pre", tmp_path / "run"
    assert main(["pretrain", "--config", cfg_path, "--out", str(pre)]) == 0
    assert main(["train", "--config", cfg_path, "--out", str(run),
                 "--init-backward", str(pre / "sgm_backward.sbck"),
                 "--init-forward", str(pre / "sgm_forward.sbck")]) == 0
    report = json.loads((run / "report.json").read_text())
    assert report["half_epochs"] == 2 and report["final_avg_kl"] >= 0
    assert json.loads((run / "config.json").read_text())["train"]["init_mode"] == "dual"

    fwd, bwd = str(run / "half_2_F.sbck"), str(run / "half_2_B.sbck")
    for name in ("e1", "e2"):
        assert main(["eval", "--config", cfg_path, "--out", str(tmp_path / name), "--forward", fwd,
                     "--backward", bwd]) == 0
    assert (tmp_path / "e1" / "eval.json").read_bytes() == (tmp_path / "e2" / "eval.json").read_bytes()
    assert (tmp_path / "e1" / "eval.csv").read_text().startswith("# config_hash=")

    traj = run / "trajectories.csv"
    assert main(["sample", "--config", cfg_path, "--checkpoint", bwd, "-n", "10", "-o", str(traj)]) == 0
    assert len(traj.read_text().splitlines()) == 2 + 10 * 7
    assert main(["plot", str(run)]) == 0
    assert (run / "metrics.svg").exists() and (run / "trajectories.svg").exists()


def test_train_zero_epochs_and_resume(tmp_path, cfg_path):
    run = tmp_path / "run"
    assert main(["train", "--config", cfg_path, "--out", str(run), "--epochs", "0"]) == 0
    assert json.loads((run / "report.json").read_text())["half_epochs"] == 0
    full = tmp_path / "full"
    assert main(["train", "--config", cfg_path, "--out", str(full), "--epochs", "2"]) == 0
    assert main(["train", "--config", cfg_path, "--out", str(run), "--epochs", "2", "--resume"]) == 2  # other config
    part = tmp_path / "part"
    assert main(["train", "--config", cfg_path, "--out", str(part), "--epochs", "2", "--stop-after", "1"]) == 0
    assert not (part / "half_2_F.sbck").exists()
    assert main(["train", "--config", cfg_path, "--out", str(part), "--epochs", "2", "--resume"]) == 0
    assert (full / "metrics.csv").read_text().count("\n") == (part / "metrics.csv").read_text().count("\n")
    for name in ("half_4_F.sbck", "half_4_B.sbck"):
        assert (full / name).read_bytes() == (part / name).read_bytes()


def test_exit_codes(tmp_path, cfg_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"batch_size": -1}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 4
    assert main(["train", "--config", cfg_path, "--out", str(tmp_path / "y"),
                 "--init-backward", str(tmp_path / "missing.sbck")]) == 4
    assert main(["eval", "--config", cfg_path, "--forward", "nope", "--backward", "nope"]) == 4
    assert main(["sample", "--config", cfg_path, "--checkpoint", "nope", "-o", str(tmp_path / "s.csv")]) == 4


def test_divergence_exit_code(tmp_path, cfg_path):
    raw = json.loads(open(cfg_path).read())
    raw["train"]["lr"] = 1e30
    p = tmp_path / "div.json"
    p.write_text(json.dumps(raw))
    with np.errstate(all="ignore"):
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "d")]) == 3


def test_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SBLAB_THREADS", "zero")
    assert main(["oracle-check", "--grid", "51"]) == 2
    monkeypatch.setenv("SBLAB_THREADS", "1")
    assert main(["oracle-check", "--grid", "51"]) == 0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sblab", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("sblab ")
