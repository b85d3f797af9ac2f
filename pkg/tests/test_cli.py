import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from stirk.cli import main
from stirk.dynamics import load_trajectory

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
COMMANDS = ["generate", "train", "evaluate", "mpc", "iterate", "ablation"]


def write_config(tmp_path, **overrides):
    cfg = json.loads((CONFIGS / "smoke.json").read_text())
    for key, value in overrides.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_help_lists_all_commands():
    out = subprocess.run([sys.executable, "-m", "stirk.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in COMMANDS:
        assert name in out.stdout


def test_invalid_task_names_field(tmp_path, capsys):
    path = write_config(tmp_path, task="pendulum")
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "task" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_field_path_reported(tmp_path, capsys):
    path = write_config(tmp_path, train={"epochs": "many"})
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "train.epochs" in capsys.readouterr().err


def test_missing_config_is_config_error(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.json")]) == 2


def test_existing_output_needs_force(tmp_path):
    path = write_config(tmp_path)
    out = tmp_path / "o"
    assert main(["generate", "--config", str(path), "--out", str(out)]) == 0
    assert main(["generate", "--config", str(path), "--out", str(out)]) == 2
    assert main(["generate", "--config", str(path), "--out", str(out), "--force"]) == 0
    assert not (tmp_path / "o.partial").exists()


def test_runtime_failure_exit_code_and_cleanup(tmp_path):
    path = write_config(tmp_path)
    out = tmp_path / "o"
    assert main(["generate", "--config", str(path), "--out", str(out)]) == 0
    victim = next((out / "data").rglob("*.csv"))
    victim.write_text("t,x1\n0.0,")
    assert main(["train", "--config", str(path), "--out", str(out)]) == 1
    # earlier output survives, nothing half-written is left behind
    assert (out / "generate_result.json").exists() and not (out / "train_result.json").exists()
    assert not (out / "models").exists() and not (tmp_path / "o.partial").exists()


def test_vdp_single_generates_hundred_files(tmp_path):
    out = tmp_path / "g"
    assert main(["generate", "--config", str(CONFIGS / "vdp_single.json"), "--out", str(out)]) == 0
    files = sorted((out / "data").rglob("*.csv"))
    assert len(files) == 100
    assert len({f.parent.name for f in files}) == 100


def test_cartpole_generates_fifty_trajectories(tmp_path):
    out = tmp_path / "g"
    assert main(["generate", "--config", str(CONFIGS / "cartpole.json"), "--out", str(out)]) == 0
    files = sorted((out / "data").rglob("*.csv"))
    assert len(files) == 50
    t = load_trajectory(files[0].with_suffix(""))
    assert t.steps == 200 and t.dt == 0.05 and t.noise_sigma == pytest.approx(0.1)


def test_generate_is_byte_identical(tmp_path):
    path = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", str(path), "--out", str(a)]) == 0
    assert main(["generate", "--config", str(path), "--out", str(b)]) == 0
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert fa == fb and len(fa) > 10
    for rel in fa:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_seed_override(tmp_path, monkeypatch):
    path = write_config(tmp_path)
    monkeypatch.setenv("STIRK_SEED", "5")
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "data" / "seed005_noise8").is_dir()
    assert json.loads((tmp_path / "s" / "config.json").read_text())["seed"] == 5
    monkeypatch.setenv("STIRK_SEED", "abc")
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "t")]) == 2


def test_chain_train_evaluate(tmp_path):
    path = write_config(tmp_path, methods=["dis-pf", "edmd-pf", "dmd"])
    out = tmp_path / "run"
    for cmd in ("generate", "train", "evaluate"):
        assert main([cmd, "--config", str(path), "--out", str(out)]) == 0
    assert (out / "models").is_dir() and any((out / "histories").iterdir())
    rows = read_csv(out / "summary.csv")
    assert {r["method"] for r in rows} == {"dis-pf", "edmd-pf", "dmd"}
    header = (out / "summary.csv").read_text().splitlines()[0]
    meta = json.loads(header[2:])
    assert "config_hash" in meta and "seed" in meta


def test_ablation_sixteen_rows_per_noise_level(tmp_path):
    path = write_config(tmp_path, dataset={"noise_indices": [0, 9]}, train={"epochs": 4, "curriculum_period": 1,
                                                                            "optimizer_switch_epoch": None})
    out = tmp_path / "abl"
    assert main(["ablation", "--config", str(path), "--out", str(out)]) == 0
    rows = read_csv(out / "ablation.csv")
    assert len(rows) == 32
    for k in ("0", "9"):
        combos = {(r["parameterization"], r["lr_schedule"], r["optimizer"], r["rollout_schedule"])
                  for r in rows if r["noise_index"] == k}
        assert len(combos) == 16


def test_noise_index_flag(tmp_path):
    path = write_config(tmp_path)
    out = tmp_path / "n"
    assert main(["generate", "--config", str(path), "--out", str(out), "--noise-index", "3"]) == 0
    assert [p.name for p in (out / "data").iterdir()] == ["seed000_noise3"]
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "m"), "--noise-index", "12"]) == 2


def test_mpc_and_iterate_outputs(tmp_path):
    cfg = {"task": "cartpole", "dataset": {"count": 6, "steps": 30, "test_count": 0},
           "train": {"epochs": 3, "r_max": 4, "curriculum_period": 1, "batch_size": 500},
           "mpc": {"horizon": 5, "steps": 10, "ic_count": 2},
           "iterate": {"rounds": 2, "collect_count": 2}}
    path = tmp_path / "cp.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "cp"
    assert main(["mpc", "--config", str(path), "--out", str(out)]) == 0
    summary = json.loads((out / "mpc_summary.json").read_text())
    assert summary["episodes"] == 2 and "config_hash" in summary
    lines = (out / "episodes" / "ic000.csv").read_text().splitlines()
    assert lines[1] == "step,x1,x2,x3,x4,u1,stage_cost,qp_iters,qp_residual" and len(lines) == 13
    assert main(["iterate", "--config", str(path), "--out", str(out)]) == 0
    r1 = json.loads((out / "rounds" / "round1.json").read_text())
    assert r1["round"] == 1 and r1["n_windows"] > json.loads((out / "rounds" / "round0.json").read_text())["n_windows"]
    collected = sorted((out / "rounds" / "round1_collected").glob("*.csv"))
    assert len(collected) == 2
    t = load_trajectory(collected[0].with_suffix(""))
    assert t.meta["round"] == 1 and t.meta["task"]["name"] == "seen" and t.steps == 10
