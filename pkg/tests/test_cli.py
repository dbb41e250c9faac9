"""CLI behaviour, exercised in-process through main()."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from pcd.cli import main
from pcd.config import from_dict
from pcd.harness import evaluate_batch, load_results


def run_cli(capsys, *argv: str) -> str:
    code = main(list(argv))
    assert code == 0, capsys.readouterr().err
    return capsys.readouterr().out


FAST_RUN = (
    "run",
    "--task", "reach",
    "--shift", "brightness",
    "--policy", "mixture",
    "--lambda", "0.65",
    "--trials", "6",
    "--seed", "0",
)


def test_run_prints_rates(capsys) -> None:
    out = run_cli(capsys, *FAST_RUN)
    assert "rate_completion=" in out
    assert "rate_maxstep=" in out
    assert "task=reach" in out
    assert "lambda=0.65" in out


def test_run_appends_results(capsys, tmp_path) -> None:
    out_file = tmp_path / "rows.jsonl"
    run_cli(capsys, *FAST_RUN, "--method", "baseline", "--out", str(out_file))
    run_cli(capsys, *FAST_RUN, "--method", "pcd", "--alpha", "1.0", "--out", str(out_file))
    rows = load_results(out_file)
    assert len(rows) == 2
    assert rows[0]["method"] == "baseline" and rows[1]["method"] == "pcd"
    assert rows[0]["task"] == "reach"
    assert rows[0]["trials"] == 6


def test_config_file_with_flag_overrides(capsys, tmp_path) -> None:
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(
        json.dumps(
            {
                "task": {"kind": "reach"},
                "shift": {"variant": "brightness"},
                "policy": {"kind": "mixture", "lambda": 0.65},
                "trials": 40,
            }
        )
    )
    out = run_cli(capsys, "run", "--config", str(cfg_path), "--trials", "5")
    assert "trials=5" in out  # the flag wins over the file
    assert "shift=brightness" in out  # the file fills what flags leave unset


def test_cli_matches_library_rates(capsys) -> None:
    out = run_cli(capsys, *FAST_RUN)
    cfg = from_dict(
        {
            "task": {"kind": "reach"},
            "shift": {"variant": "brightness"},
            "policy": {"kind": "mixture", "lambda": 0.65},
            "trials": 6,
            "seed": 0,
        }
    )
    result = evaluate_batch(cfg)
    assert f"rate_completion={result.rate_completion:.4f}" in out
    assert result.config_hash in out


def test_sweep_prints_table_and_writes_csv(capsys, tmp_path) -> None:
    csv_path = tmp_path / "alpha.csv"
    out = run_cli(
        capsys,
        "sweep",
        "--task", "reach",
        "--shift", "brightness",
        "--policy", "mixture",
        "--lambda", "0.65",
        "--method", "pcd",
        "--trials", "4",
        "--axis", "alpha",
        "--values", "0,1.0",
        "--csv", str(csv_path),
    )
    lines = [ln for ln in out.splitlines() if ln.strip()]
    assert lines[0].split() == ["alpha", "trials", "rate_completion", "rate_maxstep", "mean_ms"]
    assert len([ln for ln in lines if ln.lstrip().startswith(("0", "1"))]) == 2
    content = csv_path.read_text().splitlines()
    assert len(content) == 3  # header + two rows


def test_sweep_appends_rows_with_axis_configs(capsys, tmp_path) -> None:
    out_file = tmp_path / "sweep.jsonl"
    run_cli(
        capsys,
        "sweep",
        "--task", "reach",
        "--shift", "none",
        "--policy", "mixture",
        "--lambda", "0.65",
        "--trials", "3",
        "--axis", "shift",
        "--values", "none,brightness",
        "--out", str(out_file),
    )
    rows = load_results(out_file)
    assert [r["shift"] for r in rows] == ["none", "brightness"]
    assert rows[0]["config_hash"] != rows[1]["config_hash"]


def test_mi_command_reports_bits(capsys) -> None:
    out = run_cli(
        capsys,
        "mi",
        "--task", "reach",
        "--shift", "brightness",
        "--policy", "mixture",
        "--lambda", "0",
        "--rollouts", "100",
    )
    assert "mi_action_spurious=" in out
    assert "bits" in out


def test_mi_compare_expert(capsys) -> None:
    out = run_cli(
        capsys,
        "mi",
        "--task", "reach",
        "--shift", "none",
        "--policy", "mixture",
        "--lambda", "0.65",
        "--rollouts", "100",
        "--compare-expert",
    )
    assert "expert mi_action_spurious=" in out
    assert "spurious gap over expert=" in out


def test_demo_writes_frames(capsys, tmp_path) -> None:
    frames = tmp_path / "frames"
    out = run_cli(
        capsys,
        "demo",
        "--task", "reach",
        "--shift", "brightness",
        "--policy", "mixture",
        "--lambda", "0.65",
        "--method", "pcd",
        "--alpha", "1.0",
        "--seed", "3",
        "--out-dir", str(frames),
    )
    plain = sorted(frames.glob("step_*[0-9].ppm"))
    masked = sorted(frames.glob("step_*_masked.ppm"))
    assert plain and masked
    assert len(plain) == len(masked)  # every step renders both branches
    header = plain[0].read_bytes()[:2]
    assert header == b"P6"
    assert "step 0000 action=(" in out
    assert "success_completion=" in out


def test_demo_baseline_has_no_masked_frames(capsys, tmp_path) -> None:
    frames = tmp_path / "frames"
    run_cli(
        capsys,
        "demo",
        "--task", "reach",
        "--shift", "none",
        "--policy", "mixture",
        "--lambda", "0",
        "--method", "baseline",
        "--seed", "1",
        "--out-dir", str(frames),
    )
    assert sorted(frames.glob("step_*[0-9].ppm"))
    assert not list(frames.glob("step_*_masked.ppm"))


def test_bad_inputs_exit_with_error(capsys, tmp_path) -> None:
    code = main(["run", "--task", "reach", "--trials", "0"])
    assert code == 2
    assert "error:" in capsys.readouterr().err
    missing = tmp_path / "nope.json"
    code = main(["run", "--config", str(missing)])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_flag_value_rejected_by_argparse() -> None:
    with pytest.raises(SystemExit):
        main(["run", "--task", "juggle"])


def test_module_entry_point_help() -> None:
    proc = subprocess.run(
        [sys.executable, "-m", "pcd.cli", "--help"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 0
    for command in ("run", "sweep", "mi", "demo", "calibrate"):
        assert command in proc.stdout
