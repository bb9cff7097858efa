"""Behaviour of the command-line tool: exit codes, help text, outputs."""

import json
import os
import subprocess
from pathlib import Path

import pytest

CLI = os.environ.get("FEATHERPOINT_CLI", "featherpoint")
SMALL = [
    "--data.synthetic.n_train", "4",
    "--data.synthetic.n_val", "2",
    "--data.synthetic.size", "[32,32]",
    "--data.synthetic.bench_pairs", "2",
]


def run(*args, env=None):
    full_env = dict(os.environ)
    full_env.update(env or {})
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env=full_env)


def test_help_lists_the_defaults():
    r = run("--help")
    assert r.returncode == 0
    assert '"epochs": 30' in r.stdout
    assert '"threshold_modes"' in r.stdout
    for cmd in ["train", "search", "quantize", "eval", "report", "extract", "gen-data"]:
        assert cmd in r.stdout


def test_unknown_config_key_exits_2_with_the_path(tmp_path):
    r = run("--train.bogus", "1", "--out-dir", tmp_path, "train")
    assert r.returncode == 2
    assert "train.bogus" in r.stderr


def test_invalid_value_exits_2(tmp_path):
    r = run("--model.norm_kind", "GroupNorm", "--out-dir", tmp_path, "train")
    assert r.returncode == 2
    assert "model.norm_kind" in r.stderr


def test_missing_files_exit_2(tmp_path):
    assert run("--out-dir", tmp_path, "eval", "-m", tmp_path / "none.fpt.json").returncode == 2
    assert run("-c", tmp_path / "none.json", "train").returncode == 2
    assert run("frobnicate").returncode == 2


def test_bad_thread_count_exits_2(tmp_path):
    r = run("--out-dir", tmp_path, "gen-data", "-o", tmp_path / "d", env={"FEATHERPOINT_THREADS": "zero"})
    assert r.returncode == 2
    assert "FEATHERPOINT_THREADS" in r.stderr


def test_divergence_exits_3(tmp_path):
    r = run(*SMALL, "--train.epochs", "2", "--train.lr", "1e300", "--train.clip", "1e300", "--out-dir", tmp_path,
            "train")
    assert r.returncode == 3, r.stderr
    assert "non-finite" in r.stderr


def test_zero_epochs_writes_the_initialized_model(tmp_path):
    r = run(*SMALL, "--train.epochs", "0", "--out-dir", tmp_path, "train")
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "model.fpt.json").exists()
    assert (tmp_path / "train_metrics.jsonl").read_text() == ""


def test_same_seed_gives_identical_models_and_reports(tmp_path):
    outputs = []
    for name in ["a", "b"]:
        out = tmp_path / name
        assert run(*SMALL, "--train.epochs", "2", "--seed", "3", "--out-dir", out, "train").returncode == 0
        assert run("--out-dir", out, "report", "-m", out / "model.fpt.json").returncode == 0
        outputs.append([(out / f).read_bytes() for f in ["model.fpt.json", "memory_float32.json", "memory_int8.json"]])
    assert outputs[0] == outputs[1]
    other = tmp_path / "c"
    assert run(*SMALL, "--train.epochs", "2", "--seed", "4", "--out-dir", other, "train").returncode == 0
    assert (other / "model.fpt.json").read_bytes() != outputs[0][0]


def test_extract_writes_csv_and_descriptors(tmp_path):
    assert run(*SMALL, "--train.epochs", "0", "--out-dir", tmp_path, "train").returncode == 0
    assert run("--out-dir", tmp_path, "gen-data", "-n", "2", "-o", tmp_path / "hp").returncode == 0
    prefix = tmp_path / "kp"
    r = run("--eval.threshold_modes", '["fixed(0.0)"]', "--out-dir", tmp_path, "extract", "-m",
            tmp_path / "model.fpt.json", "-i", tmp_path / "hp" / "v_synth1" / "1.pgm", "-o", prefix)
    assert r.returncode == 0, r.stderr
    lines = Path(str(prefix) + ".csv").read_text().splitlines()
    assert lines[0] == "x,y,score"
    count, dim = map(int, Path(str(prefix) + ".desc").read_text().split("\n")[0].split())
    assert count == len(lines) - 1
    assert dim == 64
    assert r.stdout.startswith(f"{count} keypoints")


def test_print_config_is_valid_json(tmp_path):
    r = run("--print-config", "--seed", "11", "--out-dir", tmp_path, "gen-data", "-n", "1", "-o", tmp_path / "d")
    assert r.returncode == 0
    doc, _ = json.JSONDecoder().raw_decode(r.stdout)
    assert doc["seed"] == 11
