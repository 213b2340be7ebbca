import json

import numpy as np
import pytest

from perceploco.cli import EXIT_DATA, EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from perceploco.policy import layers

from .cli_pipeline import SEED, run_cli, run_pipeline, write_inputs


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["gen-terrain"],
    ["gen-terrain", "--family", "nope", "--out", "x.hf"],
    ["render-depth", "--terrain", "t.hf", "--out", "d.pgm", "--capsule", "1,2,3"],
    ["gradcheck", "--blocks", "tokenizer,fins"],
    ["rollout", "--terrain", "flat", "--out", "r.jsonl", "--threads", "0"],
])
def test_usage_errors(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_USAGE


@pytest.mark.parametrize("argv", [
    ["render-depth", "--terrain", "missing.hf", "--out", "d.pgm"],
    ["foothold-eval", "--terrain", "missing.hf", "--traj", "t.jsonl"],
    ["policy-forward", "--weights", "bad.plw", "--obs", "o.jsonl", "--depth", "d.pgm"],
    ["reward-eval", "--snapshot", "bad.json"],
    ["rollout", "--terrain", "flat", "--gait", "badgait.json", "--out", "r.jsonl"],
    ["config", "--config", "missing.ini"],
])
def test_data_errors(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "bad.plw").write_bytes(b"PLOCOWT\0garbage")
    (tmp_path / "bad.json").write_text("{")
    (tmp_path / "badgait.json").write_text('{"stride": 2}')
    assert main(argv) == EXIT_DATA
    assert "perceploco" in capsys.readouterr().err


def test_gradcheck_failure_exit_code(monkeypatch, tmp_path, capsys):
    monkeypatch.setattr(layers, "elu_grad", lambda x: np.ones_like(x))
    out = tmp_path / "g.jsonl"
    assert main(["gradcheck", "--blocks", "head", "--directions", "5", "--out", str(out)]) == EXIT_FAILED
    rows = [json.loads(x) for x in out.read_text().splitlines()]
    assert rows[-1] == {"block": "all", "passed": False}


def test_gradcheck_passes(tmp_path):
    out = tmp_path / "g.jsonl"
    assert main(["gradcheck", "--blocks", "gru,highway", "--directions", "10", "--out", str(out)]) == EXIT_OK
    rows = [json.loads(x) for x in out.read_text().splitlines()]
    assert [r["block"] for r in rows] == ["gru", "highway", "all"]
    assert all(r["max_rel_error"] < 1e-4 for r in rows[:2])


def test_common_flags_before_or_after(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["--seed", "3", "init-weights", "--out", "a.plw"]) == EXIT_OK
    assert main(["init-weights", "--out", "b.plw", "--seed", "3"]) == EXIT_OK
    assert (tmp_path / "a.plw").read_bytes() == (tmp_path / "b.plw").read_bytes()
    assert main(["init-weights", "--out", "c.plw", "--seed", "4"]) == EXIT_OK
    assert (tmp_path / "a.plw").read_bytes() != (tmp_path / "c.plw").read_bytes()


def test_config_file_changes_output(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "c.ini").write_text("[terrain]\nrise = 0.1\n")
    assert main(["gen-terrain", "--family", "stairs_up", "--out", "a.hf"]) == EXIT_OK
    assert main(["gen-terrain", "--family", "stairs_up", "--out", "b.hf", "--config", "c.ini"]) == EXIT_OK
    assert main(["gen-terrain", "--family", "stairs_up", "--out", "c.hf", "--config", "c.ini", "--rise", "0.15"]) == 0
    a, b, c = ((tmp_path / n).read_bytes() for n in ("a.hf", "b.hf", "c.hf"))
    assert a != b and a == c


def test_config_subcommand_round_trips(tmp_path, monkeypatch, capsys):
    from perceploco.config import Config

    assert main(["config"]) == EXIT_OK
    assert Config.loads(capsys.readouterr().out) == Config()


def test_pretty_format(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    write_inputs(tmp_path)
    assert main(["reward-eval", "--snapshot", "snapshot.json", "--format", "pretty"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "total" in text and not text.lstrip().startswith("{")


def test_outputs_identical_across_runs_and_threads(tmp_path):
    a = run_pipeline(tmp_path / "a", threads=1)
    b = run_pipeline(tmp_path / "b", threads=1)
    c = run_pipeline(tmp_path / "c", threads=8)
    assert a.keys() == b.keys() == c.keys()
    assert [k for k in a if a[k] != b[k]] == []
    assert [k for k in a if a[k] != c[k]] == []


def test_module_entry_point(tmp_path):
    proc = run_cli(["--seed", str(SEED)], tmp_path)
    assert proc.returncode == EXIT_USAGE
