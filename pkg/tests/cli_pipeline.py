"""Run every CLI subcommand end to end in a scratch directory."""

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

SEED = 7


def _snapshot() -> dict:
    n = 12
    return {
        "base_ang_vel": [0.01, -0.02, 0.1], "base_lin_vel": [0.55, 0.03, 0.01],
        "projected_gravity": [0.0, 0.0, -1.0], "command": [0.6, 0.0, 0.0],
        "q": np.linspace(-0.2, 0.2, n).tolist(), "qd": np.linspace(-1, 1, n).tolist(), "q0": [0.0] * n,
        "action": [0.1] * n, "action_prev": [0.05] * n, "action_prev2": [0.0] * n,
        "q_min": [-1.5] * n, "q_max": [1.5] * n, "qd_max": [20.0] * n,
        "foot_forces": [[0, 0, 380.0], [0, 0, 0.0]], "foot_vel": [[0, 0, 0], [0.4, 0, 0.1]],
        "foot_height": [0.0, 0.06], "air_time": [0.0, 0.2], "first_contact": [False, False],
        "foot_acc_z": [0.0, 1.0], "base_height": 0.54, "feet_y_distance": 0.25,
        "single_contact_recent": True, "foothold_reward": 0.8,
    }


def _observations(k: int = 4) -> str:
    rng = np.random.default_rng(SEED)
    rows = []
    for _ in range(k):
        rows.append({"ang_vel": rng.normal(0, 0.1, 3).tolist(), "gravity": [0.0, 0.0, -1.0],
                     "command": [0.6, 0.0, 0.0], "q": rng.normal(0, 0.1, 12).tolist(),
                     "qd": rng.normal(0, 0.5, 12).tolist()})
    return "".join(json.dumps(r) + "\n" for r in rows)


def write_inputs(work: Path) -> None:
    (work / "snapshot.json").write_text(json.dumps(_snapshot()))
    (work / "obs.jsonl").write_text(_observations())
    (work / "gait.json").write_text(json.dumps({"step_height": 0.2, "touchdown_offset": 0.02}))


# (subcommand, arguments, files it produces)
STEPS = [
    ("gen-terrain", ["--family", "stairs_up", "--out", "stairs.hf"], ["stairs.hf"]),
    ("render-depth", ["--terrain", "stairs.hf", "--x", "0.6", "--z", "0.55",
                      "--capsule", "0.85,0.13,0.35,0.9,0.13,0.05,0.04", "--out", "depth.pgm"], ["depth.pgm"]),
    ("init-weights", ["--out", "policy.plw"], ["policy.plw"]),
    ("rollout", ["--terrain", "stairs.hf", "--gait", "gait.json", "--duration", "3", "--out", "roll.jsonl"],
     ["roll.jsonl"]),
    ("rollout", ["--terrain", "stairs_up", "--weights", "policy.plw", "--duration", "0.6", "--out", "traces.jsonl"],
     ["traces.jsonl"]),
    ("foothold-eval", ["--terrain", "stairs.hf", "--traj", "roll.jsonl", "--out", "foothold.jsonl"],
     ["foothold.jsonl"]),
    ("reward-eval", ["--snapshot", "snapshot.json", "--out", "rewards.jsonl"], ["rewards.jsonl"]),
    ("policy-forward", ["--weights", "policy.plw", "--obs", "obs.jsonl", "--depth", "depth.pgm",
                        "--out", "forward.jsonl"], ["forward.jsonl"]),
    ("gradcheck", ["--directions", "25", "--out", "gradcheck.jsonl"], ["gradcheck.jsonl"]),
    ("gate-stats", ["--traces", "traces.jsonl", "--out", "gates.jsonl"], ["gates.jsonl"]),
    ("config", [], []),
]


def run_cli(args, cwd, env=None):
    return subprocess.run([sys.executable, "-m", "perceploco.cli", *args], cwd=cwd, env=env,
                          capture_output=True, timeout=600)


def run_pipeline(work: Path, threads: int) -> dict[str, bytes]:
    """All outputs keyed by file name; stdout of each step is kept too."""
    work.mkdir(parents=True, exist_ok=True)
    write_inputs(work)
    env = {k: v for k, v in os.environ.items() if k not in ("NUMBA_NUM_THREADS", "PERCEPLOCO_CONFIG")}
    out: dict[str, bytes] = {}
    for i, (cmd, args, files) in enumerate(STEPS):
        proc = run_cli([cmd, "--seed", str(SEED), "--threads", str(threads), *args], work, env)
        if proc.returncode != 0:
            raise RuntimeError(f"{cmd} exited {proc.returncode}: {proc.stderr.decode()}")
        out[f"{i}-{cmd}.stdout"] = proc.stdout
        for name in files:
            out[name] = (work / name).read_bytes()
    return out
