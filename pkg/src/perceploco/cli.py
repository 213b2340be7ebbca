"""Command-line entry point: ``perceploco <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 a
verification subcommand (``gradcheck``) ran but failed its threshold.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import FormatError, PercepLocoError

# Everything that pulls in numba is imported inside the subcommands, so that
# --threads can set NUMBA_NUM_THREADS before the worker pool is created.

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAILED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# output


class Emitter:
    """Writes records as JSON lines or an indented human form, to stdout or a file."""

    def __init__(self, fmt: str, path: str | None = None):
        self.fmt = fmt
        self.path = path
        self._chunks: list[str] = []

    def emit(self, record: dict) -> None:
        if self.fmt == "lines":
            self._chunks.append(json.dumps(record, sort_keys=True))
        else:
            self._chunks.append(_pretty(record))

    def close(self) -> None:
        text = "\n".join(self._chunks) + ("\n" if self._chunks else "")
        if self.path:
            Path(self.path).write_text(text)
        else:
            sys.stdout.write(text)


def _pretty(record: dict, indent: int = 0) -> str:
    pad = " " * indent
    width = max((len(k) for k in record), default=0)
    lines = []
    for k, v in record.items():
        if isinstance(v, dict):
            lines.append(f"{pad}{k}:")
            lines.append(_pretty(v, indent + 2))
        else:
            shown = f"{v:.6g}" if isinstance(v, float) else json.dumps(v) if isinstance(v, (list, tuple)) else str(v)
            lines.append(f"{pad}{k:<{width}}  {shown}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_terrain(args, cfg):
    from .terrain import FAMILIES, generate, save_heightfield

    if args.family is not None and args.family not in FAMILIES:
        raise UsageError(f"unknown family {args.family!r}; choose from {', '.join(FAMILIES)}")
    cfg.override("terrain", family=args.family, rise=args.rise, tread=args.tread, gap_width=args.gap_width,
                  platform_height=args.platform_height, extent=args.extent, width=args.width,
                  resolution=args.resolution, seed=args.seed)
    hf = generate(cfg.terrain_spec())
    save_heightfield(hf, args.out)
    e = hf.elevation
    return [{"out": args.out, "family": hf.meta["family"], "nx": hf.nx, "ny": hf.ny,
             "resolution": hf.resolution, "z_min": float(e.min()), "z_max": float(e.max())}]


def _camera(cfg, args):
    from .render import CameraModel

    c = cfg["camera"]
    return CameraModel(
        position=(args.x, args.y, args.z),
        rpy=(args.roll, args.pitch, args.yaw),
        pitch_down=math.radians(c["pitch_down_deg"]),
        width=c["width"], height=c["height"],
        vertical_fov=math.radians(c["vertical_fov_deg"]),
        d_max=c["d_max"],
    )


def _capsule(text: str):
    from .render import Capsule

    try:
        v = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"--capsule expects 7 comma-separated numbers: {exc}") from exc
    if len(v) != 7:
        raise UsageError("--capsule expects ax,ay,az,bx,by,bz,radius")
    return Capsule(tuple(v[:3]), tuple(v[3:6]), v[6])


def cmd_render_depth(args, cfg):
    from .render import CapsuleScene, render_depth, write_depth_pgm
    from .terrain import load_heightfield

    cfg.override("camera", pitch_down_deg=args.pitch_down_deg, d_max=args.d_max)
    scene = CapsuleScene([_capsule(c) for c in args.capsule or []])
    hf = load_heightfield(args.terrain)
    cam = _camera(cfg, args)
    img = render_depth(cam, hf, scene)
    write_depth_pgm(img, args.out)
    raw = img.raw
    return [{"out": args.out, "width": img.width, "height": img.height, "d_max": img.d_max,
             "min": float(raw.min()), "max": float(raw.max()), "mean": float(raw.mean()),
             "misses": int(np.count_nonzero(raw >= img.d_max))}]


def _read_jsonl(path):

    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def cmd_foothold_eval(args, cfg):
    from .harness import foothold_over_trajectory
    from .terrain import load_heightfield

    hf = load_heightfield(args.terrain)
    records = [r for r in _read_jsonl(args.traj) if r.get("kind", "step") == "step"]
    try:
        times = [float(r["t"]) for r in records]
        feet = np.array([r["feet"] for r in records], dtype=np.float64).reshape(len(records), -1, 3)
        if args.forward_cmd is None:
            cmds = [float(r.get("command", [0.0])[0]) for r in records]
        else:
            cmds = [args.forward_cmd] * len(records)
        yaw = float(records[0].get("rpy", [0, 0, 0])[2]) if records else 0.0
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"trajectory records need 't' and 'feet': {exc}") from exc
    tds = foothold_over_trajectory(hf, times, feet, cmds, cfg.foothold(), cfg.sector(), yaw)
    return [{"foot": td["foot"], "t": td["t"], "reward": td["reward"], "distance": td["distance"],
             "contact_local": td["contact_local"], "candidates": td["candidates"]} for td in tds]


def cmd_reward_eval(args, cfg):
    from .rewards import RobotSnapshot, evaluate_all

    try:
        data = json.loads(Path(args.snapshot).read_text())
    except ValueError as exc:
        raise FormatError(f"{args.snapshot}: {exc}") from exc
    foothold_r = float(data.pop("foothold_reward", 0.0)) if args.foothold_reward is None else args.foothold_reward
    try:
        snap = RobotSnapshot.from_dict(data)
    except TypeError as exc:
        raise FormatError(f"snapshot is missing fields: {exc}") from exc
    b = evaluate_all(snap, foothold_r, cfg.reward_params())
    out = [{"term": k, "raw": raw, "weight": w, "weighted": wv} for k, (raw, w, wv) in b.terms.items()]
    out.append({"term": "total", "weighted": b.total})
    return out


def _precision(cfg):
    return np.float32 if cfg["policy"]["precision"] == "float32" else np.float64


def cmd_policy_forward(args, cfg):
    from .policy import PolicyState, assemble_proprio, forward, load_params
    from .render import read_depth_pgm

    params = load_params(args.weights, _precision(cfg))
    img = read_depth_pgm(args.depth)
    depth = img.normalized
    if depth.shape != params.dims.image_hw:
        raise FormatError(f"depth image is {depth.shape}, the network expects {params.dims.image_hw}")
    state = PolicyState.zeros(params.dims, params.dtype)
    out = []
    for k, obs in enumerate(_read_jsonl(args.obs)):
        try:
            if "proprio" in obs:
                proprio = np.asarray(obs["proprio"], dtype=np.float64)
            else:
                proprio = assemble_proprio(obs["ang_vel"], obs["gravity"], obs["command"], obs["q"],
                                           obs.get("q0", np.zeros(len(obs["q"]))), obs["qd"], state.action_prev)
            q0 = obs.get("q0")
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"observation {k}: {exc}") from exc
        step = forward(proprio, depth, state, params, q0)
        state = step.state
        tr = step.trace
        out.append({"step": k, "action": step.action.tolist(), "q_target": step.q_target.tolist(),
                    "velocity": tr.velocity.tolist(), "beta_mean": float(np.mean(tr.beta)),
                    "attention": tr.attention.tolist()})
    return out


def cmd_gradcheck(args, cfg):
    from .policy import BLOCKS, run_gradcheck

    blocks = args.blocks.split(",") if args.blocks else BLOCKS
    bad = [b for b in blocks if b not in BLOCKS]
    if bad:
        raise UsageError(f"unknown blocks {bad}; choose from {', '.join(BLOCKS)}")
    results = run_gradcheck(args.seed, args.directions, blocks, cfg.policy_dims())
    out = [{"block": r.block, "max_rel_error": r.max_rel_error, "directions": r.directions, "passed": r.passed}
           for r in results]
    ok = all(r.passed for r in results)
    out.append({"block": "all", "passed": ok})
    return out, (EXIT_OK if ok else EXIT_FAILED)


def _terrain_arg(text: str, cfg):
    from .terrain import FAMILIES, generate, load_heightfield

    if text in FAMILIES and not Path(text).exists():
        cfg.override("terrain", family=text)
        return generate(cfg.terrain_spec())
    return load_heightfield(text)


def cmd_rollout(args, cfg):
    from .harness import GaitScript, RolloutConfig, run_rollout
    from .policy import load_params
    from .render import CameraModel

    cfg.override("rollout", duration=args.duration)
    hf = _terrain_arg(args.terrain, cfg)
    if args.gait:
        try:
            gait_data = json.loads(Path(args.gait).read_text())
        except ValueError as exc:
            raise FormatError(f"{args.gait}: {exc}") from exc
        merged = dict(cfg["gait"])
        merged.update(gait_data)
        script = GaitScript.from_dict(merged)
    else:
        script = cfg.gait()
    c = cfg["camera"]
    camera = CameraModel(pitch_down=math.radians(c["pitch_down_deg"]), width=c["width"], height=c["height"],
                         vertical_fov=math.radians(c["vertical_fov_deg"]), d_max=c["d_max"])
    rc = RolloutConfig(
        foothold=cfg.foothold(), rewards=cfg.reward_params(), sector=cfg.sector(), camera=camera,
        camera_offset=(c["offset_x"], c["offset_y"], c["offset_z"]),
        body_mass=cfg["rollout"]["body_mass"], contact_mode=cfg["rollout"]["contact_mode"],
        policy=load_params(args.weights, _precision(cfg)) if args.weights else None,
    )
    log = run_rollout(script, hf, cfg["rollout"]["duration"], rc)
    log.write(args.out)
    tds = log.touchdowns
    rewards = [td["reward"] for td in tds]
    return [{"out": args.out, "steps": len(log), "touchdowns": len(tds),
             "mean_foothold_reward": float(np.mean(rewards)) if rewards else None,
             "total_reward": float(sum(s["total_reward"] for s in log.steps))}]


def cmd_gate_stats(args, cfg):
    from .harness import RolloutLog, gate_records
    from .policy.gates import gate_statistics, parse_records

    lines = Path(args.traces).read_text().splitlines()
    first = next((json.loads(ln) for ln in lines if ln.strip()), {})
    if first.get("kind") == "header":
        records = gate_records(RolloutLog.parse(lines))
    else:
        records = parse_records(lines)
    stats = gate_statistics(records)
    out = []
    for axis, groups in stats.items():
        for label, mean in groups.items():
            out.append({"group": axis, "label": label, "mean_beta": mean,
                        "count": sum(1 for r in records if getattr(r, axis) == label)})
    return out


def cmd_init_weights(args, cfg):
    from .policy import init_params, save_params

    params = init_params(cfg.policy_dims(), args.seed)
    save_params(params, args.out)
    return [{"out": args.out, "seed": args.seed, "parameters": params.count()}]


def cmd_config(args, cfg):
    sys.stdout.write(cfg.dumps())
    return []


# ---------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="INI config file (default: $PERCEPLOCO_CONFIG)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every random draw (default 0)")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="cap on worker threads")
    p.add_argument("--format", choices=("lines", "pretty"), default=argparse.SUPPRESS, help="output style")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="perceploco", description="Perceptive locomotion toolkit.", parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("gen-terrain", cmd_gen_terrain, "generate a terrain heightfield file")
    p.add_argument("--family")
    for flag in ("--rise", "--tread", "--gap-width", "--platform-height", "--extent", "--width", "--resolution"):
        p.add_argument(flag, type=float)
    p.add_argument("--out", required=True)

    p = add("render-depth", cmd_render_depth, "render a 16-bit PGM depth image of a terrain file")
    p.add_argument("--terrain", required=True)
    p.add_argument("--out", required=True)
    for flag, default in (("--x", 0.5), ("--y", 0.0), ("--z", 1.0), ("--roll", 0.0), ("--pitch", 0.0), ("--yaw", 0.0)):
        p.add_argument(flag, type=float, default=default)
    p.add_argument("--pitch-down-deg", type=float)
    p.add_argument("--d-max", type=float)
    p.add_argument("--capsule", action="append", help="ax,ay,az,bx,by,bz,radius (repeatable)")

    p = add("foothold-eval", cmd_foothold_eval, "score touchdowns of a trajectory file")
    p.add_argument("--terrain", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--forward-cmd", type=float, help="override the per-record forward command")
    p.add_argument("--out")

    p = add("reward-eval", cmd_reward_eval, "evaluate every reward term on a JSON snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--foothold-reward", type=float)
    p.add_argument("--out")

    p = add("policy-forward", cmd_policy_forward, "run the policy on observations and a depth image")
    p.add_argument("--weights", required=True)
    p.add_argument("--obs", required=True, help="JSON lines, one observation per step")
    p.add_argument("--depth", required=True)
    p.add_argument("--out")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every network block")
    p.add_argument("--directions", type=int, default=1000)
    p.add_argument("--blocks", help="comma-separated subset")
    p.add_argument("--out")

    p = add("rollout", cmd_rollout, "scripted kinematic rollout with foothold and reward logging")
    p.add_argument("--terrain", required=True, help="heightfield file or terrain family name")
    p.add_argument("--gait", help="JSON file with gait script fields")
    p.add_argument("--duration", type=float)
    p.add_argument("--weights", help="policy weights; logs actions and gate values")
    p.add_argument("--out", required=True)

    p = add("gate-stats", cmd_gate_stats, "group mean highway-gate values by terrain, contact, posture")
    p.add_argument("--traces", required=True)
    p.add_argument("--out")

    p = add("init-weights", cmd_init_weights, "write seeded initial policy weights")
    p.add_argument("--out", required=True)

    add("config", cmd_config, "print the effective configuration")
    return parser


def _limit_threads(n: int | None):
    """Cap numba workers; BLAS stays single-threaded so reductions never reorder."""
    from threadpoolctl import threadpool_limits

    import numba

    if n is not None:
        if n < 1:
            raise UsageError("--threads must be >= 1")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return threadpool_limits(1)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        args.seed = getattr(args, "seed", 0)
        threads = getattr(args, "threads", None)
        if threads is not None and threads >= 1 and "numba" not in sys.modules:
            # the worker pool size is read once, at numba import
            os.environ["NUMBA_NUM_THREADS"] = str(threads)
        fmt = getattr(args, "format", "lines")
        return _dispatch(args, fmt)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE


def _dispatch(args, fmt: str) -> int:
    from .config import Config

    try:
        cfg = Config.resolve(getattr(args, "config", None))
        with _limit_threads(getattr(args, "threads", None)):
            result = args.func(args, cfg)
    except UsageError:
        raise
    except (PercepLocoError, ValueError, OSError) as exc:
        print(f"perceploco {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    records, code = result if isinstance(result, tuple) else (result, EXIT_OK)
    out_path = getattr(args, "out", None) if args.func in _REPORT_TO_OUT else None
    em = Emitter(fmt, out_path)
    for r in records:
        em.emit(r)
    em.close()
    return code


_REPORT_TO_OUT = {cmd_foothold_eval, cmd_reward_eval, cmd_policy_forward, cmd_gradcheck, cmd_gate_stats}


if __name__ == "__main__":
    sys.exit(main())
