"""Command-line surface: segment | plan | navigate | train | bench | gradcheck.

Every command is deterministic given --seed and writes its artifacts only
after inputs validate. Exit codes: 0 success, 2 parse/validation error,
3 I/O error, 4 no path, 5 collision, 6 timeout, 7 navigation failure;
gradcheck exits 1 when the gradient error exceeds its threshold.
Set GROUNDNAV_LOG to error/warn/info/debug to control logging.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import policylearn
from .errors import (
    AllBlocked,
    ConfigError,
    GoalInvalid,
    NoPath,
    ParseError,
    PlanningError,
    StartInvalid,
    ValidationError,
)
from .core import RobotParams, world_to_grid
from .globalplanner import inflate, path_to_csv, plan, shortcut
from .groundseg import (
    class_frame_to_ppm,
    depth_to_pgm16,
    project_to_traversability,
    segment,
    traversability_to_pgm,
)
from .localplanner import DWParams
from .mapping import OccClass, load_map_files
from .pgmio import encode_pgm
from .runtime import PipelineConfig, bench, run_navigation, ticks_to_csv, trajectory_to_csv
from .scenarios import random_scenario
from .simenv import load_scenario_file, render_depth, segmentation_agreement

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_NOPATH = 4
EXIT_COLLISION = 5
EXIT_TIMEOUT = 6
EXIT_FAILED = 7

_OUTCOME_EXIT = {"Reached": EXIT_OK, "Collision": EXIT_COLLISION, "Timeout": EXIT_TIMEOUT,
                 "Failed": EXIT_FAILED}

TRAIN_SEED_BASE = 100

log = logging.getLogger("groundnav.cli")


def _write(path, data):
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    with open(path, mode) as fh:
        fh.write(data)


def cmd_segment(args) -> int:
    spec = load_scenario_file(args.scenario)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    rng = np.random.default_rng(spec.seed)
    frame, labels = render_depth(
        spec.scene, spec.start, spec.camera,
        noise_sigma=spec.depth_noise_sigma, dropout_rate=spec.dropout_rate, rng=rng,
    )
    classes = segment(frame, spec.camera, spec.seg)
    tmap = project_to_traversability(classes, frame, spec.camera, spec.seg)
    correct, total = segmentation_agreement(classes, labels, spec.seg)
    accuracy = correct / total if total else 0.0

    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "depth.pgm"), depth_to_pgm16(frame))
    _write(os.path.join(args.out, "classes.ppm"), class_frame_to_ppm(classes))
    _write(os.path.join(args.out, "traversability.pgm"), traversability_to_pgm(tmap))
    _write(os.path.join(args.out, "accuracy.txt"),
           f"accuracy = {accuracy:.6f}\ncorrect = {correct}\ntotal = {total}\n")
    print(f"accuracy = {accuracy:.6f}")
    return EXIT_OK


def cmd_plan(args) -> int:
    grid = load_map_files(args.map)
    robot = RobotParams(radius=args.radius) if args.radius else RobotParams()
    cm = inflate(grid, robot, robot.radius + args.inflation)
    start = world_to_grid(grid.geometry, args.start[0], args.start[1])
    goal = world_to_grid(grid.geometry, args.goal[0], args.goal[1])
    if start is None:
        raise StartInvalid(f"start {args.start} outside the map")
    if goal is None:
        raise GoalInvalid(f"goal {args.goal} outside the map")
    path = plan(cm, start, goal)
    waypoints = shortcut(path, cm)

    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "path.csv"), path_to_csv(path.cells, grid.geometry))
    _write(os.path.join(args.out, "waypoints.csv"), path_to_csv(waypoints, grid.geometry))
    overlay = np.full(cm.lethal.shape, 254, dtype=np.uint8)
    overlay[grid.classes() == OccClass.UNKNOWN] = 205
    overlay[cm.lethal] = 120
    overlay[grid.classes() == OccClass.OCCUPIED] = 0
    for c, r in path.cells:
        overlay[r, c] = 180
    for c, r in waypoints:
        overlay[r, c] = 60
    _write(os.path.join(args.out, "overlay.pgm"), encode_pgm(overlay))
    print(f"total_cost = {path.total_cost:.9f}")
    return EXIT_OK


def _resolve_policy(spec_text: str, robot: RobotParams):
    if spec_text == "rule":
        return None
    if spec_text.startswith("learned:"):
        net = policylearn.load_weights(spec_text.split(":", 1)[1], robot)
        return policylearn.LearnedPolicy(net, robot)
    raise ValidationError(f"policy must be 'rule' or 'learned:<weights>', got {spec_text!r}")


def cmd_navigate(args) -> int:
    spec = load_scenario_file(args.scenario)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    policy = _resolve_policy(args.policy, spec.robot)
    config = PipelineConfig(
        scenario=spec, policy=policy, timeout=args.timeout, pose_source=args.pose_source,
    )
    report = run_navigation(config)

    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "trajectory.csv"), trajectory_to_csv(report.trajectory))
    _write(os.path.join(args.out, "ticks.csv"), ticks_to_csv(report.ticks))
    print(f"outcome = {report.outcome} ({report.reason}) after {report.sim_time:.2f} s")
    return _OUTCOME_EXIT[report.outcome]


def cmd_train(args) -> int:
    specs = [random_scenario(TRAIN_SEED_BASE + i) for i in range(args.n_train)]
    dataset = policylearn.collect_dataset(specs, seed=args.seed)
    hyper = policylearn.TrainConfig(lr=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed)
    net, losses = policylearn.train(dataset, hyper)

    os.makedirs(args.out, exist_ok=True)
    policylearn.save_weights(net, os.path.join(args.out, "policy.mlpw"))
    loss_csv = "epoch,loss\n" + "".join(f"{i},{l!r}\n" for i, l in enumerate(losses))
    _write(os.path.join(args.out, "loss.csv"), loss_csv)
    final = losses[-1] if losses else float("nan")
    print(f"trained on {dataset.features.shape[0]} samples; final loss = {final:.6f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = PipelineConfig(scenario=load_scenario_file(args.scenario))
    report = bench(config, args.ticks)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "bench.csv"), report.to_csv())
    print(f"achieved_hz = {report.achieved_hz:.2f}")
    for stage, (mean_s, p95_s) in report.stage_stats.items():
        print(f"{stage}: mean {mean_s * 1e3:.3f} ms, p95 {p95_s * 1e3:.3f} ms")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    robot = RobotParams()
    worst = 0.0
    for i in range(args.triples):
        net = policylearn.init_policy(robot, seed=int(rng.integers(2**31 - 1)))
        x = rng.uniform(-1.0, 1.0, size=policylearn.N_FEATURES)
        target = np.array([rng.uniform(0.0, 1.0), rng.uniform(-1.0, 1.0)])
        worst = max(worst, policylearn.grad_check(net, x, target))
    print(f"max_relative_error = {worst:.3e}")
    return EXIT_OK if worst <= 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="render one frame, segment it, dump artifacts")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("plan", help="plan a route on a saved occupancy map")
    p.add_argument("--map", required=True)
    p.add_argument("--start", nargs=2, type=float, required=True, metavar=("X", "Y"))
    p.add_argument("--goal", nargs=2, type=float, required=True, metavar=("X", "Y"))
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--inflation", type=float, default=0.15,
                   help="soft-cost band width beyond the robot radius (m)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("navigate", help="run the closed-loop stack on a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", default="rule", help="rule | learned:<weight file>")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pose-source", choices=("truth", "odom"), default="truth")
    p.set_defaults(func=cmd_navigate)

    p = sub.add_parser("train", help="behavior-clone the rule policy on generated scenarios")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="measure perception->policy throughput")
    p.add_argument("--scenario", required=True)
    p.add_argument("--ticks", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="verify backprop against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--triples", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoPath as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOPATH
    except (ParseError, ValidationError, ConfigError, StartInvalid, GoalInvalid, AllBlocked) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PlanningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    level = os.environ.get("GROUNDNAV_LOG", "warn").lower()
    logging.basicConfig(level={"error": logging.ERROR, "warn": logging.WARNING,
                               "info": logging.INFO, "debug": logging.DEBUG}.get(level, logging.WARNING))
    sys.exit(main())


if __name__ == "__main__":
    entry()
