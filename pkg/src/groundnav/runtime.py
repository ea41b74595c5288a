"""Closed-loop navigation pipeline and the throughput benchmark.

One simulated control tick runs sensor -> segmentation -> traversability ->
policy -> command; occupancy integration and replanning happen at a lower
rate. The stage structure mirrors three independently schedulable workers
communicating through latest-value snapshots; this single-threaded
scheduler interleaving them at the configured rates is a conforming
realization, and simulated time (not wall time) drives all rates, so runs
are deterministic.

Perception cannot see the floor the robot currently stands on, so the
control loop keeps a short-horizon world-frame fusion of per-frame
traversability maps (plus a seeded clear disc at the start pose, where the
robot is by assumption standing safely). The policy consumes a
robot-centric snapshot of that fused map each tick. A stale-perception
watchdog zeroes the command whenever the newest snapshot is older than
stale_timeout.
"""
from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import Pose2D, RobotParams, Twist
from .errors import AllBlocked, ConfigError, PlanningError, ValidationError
from .globalplanner import plan_route
from .groundseg import (
    CellState,
    SegParams,
    TraversabilityMap,
    project_to_traversability,
    segment,
    traversability_geometry,
)
from .localplanner import DWParams, PolicyInput, PolicyOutput, WaypointManager, recovery, rule_policy
from .mapping import (
    DeadReckoningPoseProvider,
    GroundTruthPoseProvider,
    OccupancyGrid,
    grid_for_scene,
    integrate,
    rasterize_scene,
)
from .simenv import ScenarioSpec, SimState, check_collision, load_scenario_file, render_depth, step_sim

log = logging.getLogger("groundnav.runtime")

RECOVERY_BUDGET = 3.0  # seconds of continuous recovery before replanning / failing


class NavState(Enum):
    IDLE = "Idle"
    PLANNING = "Planning"
    FOLLOWING = "Following"
    REACHED = "Reached"
    FAILED = "Failed"


LEGAL_TRANSITIONS = {
    (NavState.IDLE, NavState.PLANNING),
    (NavState.PLANNING, NavState.FOLLOWING),
    (NavState.PLANNING, NavState.FAILED),
    (NavState.FOLLOWING, NavState.PLANNING),
    (NavState.FOLLOWING, NavState.REACHED),
    (NavState.FOLLOWING, NavState.FAILED),
}


@dataclass
class RulePolicy:
    """Default policy: the dynamic-window search with recovery handled by the loop."""

    params: DWParams
    robot: RobotParams

    def __call__(self, pin: PolicyInput) -> PolicyOutput:
        return rule_policy(pin, self.params, self.robot)


@dataclass
class PipelineConfig:
    """Navigation run configuration. scenario may be a ScenarioSpec or a file path."""

    scenario: ScenarioSpec | str
    policy: object | None = None  # callable PolicyInput -> PolicyOutput; None = rule policy
    control_rate: float = 18.0
    replan_rate: float = 2.0
    perception_rate: float | None = None  # None: perceive every control tick
    stale_timeout: float = 0.25
    timeout: float | None = None  # None: use the scenario's timeout
    pose_source: str = "truth"  # or "odom" (dead reckoning)
    dw: DWParams = field(default_factory=DWParams)
    lookahead: float = 0.6
    seed_clear_radius: float = 0.7
    inflation_margin: float = 0.15  # soft-cost band width beyond the robot radius

    def __post_init__(self):
        if self.control_rate <= 0:
            raise ConfigError("control_rate must be positive")
        if self.replan_rate <= 0 or self.replan_rate > self.control_rate:
            raise ConfigError("need 0 < replan_rate <= control_rate")
        if self.stale_timeout <= 1.0 / self.control_rate:
            raise ConfigError("stale_timeout must exceed one control period")
        if self.perception_rate is not None and not (0 < self.perception_rate <= self.control_rate):
            raise ConfigError("need 0 < perception_rate <= control_rate")
        if self.pose_source not in ("truth", "odom"):
            raise ConfigError(f"unknown pose_source {self.pose_source!r}")


@dataclass
class TickRecord:
    index: int
    time: float
    render_s: float
    segment_s: float
    project_s: float
    policy_s: float
    total_s: float
    cmd_v: float
    cmd_omega: float
    perception_age: float
    state: str
    score: float | None = None
    n_feasible: int | None = None


@dataclass
class RunReport:
    outcome: str  # Reached | Collision | Timeout | Failed
    reason: str
    trajectory: list[tuple]
    ticks: list[TickRecord]
    transitions: list[tuple[float, str, str]]
    waypoints: list[tuple[float, float]]
    final_pose: Pose2D
    sim_time: float


class LocalMapMemory:
    """World-frame ternary fusion of per-frame traversability maps.

    Cells only ever move up the ordering UNKNOWN < TRAVERSABLE < OBSTACLE,
    which makes fusion order-independent and conservative (obstacle
    evidence is never forgotten — sound in a static world). A clear disc
    seeded at the start pose covers the floor the camera can never see
    under the robot.
    """

    def __init__(self, grid: OccupancyGrid, seg: SegParams, start: Pose2D, clear_radius: float):
        self.geometry = grid.geometry
        self.world = np.zeros((self.geometry.rows, self.geometry.cols), dtype=np.uint8)
        self.timestamp = -math.inf
        g = self.geometry
        self._xs = g.origin.x + (np.arange(g.cols) + 0.5) * g.resolution
        self._ys = g.origin.y + (np.arange(g.rows) + 0.5) * g.resolution
        d2 = (self._xs[None, :] - start.x) ** 2 + (self._ys[:, None] - start.y) ** 2
        self.world[d2 <= clear_radius * clear_radius] = CellState.TRAVERSABLE
        tg = traversability_geometry(seg)
        self._local_x = tg.origin.x + (np.arange(tg.cols) + 0.5) * tg.resolution
        self._local_y = tg.origin.y + (np.arange(tg.rows) + 0.5) * tg.resolution
        self._tgeom = tg

    def update(self, frame_tmap: TraversabilityMap, pose: Pose2D) -> None:
        observed = frame_tmap.cells != CellState.UNKNOWN
        rows, cols = np.nonzero(observed)
        if rows.size:
            tg = frame_tmap.geometry
            lx = tg.origin.x + (cols + 0.5) * tg.resolution
            ly = tg.origin.y + (rows + 0.5) * tg.resolution
            c, s = math.cos(pose.theta), math.sin(pose.theta)
            wx = pose.x + c * lx - s * ly
            wy = pose.y + s * lx + c * ly
            g = self.geometry
            wc = np.floor((wx - g.origin.x) / g.resolution).astype(np.int64)
            wr = np.floor((wy - g.origin.y) / g.resolution).astype(np.int64)
            inb = (wc >= 0) & (wc < g.cols) & (wr >= 0) & (wr < g.rows)
            np.maximum.at(self.world, (wr[inb], wc[inb]), frame_tmap.cells[rows[inb], cols[inb]])
        self.timestamp = frame_tmap.timestamp

    def snapshot(self, pose: Pose2D) -> TraversabilityMap:
        """Robot-centric view of the fused map (UNKNOWN outside the world grid)."""
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        wx = pose.x + c * self._local_x[None, :] - s * self._local_y[:, None]
        wy = pose.y + s * self._local_x[None, :] + c * self._local_y[:, None]
        g = self.geometry
        wc = np.floor((wx - g.origin.x) / g.resolution).astype(np.int64)
        wr = np.floor((wy - g.origin.y) / g.resolution).astype(np.int64)
        inb = (wc >= 0) & (wc < g.cols) & (wr >= 0) & (wr < g.rows)
        cells = np.zeros(wx.shape, dtype=np.uint8)
        cells[inb] = self.world[wr[inb], wc[inb]]
        return TraversabilityMap(self._tgeom, cells, self.timestamp)


def _densify(waypoints: list[tuple[float, float]], spacing: float) -> list[tuple[float, float]]:
    """Subdivide polyline segments to at most `spacing` so the lookahead
    always targets a point on the planned route instead of cutting corners."""
    out = [waypoints[0]]
    for (x0, y0), (x1, y1) in zip(waypoints, waypoints[1:]):
        n = max(1, math.ceil(math.hypot(x1 - x0, y1 - y0) / spacing))
        for k in range(1, n + 1):
            out.append((x0 + (x1 - x0) * k / n, y0 + (y1 - y0) * k / n))
    return out


def _plan_waypoints(grid: OccupancyGrid, robot: RobotParams, pose: Pose2D, goal, config: PipelineConfig,
                    relocate_start: bool = False) -> list[tuple[float, float]]:
    waypoints = plan_route(grid, robot, (pose.x, pose.y), goal, relocate_start=relocate_start)
    return _densify(waypoints, spacing=0.4)


def run_navigation(config: PipelineConfig, on_policy_tick=None) -> RunReport:
    """Execute one navigation run; returns the report with full tick telemetry.

    Outcomes: Reached (goal within tolerance), Collision (simulator-detected,
    ends the run), Timeout (simulated time exhausted), Failed (no initial
    path, or still blocked after the recovery budget and a replan).
    on_policy_tick(pin, out), when given, observes every successful policy
    evaluation — the behavior-cloning data tap.
    """
    spec = config.scenario
    if isinstance(spec, (str,)) or hasattr(spec, "__fspath__"):
        spec = load_scenario_file(spec)
    robot, cam, seg = spec.robot, spec.camera, spec.seg
    policy = config.policy if config.policy is not None else RulePolicy(config.dw, robot)
    goal_tolerance = getattr(policy, "goal_tolerance", None) or config.dw.goal_tolerance

    dt = 1.0 / config.control_rate
    timeout = spec.timeout if config.timeout is None else config.timeout
    max_ticks = int(round(timeout * config.control_rate))
    rng = np.random.default_rng(spec.seed)

    state = NavState.IDLE
    transitions: list[tuple[float, str, str]] = []

    def goto(new: NavState, t: float):
        nonlocal state
        if (state, new) not in LEGAL_TRANSITIONS:
            raise ValidationError(f"illegal state transition {state.value} -> {new.value}")
        transitions.append((t, state.value, new.value))
        state = new

    occupancy = rasterize_scene(spec.scene, seg.map_resolution)
    ticks: list[TickRecord] = []
    trajectory: list[tuple] = []

    goto(NavState.PLANNING, 0.0)
    try:
        waypoints = _plan_waypoints(occupancy, robot, spec.start, spec.goal, config)
    except PlanningError as exc:
        goto(NavState.FAILED, 0.0)
        return RunReport("Failed", f"{type(exc).__name__}: {exc}", [(0.0, spec.start.x, spec.start.y,
                         spec.start.theta, 0.0, 0.0, state.value)], ticks, transitions, [], spec.start, 0.0)
    goto(NavState.FOLLOWING, 0.0)
    planned_revision = occupancy.revision

    wpm = WaypointManager(waypoints, config.lookahead)
    memory = LocalMapMemory(grid_for_scene(spec.scene, seg.map_resolution), seg, spec.start,
                            config.seed_clear_radius)
    sim = SimState(spec.start, Twist(0.0, 0.0), 0.0)
    if config.pose_source == "truth":
        provider = GroundTruthPoseProvider(spec.start)
    else:
        provider = DeadReckoningPoseProvider(spec.start)

    percep_dt = 1.0 / (config.perception_rate or config.control_rate)
    next_percep = 0.0
    replan_dt = 1.0 / config.replan_rate
    next_replan = replan_dt
    pending: list[tuple[TraversabilityMap, Pose2D]] = []
    policy_tmap: TraversabilityMap | None = None
    blocked_since: float | None = None
    recovery_replanned = False
    outcome = None
    reason = ""

    for index in range(max_ticks):
        now = sim.time
        pose_est = provider.pose_at(now)
        render_s = segment_s = project_s = policy_s = 0.0

        if now + 1e-9 >= next_percep:
            t0 = _time.perf_counter()
            frame, _labels = render_depth(
                spec.scene, sim.robot_pose, cam, timestamp=now,
                noise_sigma=spec.depth_noise_sigma, dropout_rate=spec.dropout_rate, rng=rng,
            )
            render_s = _time.perf_counter() - t0
            t0 = _time.perf_counter()
            classes = segment(frame, cam, seg)
            segment_s = _time.perf_counter() - t0
            t0 = _time.perf_counter()
            ftmap = project_to_traversability(classes, frame, cam, seg)
            memory.update(ftmap, pose_est)
            policy_tmap = memory.snapshot(pose_est)
            project_s = _time.perf_counter() - t0
            pending.append((ftmap, pose_est))
            next_percep += percep_dt

        age = math.inf if policy_tmap is None else now - policy_tmap.timestamp
        target, goal_distance = wpm.update(pose_est)
        cmd = Twist(0.0, 0.0)
        score = None
        n_feasible = None

        if age <= config.stale_timeout:
            pin = PolicyInput(policy_tmap, sim.robot_twist, target, goal_distance)
            t0 = _time.perf_counter()
            try:
                out = policy(pin)
                policy_s = _time.perf_counter() - t0
                blocked_since = None
                recovery_replanned = False
                score, n_feasible = out.score, out.n_feasible
                if on_policy_tick is not None:
                    on_policy_tick(pin, out)
                if out.done:
                    outcome, reason = "Reached", "goal within tolerance"
                else:
                    cmd = out.cmd
            except AllBlocked:
                policy_s = _time.perf_counter() - t0
                if blocked_since is None:
                    blocked_since = now
                if now - blocked_since >= RECOVERY_BUDGET:
                    if recovery_replanned:
                        outcome, reason = "Failed", "still blocked after recovery and replan"
                        goto(NavState.FAILED, now)
                    else:
                        goto(NavState.PLANNING, now)
                        try:
                            wpm = WaypointManager(
                                _plan_waypoints(occupancy, robot, pose_est, spec.goal, config,
                                                relocate_start=True),
                                config.lookahead,
                            )
                            goto(NavState.FOLLOWING, now)
                            recovery_replanned = True
                            blocked_since = now
                            cmd = recovery(pin, robot).cmd
                        except PlanningError as exc:
                            outcome, reason = "Failed", f"replan failed: {exc}"
                            goto(NavState.FAILED, now)
                else:
                    cmd = recovery(pin, robot).cmd

        ticks.append(TickRecord(
            index, now, render_s, segment_s, project_s, policy_s,
            render_s + segment_s + project_s + policy_s,
            cmd.v, cmd.omega, age, state.value, score, n_feasible,
        ))
        trajectory.append((now, sim.robot_pose.x, sim.robot_pose.y, sim.robot_pose.theta,
                           sim.robot_twist.v, sim.robot_twist.omega, state.value))

        if outcome == "Reached":
            goto(NavState.REACHED, now)
            break
        if state is NavState.FAILED:
            break

        sim = step_sim(sim, cmd, dt, robot)
        if config.pose_source == "truth":
            provider.record(sim.time, sim.robot_pose)
        else:
            provider.record(sim.robot_twist, dt)
        if check_collision(spec.scene, sim.robot_pose, robot):
            outcome, reason = "Collision", "robot disc intersects an obstacle or the bounds"
            break

        if sim.time + 1e-9 >= next_replan:
            for tm, ps in pending:
                integrate(occupancy, tm, ps)
            pending.clear()
            if occupancy.revision != planned_revision:
                goto(NavState.PLANNING, sim.time)
                try:
                    wpm = WaypointManager(
                        _plan_waypoints(occupancy, robot, provider.pose_at(sim.time), spec.goal,
                                        config, relocate_start=True),
                        config.lookahead,
                    )
                except PlanningError as exc:
                    log.warning("periodic replan failed (%s); keeping previous route", exc)
                goto(NavState.FOLLOWING, sim.time)
                planned_revision = occupancy.revision
            next_replan += replan_dt

    if outcome is None:
        outcome, reason = "Timeout", f"no goal within {timeout} s of simulated time"

    trajectory.append((sim.time, sim.robot_pose.x, sim.robot_pose.y, sim.robot_pose.theta,
                       sim.robot_twist.v, sim.robot_twist.omega, state.value))
    return RunReport(outcome, reason, trajectory, ticks, transitions, list(wpm.waypoints),
                     sim.robot_pose, sim.time)


@dataclass
class BenchReport:
    n_ticks: int
    achieved_hz: float
    stage_stats: dict  # stage -> (mean_seconds, p95_seconds)

    def to_csv(self) -> str:
        lines = ["stage,mean_seconds,p95_seconds"]
        for stage, (mean_s, p95_s) in self.stage_stats.items():
            lines.append(f"{stage},{mean_s:.9f},{p95_s:.9f}")
        lines.append(f"achieved_hz,{self.achieved_hz:.3f},")
        return "\n".join(lines) + "\n"


def bench(config: PipelineConfig, n_ticks: int) -> BenchReport:
    """Run the perception -> policy chain flat-out on representative frames.

    Rendering is timed separately and excluded from the achieved rate: the
    rate under test is what a robot with a real sensor would sustain. The
    chain runs segmentation, traversability projection, and the rule
    policy on frames pre-rendered from several headings at the scenario
    start pose.
    """
    if n_ticks < 100:
        raise ConfigError("bench needs at least 100 ticks")
    spec = config.scenario
    if isinstance(spec, (str,)) or hasattr(spec, "__fspath__"):
        spec = load_scenario_file(spec)
    robot, cam, seg = spec.robot, spec.camera, spec.seg

    headings = 8
    frames = []
    render_times = []
    for i in range(headings):
        pose = Pose2D(spec.start.x, spec.start.y, spec.start.theta + i * 2.0 * math.pi / headings)
        t0 = _time.perf_counter()
        frame, _ = render_depth(spec.scene, pose, cam, timestamp=float(i))
        render_times.append(_time.perf_counter() - t0)
        frames.append(frame)

    dw = config.dw
    seg_times = np.zeros(n_ticks)
    proj_times = np.zeros(n_ticks)
    pol_times = np.zeros(n_ticks)
    cruising = Twist(robot.v_max, 0.0)
    wall0 = _time.perf_counter()
    for i in range(n_ticks):
        frame = frames[i % headings]
        t0 = _time.perf_counter()
        classes = segment(frame, cam, seg)
        t1 = _time.perf_counter()
        tmap = project_to_traversability(classes, frame, cam, seg)
        t2 = _time.perf_counter()
        pin = PolicyInput(tmap, cruising, (2.0, 0.0), 2.0)
        try:
            rule_policy(pin, dw, robot)
        except AllBlocked:
            recovery(pin, robot)
        t3 = _time.perf_counter()
        seg_times[i], proj_times[i], pol_times[i] = t1 - t0, t2 - t1, t3 - t2
    wall = _time.perf_counter() - wall0

    chain = seg_times + proj_times + pol_times

    def stats(arr):
        return float(np.mean(arr)), float(np.percentile(arr, 95))

    return BenchReport(
        n_ticks=n_ticks,
        achieved_hz=n_ticks / wall,
        stage_stats={
            "render": stats(np.array(render_times)),
            "segment": stats(seg_times),
            "project": stats(proj_times),
            "policy": stats(pol_times),
            "chain_total": stats(chain),
        },
    )


def ticks_to_csv(ticks: list[TickRecord]) -> str:
    lines = ["index,time,render_s,segment_s,project_s,policy_s,total_s,cmd_v,cmd_omega,"
             "perception_age,state,score,n_feasible"]
    for t in ticks:
        score = "" if t.score is None else f"{t.score:.6f}"
        nf = "" if t.n_feasible is None else str(t.n_feasible)
        lines.append(
            f"{t.index},{t.time:.6f},{t.render_s:.6f},{t.segment_s:.6f},{t.project_s:.6f},"
            f"{t.policy_s:.6f},{t.total_s:.6f},{t.cmd_v:.6f},{t.cmd_omega:.6f},"
            f"{t.perception_age:.6f},{t.state},{score},{nf}"
        )
    return "\n".join(lines) + "\n"


def trajectory_to_csv(trajectory: list[tuple]) -> str:
    lines = ["time,x,y,theta,v,omega,state"]
    for row in trajectory:
        t, x, y, th, v, w, state = row
        lines.append(f"{t:.6f},{x:.6f},{y:.6f},{th:.6f},{v:.6f},{w:.6f},{state}")
    return "\n".join(lines) + "\n"
