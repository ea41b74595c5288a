"""Rule-based local motion policy: dynamic-window arc search on the traversability map.

Candidate (v, omega) commands come from a lattice over the dynamic window
(velocities reachable within one rollout step under the acceleration
limits). Each candidate is rolled out along its exact constant-twist arc
for the scoring horizon; candidates whose swept disc touches an OBSTACLE
cell — or an UNKNOWN cell beyond a small grace radius around the robot —
are discarded. Survivors are scored on end-of-arc heading alignment,
obstacle clearance, and speed, and the best score wins.

UNKNOWN cells block because an unseen cell may hide anything; the grace
radius exists because the camera cannot see the floor directly under the
robot, so the cells it currently occupies are often unobserved even though
the robot is standing on them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .core import OMEGA_EPS, Pose2D, RobotParams, Twist, wrap_angle
from .errors import AllBlocked, ValidationError
from .groundseg import CellState, TraversabilityMap


@dataclass(frozen=True)
class PolicyInput:
    """Snapshot a policy consumes each control tick.

    target is the active waypoint in the robot frame as (distance,
    bearing); goal_distance is the Euclidean distance to the final goal.
    """

    tmap: TraversabilityMap
    twist: Twist
    target: tuple[float, float]
    goal_distance: float

    def __post_init__(self):
        dist, bearing = self.target
        if dist < 0 or self.goal_distance < 0:
            raise ValidationError("distances must be non-negative")
        if not -math.pi < bearing <= math.pi:
            raise ValidationError(f"bearing {bearing} outside (-pi, pi]")


@dataclass(frozen=True)
class PolicyOutput:
    cmd: Twist
    done: bool = False
    score: float | None = None
    n_feasible: int | None = None

    def __post_init__(self):
        if self.done and (self.cmd.v != 0.0 or self.cmd.omega != 0.0):
            raise ValidationError("done implies a zero command")


@dataclass(frozen=True)
class DWParams:
    """Dynamic-window policy parameters.

    The acceleration window spans one rollout step (dt). Score weights
    must sum to 1: alpha rewards finishing the arc pointed at the target,
    beta rewards clearance (capped at 1 m — beyond that differences are
    noise), gamma rewards speed.
    """

    n_v: int = 5
    n_omega: int = 21
    horizon: float = 1.5
    dt: float = 0.1
    alpha: float = 0.6
    beta: float = 0.25
    gamma: float = 0.15
    goal_tolerance: float = 0.15
    safety_margin: float = 0.05
    unknown_grace: float = 0.25

    def __post_init__(self):
        if self.n_v < 1 or self.n_omega < 1:
            raise ValidationError("candidate lattice needs at least one entry per axis")
        if self.horizon <= 0 or self.dt <= 0 or self.horizon < self.dt:
            raise ValidationError("need horizon >= dt > 0")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValidationError("score weights must be non-negative")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ValidationError("score weights must sum to 1")
        if self.goal_tolerance <= 0 or self.safety_margin < 0 or self.unknown_grace < 0:
            raise ValidationError("bad tolerance/margin values")


def window_lattice(params: DWParams, robot: RobotParams, current: Twist):
    """Candidate (v, omega) lattice over the one-step dynamic window.

    Linear velocity is forward-only (the camera cannot see behind the
    robot). Candidate index iv * n_omega + iw orders the lattice; the
    tie-break rules refer to this ordering.
    """
    dv = robot.a_max * params.dt
    dw = robot.alpha_max * params.dt
    v0 = min(max(current.v, 0.0), robot.v_max)
    w0 = min(max(current.omega, -robot.omega_max), robot.omega_max)
    v_lo, v_hi = max(0.0, v0 - dv), min(robot.v_max, v0 + dv)
    w_lo, w_hi = max(-robot.omega_max, w0 - dw), min(robot.omega_max, w0 + dw)
    vs = np.linspace(v_lo, v_hi, params.n_v)
    ws = np.linspace(w_lo, w_hi, params.n_omega)
    return np.repeat(vs, params.n_omega), np.tile(ws, params.n_v)


def rollout_arc(v: np.ndarray, w: np.ndarray, n_steps: int, dt: float):
    """Closed-form constant-twist arcs from the origin: (x, y, theta) each of shape (C, N)."""
    k = np.arange(1, n_steps + 1) * dt
    th = w[:, None] * k[None, :]
    straight = np.abs(w) <= OMEGA_EPS
    r = np.divide(v, w, out=np.zeros_like(v), where=~straight)
    x = np.where(straight[:, None], v[:, None] * k[None, :], r[:, None] * np.sin(th))
    y = np.where(straight[:, None], 0.0, r[:, None] * (1.0 - np.cos(th)))
    return x, y, th


@lru_cache(maxsize=32)
def _cell_centers(geometry) -> tuple[np.ndarray, np.ndarray]:
    xs = geometry.origin.x + (np.arange(geometry.cols) + 0.5) * geometry.resolution
    ys = geometry.origin.y + (np.arange(geometry.rows) + 0.5) * geometry.resolution
    return xs, ys


@lru_cache(maxsize=32)
def _disc_struct(disc_radius: float, resolution: float) -> np.ndarray:
    """Integer cell offsets (di, dj) with (di² + dj²)·res² ≤ disc_radius²."""
    m = int(math.floor(disc_radius / resolution))
    di, dj = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    return (di * di + dj * dj).astype(np.float64) * resolution * resolution <= disc_radius * disc_radius


def blocked_cells(tmap: TraversabilityMap, grace: float) -> np.ndarray:
    """Cells a rollout may not sweep: obstacles, plus unknown space beyond grace.

    Grace is measured from the robot origin to cell centers; it covers the
    near-field ring the camera cannot observe.
    """
    xs, ys = _cell_centers(tmap.geometry)
    far = xs[None, :] ** 2 + ys[:, None] ** 2 > grace * grace
    return (tmap.cells == CellState.OBSTACLE) | ((tmap.cells == CellState.UNKNOWN) & far)


def _swept_blocked(tmap, x, y, disc_radius, grace):
    """Per-candidate feasibility: does any rollout pose's disc sweep a blocked cell?

    Poses are quantized to their containing cell; a pose is in collision
    when a blocked cell center lies within disc_radius of that cell's
    center (the sub-cell quantization is what safety_margin absorbs).
    Cells outside the map count as UNKNOWN, so out-of-map space blocks
    beyond the grace radius. All comparisons are exact integer-lattice
    arithmetic, reproducible by a brute-force oracle.
    """
    g = tmap.geometry
    res = g.resolution
    struct = _disc_struct(disc_radius, res)
    m = struct.shape[0] // 2

    xs, ys = _cell_centers(g)
    ext_x = np.concatenate([xs[0] + np.arange(-m, 0) * res, xs, xs[-1] + np.arange(1, m + 1) * res])
    ext_y = np.concatenate([ys[0] + np.arange(-m, 0) * res, ys, ys[-1] + np.arange(1, m + 1) * res])
    far_ext = ext_x[None, :] ** 2 + ext_y[:, None] ** 2 > grace * grace
    ext = far_ext.copy()  # out-of-map pad: UNKNOWN semantics
    inner = ext[m:m + g.rows, m:m + g.cols]
    inner[:] = (tmap.cells == CellState.OBSTACLE) | ((tmap.cells == CellState.UNKNOWN) & far_ext[m:m + g.rows, m:m + g.cols])
    swept = ndimage.binary_dilation(ext, structure=struct)

    pc = np.floor((x - g.origin.x) / res).astype(np.int64) + m
    pr = np.floor((y - g.origin.y) / res).astype(np.int64) + m
    inside = (pc >= 0) & (pc < swept.shape[1]) & (pr >= 0) & (pr < swept.shape[0])
    hit = np.ones(x.shape, dtype=bool)
    hit[inside] = swept[pr[inside], pc[inside]]
    if not inside.all():
        # so far off-map that the whole disc lies in unknown space: blocked
        # unless every disc cell center sits inside the grace radius
        oi, oj = np.nonzero(struct)
        oi, oj = oi - m, oj - m
        ccx = g.origin.x + ((pc[~inside] - m)[:, None] + oj[None, :] + 0.5) * res
        ccy = g.origin.y + ((pr[~inside] - m)[:, None] + oi[None, :] + 0.5) * res
        hit[~inside] = np.any(ccx * ccx + ccy * ccy > grace * grace, axis=1)
    return np.any(hit, axis=tuple(range(1, hit.ndim)))


def _obstacle_distance_cells(tmap: TraversabilityMap) -> np.ndarray | None:
    """Exact per-cell distance (cell units) to the nearest OBSTACLE cell center."""
    obstacle = tmap.cells == CellState.OBSTACLE
    if not obstacle.any():
        return None
    # feature transform keeps the squared distance an exact integer
    idx = ndimage.distance_transform_edt(~obstacle, return_distances=False, return_indices=True)
    rr, cc = np.indices(obstacle.shape)
    d2 = (idx[0] - rr) ** 2 + (idx[1] - cc) ** 2
    return np.sqrt(d2.astype(np.float64))


def rule_policy(pin: PolicyInput, params: DWParams, robot: RobotParams) -> PolicyOutput:
    """Pick the best feasible dynamic-window command for this tick.

    Scores combine heading (1 - |end-of-arc bearing error| / pi),
    clearance (min over rollout poses of the distance from the pose's
    cell center to the nearest obstacle cell center, minus the disc
    radius; capped at 1 m), and speed (v / v_max), weighted by
    alpha/beta/gamma. Ties break toward smaller |omega|, then smaller
    candidate index. Raises AllBlocked when nothing is feasible.
    """
    if pin.goal_distance < params.goal_tolerance:
        return PolicyOutput(Twist(0.0, 0.0), done=True)

    vs, ws = window_lattice(params, robot, pin.twist)
    n_steps = int(round(params.horizon / params.dt))
    x, y, th = rollout_arc(vs, ws, n_steps, params.dt)

    disc_radius = robot.radius + params.safety_margin
    infeasible = _swept_blocked(pin.tmap, x, y, disc_radius, params.unknown_grace)
    if infeasible.all():
        raise AllBlocked("every dynamic-window candidate sweeps a blocked cell")

    dist_cells = _obstacle_distance_cells(pin.tmap)
    if dist_cells is None:
        clear_term = np.ones_like(vs)
    else:
        g = pin.tmap.geometry
        pc = np.clip(np.floor((x - g.origin.x) / g.resolution).astype(np.int64), 0, g.cols - 1)
        pr = np.clip(np.floor((y - g.origin.y) / g.resolution).astype(np.int64), 0, g.rows - 1)
        clearance = np.min(dist_cells[pr, pc], axis=1) * g.resolution - disc_radius
        clear_term = np.minimum(np.maximum(clearance, 0.0), 1.0)

    t_dist, t_bearing = pin.target
    tx, ty = t_dist * math.cos(t_bearing), t_dist * math.sin(t_bearing)
    err = np.arctan2(ty - y[:, -1], tx - x[:, -1]) - th[:, -1]
    err = np.abs(np.remainder(err + math.pi, 2.0 * math.pi) - math.pi)
    score = params.alpha * (1.0 - err / math.pi) + params.beta * clear_term + params.gamma * (vs / robot.v_max)

    best = -1
    for i in range(len(vs)):
        if infeasible[i]:
            continue
        if best < 0 or score[i] > score[best] or (score[i] == score[best] and abs(ws[i]) < abs(ws[best])):
            best = i
    return PolicyOutput(
        Twist(float(vs[best]), float(ws[best])),
        done=False,
        score=float(score[best]),
        n_feasible=int(np.count_nonzero(~infeasible)),
    )


def recovery(pin: PolicyInput, robot: RobotParams) -> PolicyOutput:
    """Rotate in place toward the side of the map with more traversable cells.

    Called after AllBlocked. With no free cells at all (fully unknown
    map), rotate toward the target's bearing instead; exact left/right
    ties resolve to positive omega. Never reports done.
    """
    g = pin.tmap.geometry
    ys = g.origin.y + (np.arange(g.rows) + 0.5) * g.resolution
    free = pin.tmap.cells == CellState.TRAVERSABLE
    left = int(np.count_nonzero(free & (ys[:, None] > 0)))
    right = int(np.count_nonzero(free & (ys[:, None] < 0)))
    if left == 0 and right == 0:
        sign = 1.0 if pin.target[1] >= 0 else -1.0
    else:
        sign = 1.0 if left >= right else -1.0
    return PolicyOutput(Twist(0.0, sign * 0.5 * robot.omega_max))


class WaypointManager:
    """Feeds the policy one waypoint at a time along the global route.

    The active waypoint advances once the robot comes within the
    lookahead distance of it (the final waypoint never advances away).
    """

    def __init__(self, waypoints: list[tuple[float, float]], lookahead: float = 0.6):
        if not waypoints:
            raise ValidationError("waypoint list must be non-empty")
        if lookahead <= 0:
            raise ValidationError("lookahead must be positive")
        self.waypoints = list(waypoints)
        self.lookahead = lookahead
        self.index = 0

    def update(self, pose: Pose2D) -> tuple[tuple[float, float], float]:
        """Return ((distance, bearing) of the active waypoint in the robot frame,
        Euclidean distance to the final waypoint)."""
        while (
            self.index < len(self.waypoints) - 1
            and math.hypot(self.waypoints[self.index][0] - pose.x, self.waypoints[self.index][1] - pose.y)
            < self.lookahead
        ):
            self.index += 1
        wx, wy = self.waypoints[self.index]
        dx, dy = wx - pose.x, wy - pose.y
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        lx, ly = c * dx + s * dy, -s * dx + c * dy
        target = (math.hypot(lx, ly), wrap_angle(math.atan2(ly, lx)))
        gx, gy = self.waypoints[-1]
        return target, math.hypot(gx - pose.x, gy - pose.y)
