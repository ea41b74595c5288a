"""Shared geometry: SE(2) poses, camera model, grid indexing, unicycle kinematics.

Everything here is a pure function on immutable values; all other modules
build on these primitives. Conventions used throughout the stack:

- headings normalized to (-pi, pi]
- grids indexed [row, col], cell (0, 0) at the origin corner,
  lower-inclusive / upper-exclusive bins
- the robot frame has x forward, y left, z up
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import OutOfBoundsError, ValidationError

TWO_PI = 2.0 * math.pi

# Below this |omega| the constant-twist arc degenerates to a straight line;
# the closed form would divide by omega and cancel catastrophically.
OMEGA_EPS = 1e-6


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = math.remainder(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    return t


@dataclass(frozen=True)
class Pose2D:
    """Planar rigid-body pose. theta is re-normalized on construction."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValidationError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class Twist:
    """Velocity command: linear v (m/s) and angular omega (rad/s)."""

    v: float
    omega: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise ValidationError(f"non-finite twist ({self.v}, {self.omega})")


@dataclass(frozen=True)
class RobotParams:
    """Differential-drive platform limits and collision geometry."""

    radius: float = 0.15
    clearance_height: float = 0.30
    v_max: float = 0.5
    omega_max: float = 1.5
    a_max: float = 1.0
    alpha_max: float = 3.0

    def __post_init__(self):
        for name in ("radius", "clearance_height", "v_max", "omega_max", "a_max", "alpha_max"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"RobotParams.{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole depth camera rigidly mounted above the robot origin.

    The optical center sits mount_height above the floor and the optical
    axis is pitched down by `pitch` radians (0 = level). min_depth and
    max_depth bound the sensor's valid range window.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    mount_height: float
    pitch: float = 0.0
    min_depth: float = 0.28
    max_depth: float = 5.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")
        if not (0 < self.min_depth < self.max_depth):
            raise ValidationError("need 0 < min_depth < max_depth")
        if self.mount_height <= 0:
            raise ValidationError("mount_height must be positive")
        if abs(self.pitch) >= math.pi / 2:
            raise ValidationError("|pitch| must be below pi/2")


@dataclass(frozen=True)
class GridGeometry:
    """Placement of a 2D grid in its parent frame.

    `origin` is the pose of the corner of cell (0, 0); cell indices are
    (col, row) with col along the grid x-axis.
    """

    resolution: float
    origin: Pose2D
    cols: int
    rows: int

    def __post_init__(self):
        if not (math.isfinite(self.resolution) and self.resolution > 0):
            raise ValidationError("resolution must be positive")
        if self.cols < 1 or self.rows < 1:
            raise ValidationError("grid must have at least one cell per axis")


def se2_compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Rigid-body composition a∘b (apply b in a's frame)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def se2_inverse(p: Pose2D) -> Pose2D:
    """Inverse pose: se2_compose(p, se2_inverse(p)) is the identity."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2D(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.theta)


def transform_point(p: Pose2D, x: float, y: float) -> tuple[float, float]:
    """Map a point from p's local frame into the parent frame."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return p.x + c * x - s * y, p.y + s * x + c * y


def world_to_grid(g: GridGeometry, x: float, y: float):
    """Cell (col, row) containing world point (x, y), or None when off-grid."""
    c, s = math.cos(g.origin.theta), math.sin(g.origin.theta)
    dx, dy = x - g.origin.x, y - g.origin.y
    gx = c * dx + s * dy
    gy = -s * dx + c * dy
    col = math.floor(gx / g.resolution)
    row = math.floor(gy / g.resolution)
    if 0 <= col < g.cols and 0 <= row < g.rows:
        return col, row
    return None


def grid_to_world(g: GridGeometry, col: int, row: int) -> tuple[float, float]:
    """World coordinates of a cell's center. Raises OutOfBoundsError off-grid."""
    if not (0 <= col < g.cols and 0 <= row < g.rows):
        raise OutOfBoundsError(f"cell ({col}, {row}) outside {g.cols}x{g.rows} grid")
    return transform_point(g.origin, (col + 0.5) * g.resolution, (row + 0.5) * g.resolution)


def unicycle_step(p: Pose2D, u: Twist, dt: float) -> Pose2D:
    """Advance a pose by holding the twist constant for dt seconds.

    Uses the exact constant-twist arc, not an Euler step, so rollout and
    simulation poses carry no integration error. Near omega = 0 the arc
    closed form is replaced by its straight-line limit.
    """
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    th0 = p.theta
    th1 = th0 + u.omega * dt
    if abs(u.omega) > OMEGA_EPS:
        r = u.v / u.omega
        x = p.x + r * (math.sin(th1) - math.sin(th0))
        y = p.y - r * (math.cos(th1) - math.cos(th0))
    else:
        x = p.x + u.v * dt * math.cos(th0)
        y = p.y + u.v * dt * math.sin(th0)
    return Pose2D(x, y, th1)
