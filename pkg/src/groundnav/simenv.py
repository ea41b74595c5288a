"""2.5D analytic simulation world: depth rendering, robot motion, collision.

The world is a flat floor at z = 0 with axis-aligned box prisms and
vertical cylinders extruded from it. That is enough surface variety to
exercise every stage of the navigation stack while keeping ray
intersections closed-form: each rendered pixel is the nearest hit among
the ground plane, box faces, and cylinder walls/tops, computed vectorized
over the whole image.

Depth is the forward (optical-axis) component of the hit, not the ray
length — matching real depth cameras, and the two differ off-axis. Pixels
with no hit inside [min_depth, max_depth] are invalid and encoded as 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .core import CameraModel, Pose2D, RobotParams, Twist, unicycle_step
from .errors import ParseError, ValidationError
from .groundseg import DepthFrame, SegParams


class SurfaceLabel(IntEnum):
    NONE = 0
    GROUND = 1
    OBSTACLE = 2


@dataclass(frozen=True)
class Box:
    """Axis-aligned prism footprint [x_min, x_max] x [y_min, y_max], z in [0, height]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    height: float

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValidationError("box extents must be positive")
        if self.height <= 0:
            raise ValidationError("box height must be positive")


@dataclass(frozen=True)
class Cylinder:
    cx: float
    cy: float
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValidationError("cylinder radius and height must be positive")


@dataclass(frozen=True)
class Bounds:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValidationError("bounds extents must be positive")


@dataclass(frozen=True)
class Scene:
    bounds: Bounds
    boxes: tuple[Box, ...] = ()
    cylinders: tuple[Cylinder, ...] = ()


@dataclass(frozen=True)
class SimState:
    robot_pose: Pose2D
    robot_twist: Twist = Twist(0.0, 0.0)
    time: float = 0.0


@dataclass(frozen=True)
class LabelFrame:
    """Ground-truth companion to a rendered DepthFrame.

    classes holds SurfaceLabel per pixel (NONE exactly where depth is
    invalid). surface_height carries the full height of the hit obstacle
    (0 for ground) and point_height the z of the actual hit point — both
    exist so tests can score segmentation without re-deriving geometry.
    """

    width: int
    height: int
    classes: np.ndarray
    surface_height: np.ndarray
    point_height: np.ndarray


@lru_cache(maxsize=16)
def _ray_components(cam: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Robot-frame ray directions scaled so the camera-frame forward component is 1.

    Returns (dx[v], dy[u], dz[v]); with this scaling the ray parameter t at
    a hit IS the depth value. dz equals minus the ground-model denominator,
    which is what keeps renderer and segmenter numerically identical on
    floor pixels.
    """
    xc = (np.arange(cam.width) - cam.cx) / cam.fx
    yc = (np.arange(cam.height) - cam.cy) / cam.fy
    sp, cp = math.sin(cam.pitch), math.cos(cam.pitch)
    dx = cp - yc * sp
    dy = -xc
    dz = -(sp + yc * cp)
    return dx, dy, dz


def _slab(o, d, lo, hi, t_min, t_max):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    near, far = np.minimum(t1, t2), np.maximum(t1, t2)
    parallel = np.abs(d) < 1e-12
    if np.any(parallel):
        inside = (o >= lo) & (o <= hi)
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
    return np.maximum(t_min, near), np.minimum(t_max, far)


def render_depth(
    scene: Scene,
    robot_pose: Pose2D,
    cam: CameraModel,
    *,
    timestamp: float = 0.0,
    noise_sigma: float = 0.0,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[DepthFrame, LabelFrame]:
    """Render one depth frame plus ground-truth labels from the mounted camera.

    The camera sits at the robot origin, mount_height above the floor,
    pitched down by cam.pitch. Optional zero-mean Gaussian depth noise and
    pixel dropout support robustness tests; both default off and the
    noise-free render is bit-deterministic.
    """
    dx_r, dy_r, dz_r = _ray_components(cam)
    c, s = math.cos(robot_pose.theta), math.sin(robot_pose.theta)
    dx = c * dx_r[:, None] - s * dy_r[None, :]
    dy = s * dx_r[:, None] + c * dy_r[None, :]
    dz = np.broadcast_to(dz_r[:, None], dx.shape)
    ox, oy, oz = robot_pose.x, robot_pose.y, cam.mount_height

    # Candidate hits per surface; +inf where a surface is missed.
    ts = []
    labels = [SurfaceLabel.GROUND]
    heights = [0.0]

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dz_r < 0, -oz / dz_r, np.inf)[:, None]
    ts.append(np.broadcast_to(t_ground, dx.shape))

    for box in scene.boxes:
        t_min = np.full(dx.shape, -np.inf)
        t_max = np.full(dx.shape, np.inf)
        t_min, t_max = _slab(ox, dx, box.x_min, box.x_max, t_min, t_max)
        t_min, t_max = _slab(oy, dy, box.y_min, box.y_max, t_min, t_max)
        t_min, t_max = _slab(oz, dz, 0.0, box.height, t_min, t_max)
        hit = (t_min <= t_max) & (t_min > 0)
        ts.append(np.where(hit, t_min, np.inf))
        labels.append(SurfaceLabel.OBSTACLE)
        heights.append(box.height)

    for cyl in scene.cylinders:
        ex, ey = ox - cyl.cx, oy - cyl.cy
        a = dx * dx + dy * dy
        b = 2.0 * (ex * dx + ey * dy)
        c0 = ex * ex + ey * ey - cyl.radius * cyl.radius
        disc = b * b - 4.0 * a * c0
        sq = np.sqrt(np.maximum(disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t_wall = (-b - sq) / (2.0 * a)
        z_hit = oz + t_wall * dz
        wall_ok = (disc >= 0) & (a > 1e-12) & (t_wall > 0) & (z_hit >= 0) & (z_hit <= cyl.height)
        t_wall = np.where(wall_ok, t_wall, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_top = np.where(np.abs(dz) > 1e-12, (cyl.height - oz) / dz, np.inf)
        px = ox + t_top * dx - cyl.cx
        py = oy + t_top * dy - cyl.cy
        top_ok = (t_top > 0) & (px * px + py * py <= cyl.radius * cyl.radius)
        t_top = np.where(top_ok, t_top, np.inf)
        ts.append(np.minimum(t_wall, t_top))
        labels.append(SurfaceLabel.OBSTACLE)
        heights.append(cyl.height)

    stack = np.stack(ts)
    stack[(stack < cam.min_depth) | (stack > cam.max_depth)] = np.inf
    nearest = np.argmin(stack, axis=0)
    depth = np.take_along_axis(stack, nearest[None], axis=0)[0]
    valid = np.isfinite(depth)

    label_lut = np.array([int(l) for l in labels], dtype=np.uint8)
    height_lut = np.array(heights)
    classes = np.where(valid, label_lut[nearest], SurfaceLabel.NONE).astype(np.uint8)
    surface_height = np.where(valid, height_lut[nearest], 0.0)
    depth = np.where(valid, depth, 0.0)
    point_height = np.where(valid, oz + depth * dz, 0.0)

    if noise_sigma > 0.0 or dropout_rate > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        if noise_sigma > 0.0:
            noisy = depth + rng.normal(0.0, noise_sigma, size=depth.shape)
            depth = np.where(valid, np.clip(noisy, cam.min_depth, cam.max_depth), 0.0)
        if dropout_rate > 0.0:
            dropped = valid & (rng.random(depth.shape) < dropout_rate)
            depth[dropped] = 0.0
            classes[dropped] = SurfaceLabel.NONE
            surface_height[dropped] = 0.0
            point_height[dropped] = 0.0

    return (
        DepthFrame(cam.width, cam.height, depth, timestamp),
        LabelFrame(cam.width, cam.height, classes, surface_height, point_height),
    )


def step_sim(state: SimState, cmd: Twist, dt: float, params: RobotParams) -> SimState:
    """Advance the robot: clamp the command to velocity/acceleration limits, integrate."""
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    v = min(max(cmd.v, -params.v_max), params.v_max)
    w = min(max(cmd.omega, -params.omega_max), params.omega_max)
    dv, dw = params.a_max * dt, params.alpha_max * dt
    v = min(max(v, state.robot_twist.v - dv), state.robot_twist.v + dv)
    w = min(max(w, state.robot_twist.omega - dw), state.robot_twist.omega + dw)
    applied = Twist(v, w)
    return SimState(unicycle_step(state.robot_pose, applied, dt), applied, state.time + dt)


def check_collision(scene: Scene, pose: Pose2D, params: RobotParams) -> bool:
    """True iff the robot disc overlaps an obstacle footprint or leaves the bounds.

    Every extruded obstacle is solid regardless of its height — the 2.5D
    world has nothing to drive under. Tangency (distance exactly equal to
    the radius) does not count: the intersection test is open.
    """
    r = params.radius
    b = scene.bounds
    if pose.x - r < b.x_min or pose.x + r > b.x_max:
        return True
    if pose.y - r < b.y_min or pose.y + r > b.y_max:
        return True
    for box in scene.boxes:
        dx = max(box.x_min - pose.x, 0.0, pose.x - box.x_max)
        dy = max(box.y_min - pose.y, 0.0, pose.y - box.y_max)
        if math.hypot(dx, dy) < r:
            return True
    for cyl in scene.cylinders:
        if math.hypot(pose.x - cyl.cx, pose.y - cyl.cy) < r + cyl.radius:
            return True
    return False


@dataclass(frozen=True)
class ScenarioSpec:
    """Fully populated simulation setup parsed from a scenario file."""

    scene: Scene
    start: Pose2D
    goal: tuple[float, float]
    camera: CameraModel
    robot: RobotParams
    seg: SegParams
    seed: int = 0
    timeout: float = 60.0
    depth_noise_sigma: float = 0.0
    dropout_rate: float = 0.0
    text: str = field(default="", repr=False, compare=False)


_SCALAR_KEYS = {
    "bounds": 4, "start": 3, "goal": 2, "seed": 1, "timeout": 1,
    "cam_width": 1, "cam_height": 1, "cam_fx": 1, "cam_fy": 1, "cam_cx": 1, "cam_cy": 1,
    "cam_mount_height": 1, "cam_pitch": 1, "cam_min_depth": 1, "cam_max_depth": 1,
    "radius": 1, "clearance_height": 1, "v_max": 1, "omega_max": 1, "a_max": 1, "alpha_max": 1,
    "tau_ground": 1, "tau_obstacle": 1, "column_stride": 1, "row_stride": 1,
    "min_obstacle_hits": 1, "map_range": 1, "map_resolution": 1,
    "depth_noise_sigma": 1, "dropout_rate": 1,
}
_REPEATED_KEYS = {"box": 5, "cylinder": 4}
_INT_KEYS = {"cam_width", "cam_height", "column_stride", "row_stride", "min_obstacle_hits", "seed"}


def load_scenario(text: str) -> ScenarioSpec:
    """Parse a scenario file (line-oriented `key = value` pairs, `#` comments).

    Scalar keys may appear at most once; `box` and `cylinder` repeat.
    Raises ParseError with the offending line number for malformed input
    and ValidationError when values break type invariants.
    """
    seen: dict[str, list[float]] = {}
    boxes: list[Box] = []
    cylinders: list[Cylinder] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
        key, _, rest = line.partition("=")
        key = key.strip()
        parts = rest.split()
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", line=lineno) from None
        if key in _REPEATED_KEYS:
            if len(values) != _REPEATED_KEYS[key]:
                raise ParseError(f"{key} wants {_REPEATED_KEYS[key]} numbers", line=lineno)
            if key == "box":
                boxes.append(Box(*values))
            else:
                cylinders.append(Cylinder(*values))
            continue
        if key not in _SCALAR_KEYS:
            raise ParseError(f"unknown key {key!r}", line=lineno)
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        if len(values) != _SCALAR_KEYS[key]:
            raise ParseError(f"{key} wants {_SCALAR_KEYS[key]} number(s)", line=lineno)
        seen[key] = values

    def scalar(key, default):
        if key not in seen:
            return default
        value = seen[key][0]
        return int(value) if key in _INT_KEYS else value

    if "goal" not in seen:
        raise ValidationError("scenario must define a goal")
    goal = (seen["goal"][0], seen["goal"][1])
    bounds = Bounds(*seen.get("bounds", [-1.0, 6.0, -3.0, 3.0]))
    sx, sy, sth = seen.get("start", [0.0, 0.0, 0.0])
    start = Pose2D(sx, sy, sth)

    camera = CameraModel(
        fx=scalar("cam_fx", 220.0),
        fy=scalar("cam_fy", 220.0),
        cx=scalar("cam_cx", 212.0),
        cy=scalar("cam_cy", 120.0),
        width=scalar("cam_width", 424),
        height=scalar("cam_height", 240),
        mount_height=scalar("cam_mount_height", 0.30),
        pitch=scalar("cam_pitch", 0.35),
        min_depth=scalar("cam_min_depth", 0.28),
        max_depth=scalar("cam_max_depth", 5.0),
    )
    robot = RobotParams(
        radius=scalar("radius", 0.15),
        clearance_height=scalar("clearance_height", 0.30),
        v_max=scalar("v_max", 0.5),
        omega_max=scalar("omega_max", 1.5),
        a_max=scalar("a_max", 1.0),
        alpha_max=scalar("alpha_max", 3.0),
    )
    seg = SegParams(
        tau_ground=scalar("tau_ground", 0.01),
        tau_obstacle=scalar("tau_obstacle", 0.08),
        clearance_height=scalar("clearance_height", robot.clearance_height),
        column_stride=scalar("column_stride", 2),
        row_stride=scalar("row_stride", 2),
        min_obstacle_hits=scalar("min_obstacle_hits", 2),
        map_range=scalar("map_range", 4.0),
        map_resolution=scalar("map_resolution", 0.05),
    )

    if not (bounds.x_min <= start.x <= bounds.x_max and bounds.y_min <= start.y <= bounds.y_max):
        raise ValidationError("start pose outside scene bounds")
    if not (bounds.x_min <= goal[0] <= bounds.x_max and bounds.y_min <= goal[1] <= bounds.y_max):
        raise ValidationError("goal outside scene bounds")
    noise = scalar("depth_noise_sigma", 0.0)
    dropout = scalar("dropout_rate", 0.0)
    if noise < 0 or not (0.0 <= dropout <= 1.0):
        raise ValidationError("bad noise parameters")
    timeout = scalar("timeout", 60.0)
    if timeout < 0:
        raise ValidationError("timeout must be non-negative")

    return ScenarioSpec(
        scene=Scene(bounds, tuple(boxes), tuple(cylinders)),
        start=start,
        goal=goal,
        camera=camera,
        robot=robot,
        seg=seg,
        seed=scalar("seed", 0),
        timeout=timeout,
        depth_noise_sigma=noise,
        dropout_rate=dropout,
        text=text,
    )


def load_scenario_file(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


def segmentation_agreement(pred, labels: LabelFrame, seg: SegParams) -> tuple[int, int]:
    """(correct, total) over the sampled pixel lattice, scored against truth.

    A sampled pixel counts as correct when:
    - the truth label is NONE and the prediction is UNKNOWN, or
    - the truth label is GROUND and the prediction is GROUND, or
    - the truth label is OBSTACLE and the prediction is OBSTACLE, or the
      prediction is OVERHEAD and the true hit point sits above the
      clearance height (ignoring such returns is correct behavior for a
      low-body robot).
    """
    from .groundseg import PixelClass

    rs, cs = seg.row_stride, seg.column_stride
    p = pred.classes[::rs, ::cs]
    t = labels.classes[::rs, ::cs]
    zpt = labels.point_height[::rs, ::cs]
    correct = (
        ((t == SurfaceLabel.NONE) & (p == PixelClass.UNKNOWN))
        | ((t == SurfaceLabel.GROUND) & (p == PixelClass.GROUND))
        | ((t == SurfaceLabel.OBSTACLE) & (p == PixelClass.OBSTACLE))
        | ((t == SurfaceLabel.OBSTACLE) & (p == PixelClass.OVERHEAD) & (zpt > seg.clearance_height))
    )
    return int(np.count_nonzero(correct)), int(p.size)


def label_edge_mask(labels: LabelFrame) -> np.ndarray:
    """Pixels within 1 pixel (8-neighborhood) of a truth-label class change."""
    cls = labels.classes
    edge = np.zeros(cls.shape, dtype=bool)
    edge[:-1, :] |= cls[:-1, :] != cls[1:, :]
    edge[1:, :] |= cls[1:, :] != cls[:-1, :]
    edge[:, :-1] |= cls[:, :-1] != cls[:, 1:]
    edge[:, 1:] |= cls[:, 1:] != cls[:, :-1]
    edge[:-1, :-1] |= cls[:-1, :-1] != cls[1:, 1:]
    edge[1:, 1:] |= cls[1:, 1:] != cls[:-1, :-1]
    edge[:-1, 1:] |= cls[:-1, 1:] != cls[1:, :-1]
    edge[1:, :-1] |= cls[1:, :-1] != cls[:-1, 1:]
    return edge
