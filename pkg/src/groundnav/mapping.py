"""World-frame occupancy maintenance: log-odds fusion, map files, pose providers.

Log-odds are stored internally as integer hundredths (+85 per obstacle
observation, -41 per traversable one, clamped to +/-1000). Integer
accumulation makes evidence fusion exactly order-independent and the
+/-0.85 classification thresholds exact, neither of which float addition
can promise.

The stack has no SLAM: a PoseProvider fills the seam SLAM would occupy,
backed by simulator ground truth or dead-reckoned odometry.
"""
from __future__ import annotations

import math
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .core import GridGeometry, Pose2D, Twist, unicycle_step
from .errors import ParseError, ValidationError
from .groundseg import CellState, TraversabilityMap
from .pgmio import decode_pgm, encode_pgm
from .simenv import Scene

LOGODDS_OBSTACLE = 0.85
LOGODDS_TRAVERSABLE = -0.41
LOGODDS_CLAMP = 10.0
OCC_THRESHOLD = 0.85
FREE_THRESHOLD = -0.85

_SCALE = 100  # internal integer units per log-odds unit


class OccClass(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


_PGM_VALUES = {OccClass.OCCUPIED: 0, OccClass.FREE: 254, OccClass.UNKNOWN: 205}
_PGM_TO_CLASS = {0: OccClass.OCCUPIED, 254: OccClass.FREE, 205: OccClass.UNKNOWN}


@dataclass
class OccupancyGrid:
    """World-frame log-odds grid. Mutated only through integrate()/set_logodds."""

    geometry: GridGeometry
    _centi: np.ndarray = field(default=None)  # int32 hundredths of log-odds
    revision: int = 0  # bumps whenever any cell's ternary class changes

    def __post_init__(self):
        if self._centi is None:
            self._centi = np.zeros((self.geometry.rows, self.geometry.cols), dtype=np.int32)
        elif self._centi.shape != (self.geometry.rows, self.geometry.cols):
            raise ValidationError("log-odds array does not match grid geometry")

    @property
    def logodds(self) -> np.ndarray:
        return self._centi * (1.0 / _SCALE)

    def classes(self) -> np.ndarray:
        """Ternary classification: > +0.85 OCCUPIED, < -0.85 FREE, else UNKNOWN."""
        out = np.full(self._centi.shape, OccClass.UNKNOWN, dtype=np.uint8)
        out[self._centi > int(OCC_THRESHOLD * _SCALE)] = OccClass.OCCUPIED
        out[self._centi < int(FREE_THRESHOLD * _SCALE)] = OccClass.FREE
        return out

    def set_logodds(self, row: int, col: int, value: float) -> None:
        value = min(max(value, -LOGODDS_CLAMP), LOGODDS_CLAMP)
        self._centi[row, col] = int(round(value * _SCALE))
        self.revision += 1

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.geometry, self._centi.copy(), self.revision)


def grid_for_scene(scene: Scene, resolution: float) -> OccupancyGrid:
    """Empty (all-unknown) grid covering the scene bounds."""
    b = scene.bounds
    cols = max(1, math.ceil((b.x_max - b.x_min) / resolution))
    rows = max(1, math.ceil((b.y_max - b.y_min) / resolution))
    geom = GridGeometry(resolution, Pose2D(b.x_min, b.y_min, 0.0), cols, rows)
    return OccupancyGrid(geom)


def rasterize_scene(scene: Scene, resolution: float) -> OccupancyGrid:
    """Ground-truth occupancy of a scene: the stand-in for a SLAM-built prior map.

    Cells overlapping any obstacle footprint saturate OCCUPIED, everything
    else saturates FREE; the outermost ring is marked OCCUPIED so inflation
    keeps planned paths clear of the scene boundary. Rasterization is
    conservative: a cell counts as occupied if the footprint touches any
    part of it, not just its center.
    """
    grid = grid_for_scene(scene, resolution)
    geom = grid.geometry
    xs = geom.origin.x + (np.arange(geom.cols) + 0.5) * resolution
    ys = geom.origin.y + (np.arange(geom.rows) + 0.5) * resolution
    cx, cy = np.meshgrid(xs, ys)
    half = resolution / 2.0

    occupied = np.zeros(cx.shape, dtype=bool)
    for box in scene.boxes:
        occupied |= (
            (cx >= box.x_min - half) & (cx <= box.x_max + half)
            & (cy >= box.y_min - half) & (cy <= box.y_max + half)
        )
    for cyl in scene.cylinders:
        # expand by the half-diagonal so any cell the disc touches is occupied
        r = cyl.radius + half * math.sqrt(2.0)
        occupied |= (cx - cyl.cx) ** 2 + (cy - cyl.cy) ** 2 <= r * r
    occupied[0, :] = occupied[-1, :] = True
    occupied[:, 0] = occupied[:, -1] = True

    centi = np.where(occupied, int(LOGODDS_CLAMP * _SCALE), -int(LOGODDS_CLAMP * _SCALE))
    return OccupancyGrid(geom, centi.astype(np.int32), revision=1)


def integrate(grid: OccupancyGrid, tmap: TraversabilityMap, robot_pose: Pose2D) -> OccupancyGrid:
    """Fuse one traversability snapshot into the grid (mutates and returns it).

    OBSTACLE cells add +0.85 log-odds to the world cell they land in,
    TRAVERSABLE cells add -0.41, UNKNOWN cells add nothing; sums clamp at
    +/-10. Obstacle evidence deliberately outweighs ground evidence 2:1 so
    the map forgets obstacles slowly. Cells falling outside the grid are
    skipped. No ray carving: observed ground already is free-space
    evidence, keeping integration O(observed cells).
    """
    interesting = tmap.cells != CellState.UNKNOWN
    rows, cols = np.nonzero(interesting)
    if rows.size == 0:
        return grid
    tg = tmap.geometry
    lx = tg.origin.x + (cols + 0.5) * tg.resolution
    ly = tg.origin.y + (rows + 0.5) * tg.resolution
    c, s = math.cos(robot_pose.theta), math.sin(robot_pose.theta)
    wx = robot_pose.x + c * lx - s * ly
    wy = robot_pose.y + s * lx + c * ly

    g = grid.geometry
    gc, gs = math.cos(g.origin.theta), math.sin(g.origin.theta)
    dx, dy = wx - g.origin.x, wy - g.origin.y
    col = np.floor((gc * dx + gs * dy) / g.resolution).astype(np.int64)
    row = np.floor((-gs * dx + gc * dy) / g.resolution).astype(np.int64)
    inb = (col >= 0) & (col < g.cols) & (row >= 0) & (row < g.rows)

    increments = np.where(
        tmap.cells[rows, cols] == CellState.OBSTACLE,
        int(LOGODDS_OBSTACLE * _SCALE),
        int(round(LOGODDS_TRAVERSABLE * _SCALE)),
    ).astype(np.int64)

    before = grid.classes()
    flat = row[inb] * g.cols + col[inb]
    delta = np.zeros(g.rows * g.cols, dtype=np.int64)
    np.add.at(delta, flat, increments[inb])
    clamp = int(LOGODDS_CLAMP * _SCALE)
    updated = np.clip(grid._centi.ravel() + delta, -clamp, clamp).astype(np.int32)
    grid._centi = updated.reshape(g.rows, g.cols)
    if np.any(grid.classes() != before):
        grid.revision += 1
    return grid


def save_map(grid: OccupancyGrid) -> tuple[bytes, str]:
    """Encode the ternary classification as (PGM bytes, metadata sidecar text).

    Encoding: OCCUPIED=0, FREE=254, UNKNOWN=205; grid row 0 is the first
    image row. The sidecar carries resolution and origin so load_map can
    rebuild the geometry.
    """
    classes = grid.classes()
    img = np.full(classes.shape, _PGM_VALUES[OccClass.UNKNOWN], dtype=np.uint8)
    img[classes == OccClass.OCCUPIED] = _PGM_VALUES[OccClass.OCCUPIED]
    img[classes == OccClass.FREE] = _PGM_VALUES[OccClass.FREE]
    o = grid.geometry.origin
    meta = (
        f"resolution = {grid.geometry.resolution!r}\n"
        f"origin_x = {o.x!r}\n"
        f"origin_y = {o.y!r}\n"
        f"origin_theta = {o.theta!r}\n"
    )
    return encode_pgm(img), meta


def load_map(pgm_bytes: bytes, meta_text: str) -> OccupancyGrid:
    """Rebuild an OccupancyGrid from save_map output.

    Ternary classes round-trip losslessly: OCCUPIED cells load at log-odds
    +10, FREE at -10, UNKNOWN at 0.
    """
    img = decode_pgm(pgm_bytes)
    meta: dict[str, float] = {}
    for lineno, raw in enumerate(meta_text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"(\w+)\s*=\s*([-+0-9.eE]+)", line)
        if not m:
            raise ParseError(f"bad sidecar line {raw!r}", line=lineno)
        meta[m.group(1)] = float(m.group(2))
    for key in ("resolution", "origin_x", "origin_y", "origin_theta"):
        if key not in meta:
            raise ParseError(f"sidecar missing {key!r}")
    geom = GridGeometry(
        meta["resolution"],
        Pose2D(meta["origin_x"], meta["origin_y"], meta["origin_theta"]),
        cols=img.shape[1],
        rows=img.shape[0],
    )
    clamp = int(LOGODDS_CLAMP * _SCALE)
    centi = np.zeros(img.shape, dtype=np.int32)
    known = np.isin(img, list(_PGM_TO_CLASS))
    if not np.all(known):
        raise ValidationError("map PGM contains pixel values outside {0, 205, 254}")
    centi[img == _PGM_VALUES[OccClass.OCCUPIED]] = clamp
    centi[img == _PGM_VALUES[OccClass.FREE]] = -clamp
    return OccupancyGrid(geom, centi, revision=1)


def save_map_files(grid: OccupancyGrid, pgm_path) -> None:
    pgm, meta = save_map(grid)
    with open(pgm_path, "wb") as fh:
        fh.write(pgm)
    with open(str(pgm_path).rsplit(".", 1)[0] + ".meta", "w", encoding="utf-8") as fh:
        fh.write(meta)


def load_map_files(pgm_path) -> OccupancyGrid:
    with open(pgm_path, "rb") as fh:
        pgm = fh.read()
    with open(str(pgm_path).rsplit(".", 1)[0] + ".meta", "r", encoding="utf-8") as fh:
        meta = fh.read()
    return load_map(pgm, meta)


def dead_reckoning_pose(initial: Pose2D, history) -> Pose2D:
    """Fold a chronological [(Twist, dt), ...] command history from an initial pose."""
    pose = initial
    for twist, dt in history:
        pose = unicycle_step(pose, twist, dt)
    return pose


class GroundTruthPoseProvider:
    """PoseProvider fed directly from simulator state — the SLAM stand-in."""

    def __init__(self, initial: Pose2D, t0: float = 0.0):
        self._times = [t0]
        self._poses = [initial]

    def record(self, t: float, pose: Pose2D) -> None:
        if t < self._times[-1]:
            raise ValidationError("pose samples must be recorded in time order")
        self._times.append(t)
        self._poses.append(pose)

    def pose_at(self, t: float) -> Pose2D:
        """Most recent pose at or before t."""
        i = bisect_right(self._times, t) - 1
        return self._poses[max(i, 0)]


class DeadReckoningPoseProvider:
    """PoseProvider integrating applied commands; the odometry fallback."""

    def __init__(self, initial: Pose2D, t0: float = 0.0):
        self._times = [t0]
        self._poses = [initial]

    def record(self, twist: Twist, dt: float) -> None:
        self._poses.append(unicycle_step(self._poses[-1], twist, dt))
        self._times.append(self._times[-1] + dt)

    def pose_at(self, t: float) -> Pose2D:
        i = bisect_right(self._times, t) - 1
        return self._poses[max(i, 0)]
