"""Ground/obstacle segmentation of raw depth images and traversability mapping.

The segmenter works directly on the depth image, no point-cloud detour.
For a camera at known height h pitched down by phi, a floor pixel in image
row v must return depth

    D(v) = h / (sin(phi) + ((v - cy) / fy) * cos(phi))

whenever the denominator is positive (the pixel lies below the horizon row
v_h = cy - fy * tan(phi)). Rearranged, a measured depth z at row v implies
the hit point sits

    H(v, z) = h - z * (sin(phi) + ((v - cy) / fy) * cos(phi))

meters above the floor. Classifying H against a pair of thresholds gives a
per-pixel ground/obstacle decision in a handful of arithmetic ops, which is
what keeps the whole perception chain comfortably inside the control tick
on a small CPU. Height is independent of the column u because the mount is
assumed roll-free.

Classified pixels are then back-projected into the robot frame and binned
into a robot-centric traversability grid that both navigation policies
consume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .core import CameraModel, GridGeometry, Pose2D
from .errors import DimensionMismatch, ValidationError
from .pgmio import encode_pgm, encode_ppm


class PixelClass(IntEnum):
    UNKNOWN = 0
    GROUND = 1
    OBSTACLE = 2
    OVERHEAD = 3


class CellState(IntEnum):
    UNKNOWN = 0
    TRAVERSABLE = 1
    OBSTACLE = 2


# Fixed PGM encoding for traversability dumps.
CELL_PGM_VALUES = {CellState.TRAVERSABLE: 254, CellState.OBSTACLE: 0, CellState.UNKNOWN: 205}

# Fixed PPM colors for class-frame dumps.
CLASS_COLORS = {
    PixelClass.UNKNOWN: (120, 120, 120),
    PixelClass.GROUND: (0, 200, 0),
    PixelClass.OBSTACLE: (200, 0, 0),
    PixelClass.OVERHEAD: (0, 0, 200),
}


@dataclass(frozen=True)
class DepthFrame:
    """Rectangular array of metric depth samples.

    depth[row, col] is the forward (optical-axis) distance in meters;
    0 or a non-finite value marks an invalid sample.
    """

    width: int
    height: int
    depth: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        if self.depth.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"depth array {self.depth.shape} does not match {self.height}x{self.width}"
            )


@dataclass(frozen=True)
class PixelClassFrame:
    """Per-pixel classes aligned with a source DepthFrame."""

    width: int
    height: int
    classes: np.ndarray  # uint8 PixelClass values

    def __post_init__(self):
        if self.classes.shape != (self.height, self.width):
            raise DimensionMismatch("class array does not match frame dimensions")


@dataclass(frozen=True)
class TraversabilityMap:
    """Robot-centric ternary grid; the robot sits at a fixed anchor cell, x forward."""

    geometry: GridGeometry
    cells: np.ndarray  # uint8 CellState values, indexed [row, col]
    timestamp: float = 0.0

    @property
    def anchor(self) -> tuple[int, int]:
        """(col, row) of the cell containing the robot origin."""
        g = self.geometry
        return (
            min(g.cols - 1, max(0, math.floor(-g.origin.x / g.resolution))),
            min(g.rows - 1, max(0, math.floor(-g.origin.y / g.resolution))),
        )


@dataclass(frozen=True)
class SegParams:
    """Segmentation thresholds and traversability-map layout.

    tau_ground bounds |H| for a GROUND call; tau_obstacle is the height
    past which a return becomes an OBSTACLE; between the two lies an
    UNKNOWN band that absorbs borderline returns instead of promoting
    them to obstacles. Returns above clearance_height are OVERHEAD: a
    low-body robot drives under them, so they are ignored entirely.

    tau_ground also bounds how far up an obstacle's foot can sit while
    still classifying as floor, so it is kept tight (1 cm); noisy sensors
    push borderline pixels into the UNKNOWN band, never into obstacles.
    """

    tau_ground: float = 0.01
    tau_obstacle: float = 0.08
    clearance_height: float = 0.30
    column_stride: int = 2
    row_stride: int = 2
    min_obstacle_hits: int = 2
    map_range: float = 4.0
    map_resolution: float = 0.05

    def __post_init__(self):
        if not (0 < self.tau_ground <= self.tau_obstacle):
            raise ValidationError("need 0 < tau_ground <= tau_obstacle")
        if self.tau_obstacle >= self.clearance_height:
            raise ValidationError("tau_obstacle must sit below clearance_height")
        if self.column_stride < 1 or self.row_stride < 1:
            raise ValidationError("strides must be >= 1")
        if self.min_obstacle_hits < 1:
            raise ValidationError("min_obstacle_hits must be >= 1")
        if self.map_range <= 0 or self.map_resolution <= 0:
            raise ValidationError("map_range and map_resolution must be positive")


@lru_cache(maxsize=16)
def _row_factors(cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-row (g, a): H = h - z*g[v], forward coordinate x = z*a[v]."""
    yc = (np.arange(cam.height) - cam.cy) / cam.fy
    sp, cp = math.sin(cam.pitch), math.cos(cam.pitch)
    return sp + yc * cp, cp - yc * sp


@lru_cache(maxsize=16)
def _col_factors(cam: CameraModel) -> np.ndarray:
    """Per-column lateral coordinate factor: y = z*b[u] (robot y is left)."""
    return -(np.arange(cam.width) - cam.cx) / cam.fx


def expected_ground_depth(cam: CameraModel, v: float):
    """Depth a floor return must have at image row v, or None above the horizon."""
    g = math.sin(cam.pitch) + ((v - cam.cy) / cam.fy) * math.cos(cam.pitch)
    if g <= 0.0:
        return None
    return cam.mount_height / g


def height_above_ground(cam: CameraModel, v: float, z: float) -> float:
    """Height of the 3D point behind pixel row v at depth z, relative to the floor."""
    g = math.sin(cam.pitch) + ((v - cam.cy) / cam.fy) * math.cos(cam.pitch)
    return cam.mount_height - z * g


def classify_pixel(cam: CameraModel, params: SegParams, u: int, v: int, z: float) -> PixelClass:
    """Classify one depth sample. Scalar twin of the vectorized segment()."""
    if not (math.isfinite(z) and z > 0):
        return PixelClass.UNKNOWN
    z = min(max(z, cam.min_depth), cam.max_depth)
    h = height_above_ground(cam, v, z)
    if abs(h) <= params.tau_ground:
        return PixelClass.GROUND
    if h > params.clearance_height:
        return PixelClass.OVERHEAD
    if h > params.tau_obstacle:
        return PixelClass.OBSTACLE
    return PixelClass.UNKNOWN


def segment(frame: DepthFrame, cam: CameraModel, params: SegParams) -> PixelClassFrame:
    """Classify a depth frame on the subsampled pixel lattice.

    Pixels off the (column_stride x row_stride) lattice stay UNKNOWN. One
    vectorized pass, nothing allocated beyond the output frame and a few
    lattice-sized temporaries.
    """
    if frame.width != cam.width or frame.height != cam.height:
        raise DimensionMismatch(
            f"frame {frame.width}x{frame.height} does not match camera {cam.width}x{cam.height}"
        )
    rs, cs = params.row_stride, params.column_stride
    d = frame.depth[::rs, ::cs]
    valid = np.isfinite(d) & (d > 0)
    z = np.clip(d, cam.min_depth, cam.max_depth)
    g = _row_factors(cam)[0][::rs]
    h = cam.mount_height - z * g[:, None]

    cls = np.full(d.shape, PixelClass.UNKNOWN, dtype=np.uint8)
    cls[valid & (np.abs(h) <= params.tau_ground)] = PixelClass.GROUND
    cls[valid & (h > params.tau_obstacle)] = PixelClass.OBSTACLE
    cls[valid & (h > params.clearance_height)] = PixelClass.OVERHEAD

    out = np.full((frame.height, frame.width), PixelClass.UNKNOWN, dtype=np.uint8)
    out[::rs, ::cs] = cls
    return PixelClassFrame(frame.width, frame.height, out)


def traversability_geometry(params: SegParams) -> GridGeometry:
    """Robot-frame grid: x in [-1, map_range], y symmetric about the x-axis."""
    span = params.map_range + 1.0
    n = int(round(span / params.map_resolution))
    return GridGeometry(
        resolution=params.map_resolution,
        origin=Pose2D(-1.0, -span / 2.0, 0.0),
        cols=n,
        rows=n,
    )


def project_to_traversability(
    classes: PixelClassFrame,
    frame: DepthFrame,
    cam: CameraModel,
    params: SegParams,
) -> TraversabilityMap:
    """Bin classified pixels into the robot-centric traversability grid.

    Each sampled GROUND/OBSTACLE pixel back-projects to a robot-frame
    (x, y) via the pinhole model and camera mount transform. A cell is
    OBSTACLE once it collects min_obstacle_hits obstacle pixels (obstacle
    evidence always wins over ground), TRAVERSABLE on any ground hit,
    otherwise UNKNOWN. OVERHEAD pixels are ignored.
    """
    if classes.width != frame.width or classes.height != frame.height:
        raise DimensionMismatch("class frame does not match depth frame")
    rs, cs = params.row_stride, params.column_stride
    cls = classes.classes[::rs, ::cs]
    z = frame.depth[::rs, ::cs]
    interesting = (cls == PixelClass.GROUND) | (cls == PixelClass.OBSTACLE)

    a = _row_factors(cam)[1][::rs]
    b = _col_factors(cam)[::cs]
    zc = np.clip(z, cam.min_depth, cam.max_depth)
    x = zc * a[:, None]
    y = zc * b[None, :]

    geom = traversability_geometry(params)
    col = np.floor((x - geom.origin.x) / geom.resolution).astype(np.int64)
    row = np.floor((y - geom.origin.y) / geom.resolution).astype(np.int64)
    inb = (col >= 0) & (col < geom.cols) & (row >= 0) & (row < geom.rows)
    keep = interesting & inb

    flat = row[keep] * geom.cols + col[keep]
    obstacle = cls[keep] == PixelClass.OBSTACLE
    n = geom.rows * geom.cols
    obs_hits = np.bincount(flat[obstacle], minlength=n)
    gnd_hits = np.bincount(flat[~obstacle], minlength=n)

    cells = np.full(n, CellState.UNKNOWN, dtype=np.uint8)
    cells[gnd_hits >= 1] = CellState.TRAVERSABLE
    cells[obs_hits >= params.min_obstacle_hits] = CellState.OBSTACLE
    return TraversabilityMap(geom, cells.reshape(geom.rows, geom.cols), frame.timestamp)


def class_frame_to_ppm(classes: PixelClassFrame) -> bytes:
    """Debug dump: PixelClassFrame as P6 PPM with the fixed class colors."""
    img = np.zeros((classes.height, classes.width, 3), dtype=np.uint8)
    for value, color in CLASS_COLORS.items():
        img[classes.classes == value] = color
    return encode_ppm(img)


def traversability_to_pgm(tmap: TraversabilityMap) -> bytes:
    """Debug dump: TraversabilityMap as P5 PGM (254 free / 0 obstacle / 205 unknown)."""
    img = np.full(tmap.cells.shape, CELL_PGM_VALUES[CellState.UNKNOWN], dtype=np.uint8)
    img[tmap.cells == CellState.TRAVERSABLE] = CELL_PGM_VALUES[CellState.TRAVERSABLE]
    img[tmap.cells == CellState.OBSTACLE] = CELL_PGM_VALUES[CellState.OBSTACLE]
    return encode_pgm(img)


def depth_to_pgm16(frame: DepthFrame) -> bytes:
    """Depth dump: 16-bit PGM in millimeters (lossless at 1 mm granularity)."""
    mm = np.where(np.isfinite(frame.depth), frame.depth, 0.0) * 1000.0
    mm = np.clip(np.round(mm), 0, 65535).astype(np.uint16)
    return encode_pgm(mm, maxval=65535)
