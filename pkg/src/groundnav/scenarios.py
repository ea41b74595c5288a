"""Procedural scenario generation for evaluation, training, and benchmarks.

Two profiles:

- "nav": desk-scale navigation courses — a handful of boxes and cylinders
  between the start and a goal 2.5-4 m away, guaranteed planable (checked
  against the inflated ground-truth rasterization) with clear space around
  start and goal. Uses a small camera; navigation cares about the map, not
  pixel counts.
- "seg": segmentation-accuracy scenes — obstacles scattered in the camera
  frustum at 2.4-4.5 m so every face is comfortably inside the sensor's
  sweet spot.

Generation is deterministic per seed and emits scenario *text*, so every
consumer goes through the same parser as hand-written files.
"""
from __future__ import annotations

import math

import numpy as np

from .core import world_to_grid
from .errors import PlanningError
from .globalplanner import inflate, plan
from .mapping import rasterize_scene
from .simenv import ScenarioSpec, load_scenario

_NAV_CAMERA = (
    "cam_width = 128\ncam_height = 72\n"
    "cam_fx = 88\ncam_fy = 88\ncam_cx = 64\ncam_cy = 36\n"
)
_SEG_CAMERA = (
    "cam_width = 160\ncam_height = 90\n"
    "cam_fx = 110\ncam_fy = 110\ncam_cx = 80\ncam_cy = 45\n"
)

_BOUNDS = (-1.0, 6.0, -3.0, 3.0)
_EDGE_MARGIN = 0.5


def _footprint_clearance(kind, geom, px, py) -> float:
    """Distance from a point to an obstacle footprint (0 inside)."""
    if kind == "box":
        x0, x1, y0, y1 = geom
        dx = max(x0 - px, 0.0, px - x1)
        dy = max(y0 - py, 0.0, py - y1)
        return math.hypot(dx, dy)
    cx, cy, r = geom
    return max(0.0, math.hypot(px - cx, py - cy) - r)


def _footprint_gap(a, b) -> float:
    """Edge-to-edge distance between two footprints (conservative for box-box)."""
    kind_a, geom_a = a
    kind_b, geom_b = b
    if kind_a == "cylinder":
        cx, cy, r = geom_a
        return _footprint_clearance(kind_b, geom_b, cx, cy) - r
    if kind_b == "cylinder":
        cx, cy, r = geom_b
        return _footprint_clearance(kind_a, geom_a, cx, cy) - r
    ax0, ax1, ay0, ay1 = geom_a
    bx0, bx1, by0, by1 = geom_b
    dx = max(bx0 - ax1, ax0 - bx1, 0.0)
    dy = max(by0 - ay1, ay0 - by1, 0.0)
    return math.hypot(dx, dy)


def _emit(profile_camera: str, goal, obstacles, seed: int, timeout: float) -> str:
    lines = [
        "# generated scenario",
        f"seed = {seed}",
        f"bounds = {_BOUNDS[0]} {_BOUNDS[1]} {_BOUNDS[2]} {_BOUNDS[3]}",
        "start = 0 0 0",
        f"goal = {goal[0]:.4f} {goal[1]:.4f}",
        f"timeout = {timeout}",
        profile_camera.rstrip("\n"),
    ]
    for kind, geom, height in obstacles:
        if kind == "box":
            x0, x1, y0, y1 = geom
            lines.append(f"box = {x0:.4f} {x1:.4f} {y0:.4f} {y1:.4f} {height:.4f}")
        else:
            cx, cy, r = geom
            lines.append(f"cylinder = {cx:.4f} {cy:.4f} {r:.4f} {height:.4f}")
    return "\n".join(lines) + "\n"


def _sample_obstacle(rng, x_range, y_range):
    height = float(rng.uniform(0.15, 0.6))
    if rng.random() < 0.5:
        cx = float(rng.uniform(*x_range))
        cy = float(rng.uniform(*y_range))
        hx = float(rng.uniform(0.12, 0.25))
        hy = float(rng.uniform(0.12, 0.25))
        return ("box", (cx - hx, cx + hx, cy - hy, cy + hy), height)
    cx = float(rng.uniform(*x_range))
    cy = float(rng.uniform(*y_range))
    r = float(rng.uniform(0.12, 0.25))
    return ("cylinder", (cx, cy, r), height)


def _planable(spec: ScenarioSpec) -> bool:
    grid = rasterize_scene(spec.scene, spec.seg.map_resolution)
    try:
        cm = inflate(grid, spec.robot, spec.robot.radius + 0.15)
        start = world_to_grid(grid.geometry, spec.start.x, spec.start.y)
        goal = world_to_grid(grid.geometry, spec.goal[0], spec.goal[1])
        if start is None or goal is None:
            return False
        plan(cm, start, goal)
        return True
    except PlanningError:
        return False


def random_scenario_text(seed: int, profile: str = "nav") -> str:
    """Deterministic random scenario of the requested profile, as scenario text."""
    rng = np.random.default_rng(seed)
    if profile == "seg":
        return _random_seg_text(rng, seed)
    if profile != "nav":
        raise ValueError(f"unknown profile {profile!r}")

    for _attempt in range(30):
        while True:
            d = float(rng.uniform(2.5, 4.0))
            b = float(rng.uniform(-1.0, 1.0))
            gx, gy = d * math.cos(b), d * math.sin(b)
            if (
                _BOUNDS[0] + _EDGE_MARGIN <= gx <= _BOUNDS[1] - _EDGE_MARGIN
                and _BOUNDS[2] + _EDGE_MARGIN <= gy <= _BOUNDS[3] - _EDGE_MARGIN
            ):
                break
        n = int(rng.integers(2, 6))
        obstacles = []
        tries = 0
        while len(obstacles) < n and tries < 80:
            tries += 1
            cand = _sample_obstacle(rng, (0.3, 5.2), (-2.3, 2.3))
            kind, geom, _h = cand
            if _footprint_clearance(kind, geom, 0.0, 0.0) < 0.8:
                continue
            if _footprint_clearance(kind, geom, gx, gy) < 0.8:
                continue
            if any(_footprint_gap((kind, geom), (k2, g2)) < 0.7 for k2, g2, _ in obstacles):
                continue
            obstacles.append(cand)
        text = _emit(_NAV_CAMERA, (gx, gy), obstacles, seed, timeout=45.0)
        if _planable(load_scenario(text)):
            return text
        # unplanable: thin out the course and retry with fresh samples
    return _emit(_NAV_CAMERA, (gx, gy), [], seed, timeout=45.0)


def _random_seg_text(rng, seed: int) -> str:
    n = int(rng.integers(3, 7))
    obstacles = []
    tries = 0
    while len(obstacles) < n and tries < 80:
        tries += 1
        r = float(rng.uniform(2.4, 4.5))
        b = float(rng.uniform(-0.7, 0.7))
        cx, cy = r * math.cos(b), r * math.sin(b)
        if not (
            _BOUNDS[0] + _EDGE_MARGIN <= cx <= _BOUNDS[1] - _EDGE_MARGIN
            and _BOUNDS[2] + _EDGE_MARGIN <= cy <= _BOUNDS[3] - _EDGE_MARGIN
        ):
            continue
        height = float(rng.uniform(0.15, 0.6))
        if rng.random() < 0.5:
            hx = float(rng.uniform(0.12, 0.25))
            hy = float(rng.uniform(0.12, 0.25))
            cand = ("box", (cx - hx, cx + hx, cy - hy, cy + hy), height)
        else:
            cand = ("cylinder", (cx, cy, float(rng.uniform(0.12, 0.25))), height)
        kind, geom, _h = cand
        if _footprint_clearance(kind, geom, 0.0, 0.0) < 2.0:
            continue
        if any(_footprint_gap((kind, geom), (k2, g2)) < 0.3 for k2, g2, _ in obstacles):
            continue
        obstacles.append(cand)
    return _emit(_SEG_CAMERA, (2.0, 0.0), obstacles, seed, timeout=30.0)


def random_scenario(seed: int, profile: str = "nav") -> ScenarioSpec:
    return load_scenario(random_scenario_text(seed, profile))
