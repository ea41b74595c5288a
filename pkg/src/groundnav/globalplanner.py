"""Global route planning: costmap inflation, A* grid search, waypoint shortcutting.

The planner treats UNKNOWN occupancy as an obstacle source — a low-body
robot must not commit its route through space nobody has looked at; local
sensing clears it later. Line-of-sight tests use supercover traversal
rather than plain Bresenham because Bresenham skips corner cells and can
report clearance a disc robot does not have.
"""
from __future__ import annotations

import dataclasses
import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import GridGeometry, RobotParams, grid_to_world, world_to_grid
from .errors import GoalInvalid, NoPath, StartInvalid, ValidationError
from .mapping import OccClass, OccupancyGrid

SQRT2 = math.sqrt(2.0)
COST_WEIGHT = 4.0  # soft-cost multiplier w in step cost Δ·(1 + w·(c_from + c_to)/2)


@dataclass(frozen=True)
class Costmap:
    """Inflated planning map: boolean lethal mask plus soft cost in [0, 1]."""

    geometry: GridGeometry
    lethal: np.ndarray
    cost: np.ndarray
    inflation_radius: float

    def in_bounds(self, col: int, row: int) -> bool:
        return 0 <= col < self.geometry.cols and 0 <= row < self.geometry.rows


@dataclass(frozen=True)
class Path:
    """8-connected cell path ((col, row) tuples) and its total cost in cell units."""

    cells: tuple[tuple[int, int], ...]
    total_cost: float


def _disc_offsets(radius_m: float, resolution: float) -> np.ndarray:
    m = int(math.floor(radius_m / resolution)) + 1
    di, dj = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    keep = (di * di + dj * dj).astype(float) * resolution * resolution <= radius_m * radius_m
    out = np.zeros((2 * m + 1, 2 * m + 1), dtype=bool)
    out[keep] = True
    return out


def inflate(grid: OccupancyGrid, params: RobotParams, inflation_radius: float) -> Costmap:
    """Dilate obstacles so a point search plans safely for a disc robot.

    Cells whose center lies within params.radius (Euclidean, cell centers)
    of any OCCUPIED or UNKNOWN cell become lethal; beyond that, soft cost
    falls linearly from 1 at the lethal boundary to 0 at inflation_radius.
    """
    if inflation_radius < params.radius:
        raise ValidationError("inflation_radius must be at least the robot radius")
    res = grid.geometry.resolution
    classes = grid.classes()
    sources = (classes == OccClass.OCCUPIED) | (classes == OccClass.UNKNOWN)

    lethal = ndimage.binary_dilation(sources, structure=_disc_offsets(params.radius, res))
    if inflation_radius > params.radius and np.any(sources):
        dist = ndimage.distance_transform_edt(~sources) * res
        cost = np.clip((inflation_radius - dist) / (inflation_radius - params.radius), 0.0, 1.0)
    else:
        cost = np.where(sources, 1.0, 0.0)
    cost = np.where(lethal, 1.0, cost)
    return Costmap(grid.geometry, lethal, cost, inflation_radius)


_NEIGHBORS = (
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2),
)


def _octile(ac: int, ar: int, bc: int, br: int) -> float:
    dc, dr = abs(ac - bc), abs(ar - br)
    return max(dc, dr) + (SQRT2 - 1.0) * min(dc, dr)


def plan(cm: Costmap, start: tuple[int, int], goal: tuple[int, int]) -> Path:
    """A* over the 8-connected costmap.

    Step cost is Δ·(1 + w·(c_from + c_to)/2) with Δ ∈ {1, √2} in cell
    units and w = 4; the octile heuristic is admissible because the
    multiplier never drops below 1, so the returned path is cost-optimal.
    Diagonal steps may not cut corners past a lethal cell. Ties break on
    lower f, then lower h, then row-major cell order, which pins the
    search order (and hence the returned path) completely.
    """
    cols, rows = cm.geometry.cols, cm.geometry.rows
    sc, sr = start
    gc, gr = goal
    if not cm.in_bounds(sc, sr) or cm.lethal[sr, sc]:
        raise StartInvalid(f"start cell {start} is lethal or out of bounds")
    if not cm.in_bounds(gc, gr) or cm.lethal[gr, gc]:
        raise GoalInvalid(f"goal cell {goal} is lethal or out of bounds")

    lethal = cm.lethal
    cost = cm.cost
    start_idx = sr * cols + sc
    goal_idx = gr * cols + gc
    g_score = {start_idx: 0.0}
    parent = {start_idx: -1}
    closed = set()
    h0 = _octile(sc, sr, gc, gr)
    open_heap = [(h0, h0, start_idx)]

    while open_heap:
        f, h, idx = heapq.heappop(open_heap)
        if idx in closed:
            continue
        if idx == goal_idx:
            cells = []
            while idx != -1:
                cells.append((idx % cols, idx // cols))
                idx = parent[idx]
            cells.reverse()
            return Path(tuple(cells), g_score[goal_idx])
        closed.add(idx)
        c, r = idx % cols, idx // cols
        c_from = cost[r, c]
        for dc, dr, delta in _NEIGHBORS:
            nc, nr = c + dc, r + dr
            if not (0 <= nc < cols and 0 <= nr < rows) or lethal[nr, nc]:
                continue
            if dc != 0 and dr != 0 and (lethal[r, nc] or lethal[nr, c]):
                continue  # no corner cutting
            nidx = nr * cols + nc
            if nidx in closed:
                continue
            g = g_score[idx] + delta * (1.0 + COST_WEIGHT * (c_from + cost[nr, nc]) / 2.0)
            if g < g_score.get(nidx, math.inf):
                g_score[nidx] = g
                parent[nidx] = idx
                nh = _octile(nc, nr, gc, gr)
                heapq.heappush(open_heap, (g + nh, nh, nidx))
    raise NoPath(f"no route from {start} to {goal}")


def supercover(c0: int, r0: int, c1: int, r1: int) -> list[tuple[int, int]]:
    """Every cell the segment between two cell centers touches.

    When the segment passes exactly through a lattice corner, both
    corner-adjacent orthogonal cells are included — the conservative
    convention a disc robot needs for clearance checks.
    """
    cells = [(c0, r0)]
    dx, dy = c1 - c0, r1 - r0
    xstep = 1 if dx >= 0 else -1
    ystep = 1 if dy >= 0 else -1
    dx, dy = abs(dx), abs(dy)
    ddx, ddy = 2 * dx, 2 * dy
    x, y = c0, r0
    if ddx >= ddy:
        error = errorprev = dx
        for _ in range(dx):
            x += xstep
            error += ddy
            if error > ddx:
                y += ystep
                error -= ddx
                if error + errorprev < ddx:
                    cells.append((x, y - ystep))
                elif error + errorprev > ddx:
                    cells.append((x - xstep, y))
                else:  # exact corner crossing: both orthogonal cells
                    cells.append((x, y - ystep))
                    cells.append((x - xstep, y))
            cells.append((x, y))
            errorprev = error
    else:
        error = errorprev = dy
        for _ in range(dy):
            y += ystep
            error += ddx
            if error > ddy:
                x += xstep
                error -= ddy
                if error + errorprev < ddy:
                    cells.append((x - xstep, y))
                elif error + errorprev > ddy:
                    cells.append((x, y - ystep))
                else:
                    cells.append((x - xstep, y))
                    cells.append((x, y - ystep))
            cells.append((x, y))
            errorprev = error
    return cells


def line_is_clear(cm: Costmap, a: tuple[int, int], b: tuple[int, int]) -> bool:
    """True iff the supercover of segment a-b crosses no lethal cell."""
    for c, r in supercover(a[0], a[1], b[0], b[1]):
        if not cm.in_bounds(c, r) or cm.lethal[r, c]:
            return False
    return True


def shortcut(path: Path, cm: Costmap) -> list[tuple[int, int]]:
    """Greedy line-of-sight pruning of a grid path into sparse waypoints.

    From each anchor, keep the farthest path cell whose connecting ray is
    supercover-clear. First and last cells always survive.
    """
    cells = path.cells
    if len(cells) <= 2:
        return list(cells)
    waypoints = [cells[0]]
    anchor = 0
    while anchor < len(cells) - 1:
        best = anchor + 1
        for j in range(len(cells) - 1, anchor, -1):
            if line_is_clear(cm, cells[anchor], cells[j]):
                best = j
                break
        waypoints.append(cells[best])
        anchor = best
    return waypoints


def path_to_csv(cells, geometry: GridGeometry) -> str:
    """CSV dump (`col,row,x,y`) for path or waypoint cell lists."""
    lines = ["col,row,x,y"]
    for c, r in cells:
        x, y = grid_to_world(geometry, c, r)
        lines.append(f"{c},{r},{x:.6f},{y:.6f}")
    return "\n".join(lines) + "\n"


# Extra radius used when planning routes the local policy must actually track:
# the dynamic window sweeps a (radius + safety margin) disc at cell
# quantization, so routes tangent to the bare-radius lethal boundary are not
# followable. Padding the planning radius keeps shortcut tangents wide enough.
ROUTE_LETHAL_PAD = 0.10
ROUTE_INFLATION_MARGIN = 0.25


def _nearest_free_cell(cm: Costmap, cell: tuple[int, int], max_ring: int = 4):
    """Closest non-lethal cell to `cell` (smallest distance, row-major ties), or None."""
    c0, r0 = cell
    if cm.in_bounds(c0, r0) and not cm.lethal[r0, c0]:
        return cell
    for ring in range(1, max_ring + 1):
        best = None
        best_d2 = None
        for dr in range(-ring, ring + 1):
            for dc in range(-ring, ring + 1):
                if max(abs(dr), abs(dc)) != ring:
                    continue
                c, r = c0 + dc, r0 + dr
                if cm.in_bounds(c, r) and not cm.lethal[r, c]:
                    d2 = dc * dc + dr * dr
                    if best is None or d2 < best_d2:
                        best, best_d2 = (c, r), d2
        if best is not None:
            return best
    return None


def plan_route(grid, robot: RobotParams, start_xy, goal_xy, *,
               lethal_pad: float = ROUTE_LETHAL_PAD,
               inflation_margin: float = ROUTE_INFLATION_MARGIN,
               relocate_start: bool = False) -> list[tuple[float, float]]:
    """Inflate-plan-shortcut with a padded planning radius; world-frame waypoints.

    relocate_start moves an in-lethal start cell to the nearest free cell
    (a robot legitimately standing inside the padded band still needs a
    route out).
    """
    planning_robot = dataclasses.replace(robot, radius=robot.radius + lethal_pad)
    cm = inflate(grid, planning_robot, planning_robot.radius + inflation_margin)
    geom = grid.geometry
    start_cell = world_to_grid(geom, start_xy[0], start_xy[1])
    goal_cell = world_to_grid(geom, goal_xy[0], goal_xy[1])
    if start_cell is None:
        raise StartInvalid(f"start {start_xy} outside the grid")
    if goal_cell is None:
        raise GoalInvalid(f"goal {goal_xy} outside the grid")
    if relocate_start:
        start_cell = _nearest_free_cell(cm, start_cell) or start_cell
    path = plan(cm, start_cell, goal_cell)
    waypoints = [grid_to_world(geom, c, r) for c, r in shortcut(path, cm)]
    waypoints[-1] = (goal_xy[0], goal_xy[1])
    return waypoints
