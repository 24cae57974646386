"""Serpentine global coverage planner over an urban scene.

Rows run along the longer ground axis at a spacing tied to the footprint
side at the optimal altitude; waypoints over buildings are lifted to the
roof height plus a clearance, so the sweep connects free regions by flying
over obstacles. Rows are split into contiguous blocks, one per agent.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .coverage import CameraModel, footprint_side, optimal_altitude
from .environment import UrbanModel, build_occupancy, nearest_obstacle_point
from .geom import mark_rect_cells

__all__ = [
    "InfeasibleAltitude", "PlanConfig", "WaypointPath",
    "plan", "verify_coverage", "save_waypoints", "load_waypoints",
]


class InfeasibleAltitude(ValueError):
    """A building cannot be overflown within the valid sensing distance."""


@dataclass
class PlanConfig:
    clearance: float = 2.0        # height margin above roofs, meters
    row_factor: float = 1.0       # row spacing as a fraction of the footprint side
    n_agents: int = 1
    agent_radius: float = 0.3
    occupancy_cell: float = 0.0   # 0 -> footprint side at optimal altitude
    lateral_margin: float = 0.25  # extra horizontal clearance around waypoints

    def __post_init__(self):
        if self.clearance <= 0:
            raise ValueError("clearance must be positive")
        if not (0.0 < self.row_factor <= 1.0):
            raise ValueError("row spacing factor must lie in (0, 1]")
        if self.n_agents < 1:
            raise ValueError("need at least one agent")


@dataclass
class WaypointPath:
    agent_id: int
    waypoints: np.ndarray  # (k, 3)

    def __post_init__(self):
        wps = np.asarray(self.waypoints, dtype=float)
        if wps.ndim != 2 or wps.shape[1] != 3 or wps.shape[0] < 2:
            raise ValueError("path needs at least two 3-D waypoints")
        if np.any(np.all(np.abs(np.diff(wps, axis=0)) < 1e-12, axis=1)):
            raise ValueError("consecutive waypoints must be distinct")
        self.waypoints = wps

    def length(self):
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


def _row_waypoints(u_start, u_end, prof_z, cell, reverse):
    """Waypoints (u, z) along one row from a per-cell altitude profile."""
    n = len(prof_z)

    def z_at(u):
        j = min(n - 1, max(0, int(u / cell)))
        return prof_z[j]

    pts = [(u_start, z_at(u_start))]
    j0 = int(u_start / cell)
    j1 = int(u_end / cell)
    for j in range(max(0, j0), min(n - 1, j1 + 1)):
        ub = (j + 1) * cell
        if ub <= u_start or ub >= u_end:
            continue
        if prof_z[j] != prof_z[min(n - 1, j + 1)]:
            pts.append((ub, prof_z[j]))
            pts.append((ub, prof_z[min(n - 1, j + 1)]))
    pts.append((u_end, z_at(u_end)))
    if reverse:
        pts = pts[::-1]
    return pts


def _dilate_max(values, k):
    """Running maximum over a +-k window (step-profile safety padding)."""
    if k <= 0:
        return values
    out = values.copy()
    for shift in range(1, k + 1):
        out[:-shift] = np.maximum(out[:-shift], values[shift:])
        out[shift:] = np.maximum(out[shift:], values[:-shift])
    return out


def plan(model: UrbanModel, cam: CameraModel, cfg: PlanConfig):
    """Generate serpentine coverage paths at the optimal altitude.

    Returns one WaypointPath per agent; raises InfeasibleAltitude when a
    building top plus clearance exceeds the camera's sensing distance.
    """
    h_star = optimal_altitude(cam)
    s = footprint_side(h_star, cam)
    if s <= 0:
        raise InfeasibleAltitude("optimal altitude yields an empty footprint")
    top = model.max_building_height()
    if top > 0 and top + cfg.clearance > cam.d_s_max:
        raise InfeasibleAltitude(
            f"building of height {top} needs altitude {top + cfg.clearance}"
            f" > sensing range {cam.d_s_max}"
        )
    cell = cfg.occupancy_cell if cfg.occupancy_cell > 0 else s
    grid = build_occupancy(model, cell)

    swap = model.length > model.width  # sweep along the longer axis
    U = model.length if swap else model.width
    V = model.width if swap else model.length
    heights = grid.heights.T if swap else grid.heights
    nu = heights.shape[0]

    spacing = cfg.row_factor * s
    half = min(s / 2.0, V / 2.0)
    centers = []
    c = half
    while c <= V - half + 1e-9:
        centers.append(c)
        c += spacing
    if not centers:
        centers = [V / 2.0]
    elif centers[-1] + half < V - 1e-9:
        centers.append(V - half)

    u_start = min(s / 2.0, U / 2.0)
    u_end = max(U - s / 2.0, u_start + 1e-6)

    pad = cfg.agent_radius + cfg.lateral_margin
    pad_cells = int(math.ceil(pad / cell))
    nv = heights.shape[1]

    rows = []
    for k, vc in enumerate(centers):
        jv0 = max(0, int((vc - pad) / cell))
        jv1 = min(nv - 1, int((vc + pad) / cell))
        col_h = heights[:, jv0:jv1 + 1].max(axis=1) if jv1 >= jv0 else np.zeros(nu)
        prof = np.where(col_h > 0.0, np.maximum(h_star, col_h + cfg.clearance), h_star)
        prof = _dilate_max(prof, pad_cells)
        pts = _row_waypoints(u_start, u_end, prof, cell, reverse=(k % 2 == 1))
        row = [(u, vc, z) for (u, z) in pts]
        rows.append(row)

    if cfg.n_agents > len(rows):
        raise ValueError(f"{cfg.n_agents} agents but only {len(rows)} rows to assign")

    row_len = [sum(abs(b[0] - a[0]) + abs(b[2] - a[2]) for a, b in zip(r[:-1], r[1:]))
               for r in rows]
    total = sum(row_len)
    paths = []
    start = 0
    acc = 0.0
    for agent in range(cfg.n_agents):
        target = total * (agent + 1) / cfg.n_agents
        end = start
        while end < len(rows) and (acc < target - 1e-9 or end == start):
            acc += row_len[end]
            end += 1
        remaining_agents = cfg.n_agents - agent - 1
        end = min(end, len(rows) - remaining_agents)
        end = max(end, start + 1)
        block = [wp for row in rows[start:end] for wp in row]
        wps = []
        for u, vcoord, z in block:
            x, y = (vcoord, u) if swap else (u, vcoord)
            if wps and abs(wps[-1][0] - x) < 1e-12 and abs(wps[-1][1] - y) < 1e-12 \
                    and abs(wps[-1][2] - z) < 1e-12:
                continue
            wps.append((x, y, z))
        paths.append(WaypointPath(agent_id=agent, waypoints=np.array(wps)))
        start = end
    return paths


def verify_coverage(paths, model: UrbanModel, cam: CameraModel, cell=None):
    """Uncovered fraction of the searchable ground under the given paths.

    The search space is the ground inside the bounds minus building
    footprints; the swept space is the union of footprints along straight
    interpolation of the waypoints.
    """
    h_star = optimal_altitude(cam)
    s = footprint_side(h_star, cam)
    if cell is None:
        cell = max(s / 8.0, 1e-3)
    nx = max(1, int(math.ceil(model.width / cell)))
    ny = max(1, int(math.ceil(model.length / cell)))
    search = np.ones((nx, ny), dtype=bool)
    xs = (np.arange(nx) + 0.5) * cell
    ys = (np.arange(ny) + 0.5) * cell
    cx, cy = np.meshgrid(xs, ys, indexing="ij")
    search &= (cx <= model.width) & (cy <= model.length)
    for b in model.buildings:
        x0, x1, y0, y1 = b.footprint
        search &= ~((cx > x0) & (cx < x1) & (cy > y0) & (cy < y1))
    n_search = int(np.count_nonzero(search))
    if n_search == 0:
        return 0.0

    swept = np.zeros((nx, ny), dtype=bool)
    step = cell / 2.0
    for path in paths:
        wps = path.waypoints
        for a, b in zip(wps[:-1], wps[1:]):
            seg = np.linalg.norm(b - a)
            n_samples = max(2, int(math.ceil(seg / step)) + 1)
            for t in np.linspace(0.0, 1.0, n_samples):
                p = a + t * (b - a)
                z = p[2]
                if z < 0.0 or z > cam.d_s_max:
                    continue
                half_side = footprint_side(z, cam) / 2.0
                mark_rect_cells(swept, 0.0, 0.0, cell,
                                p[0] - half_side, p[0] + half_side,
                                p[1] - half_side, p[1] + half_side)
    uncovered = int(np.count_nonzero(search & ~swept))
    return uncovered / n_search


def waypoint_clearances(paths, model: UrbanModel):
    """Distance from each waypoint to the nearest building surface."""
    out = []
    for path in paths:
        for wp in path.waypoints:
            hit = nearest_obstacle_point(model, wp)
            out.append(math.inf if hit is None else hit[1])
    return out


def save_waypoints(paths, path):
    """One CSV record per waypoint: agent, index, x, y, z."""
    lines = ["agent,index,x,y,z"]
    for p in paths:
        for i, wp in enumerate(p.waypoints):
            x, y, z = (float(c) for c in wp)
            lines.append(f"{p.agent_id},{i},{x!r},{y!r},{z!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_waypoints(path):
    groups = {}
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("agent,"):
            raise ValueError("not a waypoint file")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            agent, _idx, x, y, z = line.split(",")
            groups.setdefault(int(agent), []).append((float(x), float(y), float(z)))
    return [WaypointPath(agent_id=a, waypoints=np.array(w))
            for a, w in sorted(groups.items())]


def timed_plan(model, cam, cfg):
    """plan() plus its wall-clock in milliseconds."""
    t0 = time.perf_counter()
    paths = plan(model, cam, cfg)
    return paths, (time.perf_counter() - t0) * 1000.0
