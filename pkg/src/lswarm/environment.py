"""Urban scene representation, occupancy grids and nearest-obstacle queries.

A scene is a bounded ground rectangle [0, w] x [0, l] carrying axis-aligned
building boxes that rest on the ground plane (z = 0).
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geom import Box3, closest_point_box

__all__ = [
    "ParseError", "ValidationError", "UrbanModel", "OccupancyGrid",
    "load_model", "build_occupancy", "nearest_obstacle_point",
    "nearest_obstacle_point_brute", "fixture_path", "list_fixtures",
]

_FIXTURE_DIR = Path(__file__).parent / "fixtures"


class ParseError(ValueError):
    """Model file is missing or structurally malformed."""


class ValidationError(ValueError):
    """Model content violates an invariant (reports the offending building)."""


@dataclass
class UrbanModel:
    name: str
    width: float
    length: float
    buildings: list

    def __post_init__(self):
        if self.width <= 0 or self.length <= 0:
            raise ValidationError("ground bounds must be positive")
        self._lo = None
        self._hi = None
        self._grid = None

    @property
    def bounds(self):
        return (self.width, self.length)

    def building_arrays(self):
        """Stacked (n, 3) corner arrays for vectorised queries."""
        if self._lo is None:
            if self.buildings:
                self._lo = np.array([b.min_corner for b in self.buildings])
                self._hi = np.array([b.max_corner for b in self.buildings])
            else:
                self._lo = np.zeros((0, 3))
                self._hi = np.zeros((0, 3))
        return self._lo, self._hi

    def max_building_height(self):
        return max((float(b.max_corner[2]) for b in self.buildings), default=0.0)


def load_model(source) -> UrbanModel:
    """Load and validate a model from a JSON file path or parsed dict."""
    if isinstance(source, dict):
        data = source
    else:
        path = Path(source)
        if not path.exists():
            raise ParseError(f"model file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"model file is not valid JSON: {exc}") from exc
    try:
        name = str(data["name"])
        w = float(data["bounds"]["w"])
        l = float(data["bounds"]["l"])
        raw = data["buildings"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"model file missing required field: {exc}") from exc
    if w <= 0 or l <= 0:
        raise ValidationError("ground bounds must be positive")
    buildings = []
    for i, b in enumerate(raw):
        try:
            x0, y0 = float(b["x_min"]), float(b["y_min"])
            x1, y1 = float(b["x_max"]), float(b["y_max"])
            h = float(b["height"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"building {i}: missing field {exc}") from exc
        if x1 <= x0 or y1 <= y0:
            raise ValidationError(f"building {i}: empty footprint")
        if h <= 0:
            raise ValidationError(f"building {i}: non-positive height")
        if x0 < -1e-9 or y0 < -1e-9 or x1 > w + 1e-9 or y1 > l + 1e-9:
            raise ValidationError(f"building {i}: extends past ground bounds")
        buildings.append(Box3(np.array([x0, y0, 0.0]), np.array([x1, y1, h])))
    return UrbanModel(name=name, width=w, length=l, buildings=buildings)


def fixture_path(name: str) -> Path:
    p = _FIXTURE_DIR / f"{name}.json"
    if not p.exists():
        raise ParseError(f"no bundled fixture named {name!r}")
    return p


def list_fixtures():
    return sorted(p.stem for p in _FIXTURE_DIR.glob("*.json"))


@dataclass
class OccupancyGrid:
    """Per-cell occupancy and max building height over the ground plane."""

    cell: float
    nx: int
    ny: int
    occupied: np.ndarray
    heights: np.ndarray

    def cell_index(self, x, y):
        ix = min(self.nx - 1, max(0, int(x / self.cell)))
        iy = min(self.ny - 1, max(0, int(y / self.cell)))
        return ix, iy


def _footprint_cells(x0, x1, y0, y1, cell, nx, ny):
    """Index ranges of cells whose interior overlaps the footprint."""
    ix0 = max(0, int(math.floor(x0 / cell + 1e-9)))
    ix1 = min(nx - 1, int(math.ceil(x1 / cell - 1e-9)) - 1)
    iy0 = max(0, int(math.floor(y0 / cell + 1e-9)))
    iy1 = min(ny - 1, int(math.ceil(y1 / cell - 1e-9)) - 1)
    return ix0, ix1, iy0, iy1


def build_occupancy(model: UrbanModel, cell: float) -> OccupancyGrid:
    """Rasterise building footprints; cell height is the max overlapping roof."""
    if cell <= 0:
        raise ValueError("cell size must be positive")
    nx = max(1, int(math.ceil(model.width / cell - 1e-9)))
    ny = max(1, int(math.ceil(model.length / cell - 1e-9)))
    occupied = np.zeros((nx, ny), dtype=bool)
    heights = np.zeros((nx, ny))
    for b in model.buildings:
        x0, x1, y0, y1 = b.footprint
        h = float(b.max_corner[2])
        ix0, ix1, iy0, iy1 = _footprint_cells(x0, x1, y0, y1, cell, nx, ny)
        if ix0 > ix1 or iy0 > iy1:
            continue
        occupied[ix0:ix1 + 1, iy0:iy1 + 1] = True
        block = heights[ix0:ix1 + 1, iy0:iy1 + 1]
        np.maximum(block, h, out=block)
    return OccupancyGrid(cell=cell, nx=nx, ny=ny, occupied=occupied, heights=heights)


def nearest_obstacle_point_brute(model: UrbanModel, p):
    """Exhaustive scan over all buildings; the reference for the pruned path."""
    lo, hi = model.building_arrays()
    if len(lo) == 0:
        return None
    p = np.asarray(p, dtype=float)
    q = np.minimum(np.maximum(p, lo), hi)
    d = np.linalg.norm(q - p, axis=1)
    i = int(np.argmin(d))
    return q[i].copy(), float(d[i])


class _ProximityGrid:
    """Coarse 2-D broad phase: cell -> building indices, ring-expanded queries."""

    def __init__(self, model: UrbanModel, cell=None):
        self.model = model
        self.cell = cell or max(2.0, max(model.width, model.length) / 16.0)
        self.nx = max(1, int(math.ceil(model.width / self.cell)))
        self.ny = max(1, int(math.ceil(model.length / self.cell)))
        self.cells = {}
        for idx, b in enumerate(model.buildings):
            x0, x1, y0, y1 = b.footprint
            ix0 = max(0, int(x0 / self.cell))
            ix1 = min(self.nx - 1, int(x1 / self.cell))
            iy0 = max(0, int(y0 / self.cell))
            iy1 = min(self.ny - 1, int(y1 / self.cell))
            for ix in range(ix0, ix1 + 1):
                for iy in range(iy0, iy1 + 1):
                    self.cells.setdefault((ix, iy), []).append(idx)

    def nearest(self, p):
        p = np.asarray(p, dtype=float)
        cx = int(math.floor(p[0] / self.cell))
        cy = int(math.floor(p[1] / self.cell))
        max_ring = max(
            abs(cx), abs(cx - (self.nx - 1)), abs(cy), abs(cy - (self.ny - 1))
        )
        best = None  # (dist, building index, point)
        seen = set()
        for ring in range(max_ring + 1):
            # Cells in ring k sit at least (k-1) cell widths away horizontally.
            if best is not None and best[0] <= max(0, ring - 1) * self.cell:
                break
            for ix, iy in self._ring_cells(cx, cy, ring):
                for idx in self.cells.get((ix, iy), ()):
                    if idx in seen:
                        continue
                    seen.add(idx)
                    q, d = closest_point_box(p, self.model.buildings[idx])
                    if best is None or (d, idx) < (best[0], best[1]):
                        best = (d, idx, q)
        if best is None:
            return None
        return best[2], best[0]

    def _ring_cells(self, cx, cy, ring):
        if ring == 0:
            yield cx, cy
            return
        for dx in range(-ring, ring + 1):
            yield cx + dx, cy - ring
            yield cx + dx, cy + ring
        for dy in range(-ring + 1, ring):
            yield cx - ring, cy + dy
            yield cx + ring, cy + dy


def nearest_obstacle_point(model: UrbanModel, p, use_grid=None):
    """Closest building surface point to p, or None without buildings.

    Points inside a building return themselves at distance zero. The coarse
    broad phase only prunes; results match the exhaustive scan.
    """
    n = len(model.buildings)
    if n == 0:
        return None
    if use_grid is None:
        use_grid = n >= 48
    if not use_grid:
        return nearest_obstacle_point_brute(model, p)
    if model._grid is None:
        model._grid = _ProximityGrid(model)
    return model._grid.nearest(p)
