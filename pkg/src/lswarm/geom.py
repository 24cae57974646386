"""Geometry primitives: rotations, closest-point queries, polygon areas.

Positions are meters with z up. Ground-plane polygons are (k, 2) float
arrays, counter-clockwise. Area routines treat a list of polygons as the
union of its members.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ZeroVector", "DegeneratePolygon", "Box3",
    "vec3", "norm", "unit", "rot_z", "rot_y", "align_x_to", "is_rotation",
    "closest_point_box", "closest_point_segment",
    "square_poly", "poly_area", "ensure_ccw", "clip_convex",
    "intersection_area", "raster_area", "mark_rect_cells",
]


class ZeroVector(ValueError):
    """A direction was requested from a (near-)zero vector."""


class DegeneratePolygon(ValueError):
    """Polygon with fewer than three vertices."""


def vec3(x, y, z):
    return np.array([float(x), float(y), float(z)])


def norm(v):
    return float(math.sqrt(float(v[0]) ** 2 + float(v[1]) ** 2 + float(v[2]) ** 2))


def unit(v):
    n = norm(v)
    if n <= 1e-12:
        raise ZeroVector("cannot normalise a near-zero vector")
    return np.asarray(v, dtype=float) / n


def rot_z(alpha_deg):
    """Rotation about +z; positive angles turn +x toward +y."""
    a = math.radians(alpha_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(beta_deg):
    """Rotation about +y; positive angles turn +x toward -z."""
    b = math.radians(beta_deg)
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def align_x_to(v):
    """Rotation taking +x to the direction of v, keeping the lateral axis level.

    Composed as yaw about z then pitch about y, so the result carries no
    roll. Raises ZeroVector when |v| <= 1e-9.
    """
    n = norm(v)
    if n <= 1e-9:
        raise ZeroVector("alignment direction is undefined")
    d = np.asarray(v, dtype=float) / n
    yaw = math.degrees(math.atan2(d[1], d[0]))
    pitch = -math.degrees(math.asin(max(-1.0, min(1.0, d[2]))))
    return rot_z(yaw) @ rot_y(pitch)


def is_rotation(m, tol=1e-9):
    m = np.asarray(m, dtype=float)
    return bool(
        np.allclose(m.T @ m, np.eye(3), atol=tol)
        and abs(np.linalg.det(m) - 1.0) <= tol
    )


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box; min_corner <= max_corner componentwise."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float)
        hi = np.asarray(self.max_corner, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("box corners must be 3-vectors")
        if np.any(lo > hi + 1e-12):
            raise ValueError("box min corner exceeds max corner")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def footprint(self):
        """(x0, x1, y0, y1) of the ground-plane footprint."""
        return (
            float(self.min_corner[0]), float(self.max_corner[0]),
            float(self.min_corner[1]), float(self.max_corner[1]),
        )


def closest_point_box(p, box):
    """Euclidean-nearest point of `box` to `p` and its distance.

    Points inside the box return (p, 0.0).
    """
    p = np.asarray(p, dtype=float)
    q = np.minimum(np.maximum(p, box.min_corner), box.max_corner)
    return q, norm(p - q)


def closest_point_segment(p, a, b):
    """Closest point to `p` on segment ab, clamped to the endpoints."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom <= 1e-18:
        return a.copy()
    t = float(np.dot(p - a, ab)) / denom
    t = max(0.0, min(1.0, t))
    return a + t * ab


# ---------------------------------------------------------------------------
# Ground-plane polygons
# ---------------------------------------------------------------------------

def square_poly(cx, cy, side):
    """Axis-aligned square of the given side centered at (cx, cy), ccw."""
    h = side / 2.0
    return np.array([
        [cx - h, cy - h],
        [cx + h, cy - h],
        [cx + h, cy + h],
        [cx - h, cy + h],
    ])


def poly_area(poly):
    """Signed shoelace area; positive for counter-clockwise polygons."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def ensure_ccw(poly):
    p = np.asarray(poly, dtype=float)
    return p if poly_area(p) >= 0.0 else p[::-1].copy()


def clip_convex(subject, clip):
    """Sutherland-Hodgman intersection of two convex ccw polygons.

    Returns a (m, 2) array; m may be 0 when the intersection is empty.
    """
    out = [tuple(v) for v in np.asarray(subject, dtype=float)]
    cp = np.asarray(clip, dtype=float)
    n = len(cp)
    for i in range(n):
        if not out:
            break
        ax, ay = cp[i]
        bx, by = cp[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        sx, sy = inp[-1]
        s_in = ex * (sy - ay) - ey * (sx - ax) >= -1e-12
        for px, py in inp:
            p_in = ex * (py - ay) - ey * (px - ax) >= -1e-12
            if p_in != s_in:
                dx, dy = px - sx, py - sy
                denom = ex * dy - ey * dx
                if abs(denom) > 1e-15:
                    t = (ex * (ay - sy) - ey * (ax - sx)) / denom
                    out.append((sx + t * dx, sy + t * dy))
            if p_in:
                out.append((px, py))
            sx, sy, s_in = px, py, p_in
    if len(out) < 3:
        return np.zeros((0, 2))
    return np.array(out)


def _validate_polys(polys):
    checked = []
    for p in polys:
        p = np.asarray(p, dtype=float)
        if p.ndim != 2 or p.shape[0] < 3 or p.shape[1] != 2:
            raise DegeneratePolygon("polygon needs at least three 2-D vertices")
        checked.append(ensure_ccw(p))
    return checked


def _as_rect(poly):
    """(x0, x1, y0, y1) when `poly` is an axis-aligned rectangle, else None."""
    if len(poly) != 4:
        return None
    x0, x1 = float(poly[:, 0].min()), float(poly[:, 0].max())
    y0, y1 = float(poly[:, 1].min()), float(poly[:, 1].max())
    corners = {(x0, y0), (x1, y0), (x1, y1), (x0, y1)}
    for vx, vy in poly:
        if not any(abs(vx - cx) <= 1e-9 and abs(vy - cy) <= 1e-9 for cx, cy in corners):
            return None
    return (x0, x1, y0, y1)


def _union_area_rects(rects):
    """Exact union area of axis-aligned rectangles via y-slab decomposition."""
    rects = [r for r in rects if r[1] > r[0] and r[3] > r[2]]
    if not rects:
        return 0.0
    ys = sorted({r[2] for r in rects} | {r[3] for r in rects})
    area = 0.0
    for y0, y1 in zip(ys[:-1], ys[1:]):
        h = y1 - y0
        if h <= 0.0:
            continue
        spans = sorted((r[0], r[1]) for r in rects if r[2] <= y0 and r[3] >= y1)
        if not spans:
            continue
        cov = 0.0
        cur_lo, cur_hi = spans[0]
        for lo, hi in spans[1:]:
            if lo > cur_hi:
                cov += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        cov += cur_hi - cur_lo
        area += cov * h
    return area


def _poly_slice(poly, x):
    """y-interval of a convex polygon along the vertical line at x, or None."""
    ys = []
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if x1 == x2:
            if x1 == x:
                ys.append(y1)
                ys.append(y2)
            continue
        if (x1 - x) * (x2 - x) <= 0.0:
            t = (x - x1) / (x2 - x1)
            ys.append(y1 + t * (y2 - y1))
    if not ys:
        return None
    return min(ys), max(ys)


def _union_area_general(pieces):
    """Exact union area of convex polygons via an event-driven strip sweep.

    Strip boundaries sit at every vertex x and every pairwise edge crossing,
    so the merged interval length is linear inside each strip and the
    midpoint rule integrates it exactly.
    """
    pieces = [p for p in pieces if len(p) >= 3 and abs(poly_area(p)) > 1e-15]
    if not pieces:
        return 0.0
    xs = set()
    edges = []
    for idx, poly in enumerate(pieces):
        n = len(poly)
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            xs.add(float(a[0]))
            edges.append((idx, a, b))
    for i in range(len(edges)):
        ia, a1, a2 = edges[i]
        for j in range(i + 1, len(edges)):
            ib, b1, b2 = edges[j]
            if ia == ib:
                continue
            d1 = a2 - a1
            d2 = b2 - b1
            denom = d1[0] * d2[1] - d1[1] * d2[0]
            if abs(denom) < 1e-15:
                continue
            r = b1 - a1
            t = (r[0] * d2[1] - r[1] * d2[0]) / denom
            u = (r[0] * d1[1] - r[1] * d1[0]) / denom
            if -1e-12 <= t <= 1.0 + 1e-12 and -1e-12 <= u <= 1.0 + 1e-12:
                xs.add(float(a1[0] + t * d1[0]))
    xs = sorted(xs)
    area = 0.0
    for x0, x1 in zip(xs[:-1], xs[1:]):
        w = x1 - x0
        if w <= 1e-13:
            continue
        xm = 0.5 * (x0 + x1)
        spans = []
        for poly in pieces:
            s = _poly_slice(poly, xm)
            if s is not None and s[1] > s[0]:
                spans.append(s)
        if not spans:
            continue
        spans.sort()
        cov = 0.0
        cur_lo, cur_hi = spans[0]
        for lo, hi in spans[1:]:
            if lo > cur_hi:
                cov += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        cov += cur_hi - cur_lo
        area += cov * w
    return area


def _bbox(poly):
    return (
        float(poly[:, 0].min()), float(poly[:, 0].max()),
        float(poly[:, 1].min()), float(poly[:, 1].max()),
    )


def intersection_area(set_a, set_b):
    """Area of (union of set_a) intersected with (union of set_b).

    Exact up to floating error: pairwise convex clipping followed by union
    de-duplication. Axis-aligned rectangle inputs take an interval-sweep
    path; anything else goes through the general strip sweep.
    """
    polys_a = _validate_polys(set_a)
    polys_b = _validate_polys(set_b)
    rects_a = [_as_rect(p) for p in polys_a]
    rects_b = [_as_rect(p) for p in polys_b]
    if all(r is not None for r in rects_a) and all(r is not None for r in rects_b):
        pieces = []
        for ra in rects_a:
            for rb in rects_b:
                x0 = max(ra[0], rb[0])
                x1 = min(ra[1], rb[1])
                y0 = max(ra[2], rb[2])
                y1 = min(ra[3], rb[3])
                if x1 > x0 and y1 > y0:
                    pieces.append((x0, x1, y0, y1))
        return _union_area_rects(pieces)
    pieces = []
    boxes_b = [_bbox(p) for p in polys_b]
    for pa in polys_a:
        ax0, ax1, ay0, ay1 = _bbox(pa)
        for pb, (bx0, bx1, by0, by1) in zip(polys_b, boxes_b):
            if ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0:
                continue
            piece = clip_convex(pa, pb)
            if len(piece) >= 3:
                pieces.append(piece)
    return _union_area_general(pieces)


def _inside_mask(xs, ys, poly, rect):
    if rect is not None:
        x0, x1, y0, y1 = rect
        return (xs >= x0 - 1e-12) & (xs <= x1 + 1e-12) & (ys >= y0 - 1e-12) & (ys <= y1 + 1e-12)
    mask = np.ones(xs.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        mask &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= -1e-12
    return mask


def raster_area(set_a, set_b, cell):
    """Grid-sampled intersection area; converges to intersection_area as cell -> 0."""
    if cell <= 0.0:
        raise ValueError("cell size must be positive")
    cell = cell / 3.0  # sample finer than requested: ~3x less edge quantisation
    polys_a = _validate_polys(set_a)
    polys_b = _validate_polys(set_b)
    boxes_a = [_bbox(p) for p in polys_a]
    boxes_b = [_bbox(p) for p in polys_b]
    x0 = max(min(b[0] for b in boxes_a), min(b[0] for b in boxes_b))
    x1 = min(max(b[1] for b in boxes_a), max(b[1] for b in boxes_b))
    y0 = max(min(b[2] for b in boxes_a), min(b[2] for b in boxes_b))
    y1 = min(max(b[3] for b in boxes_a), max(b[3] for b in boxes_b))
    if x1 <= x0 or y1 <= y0:
        return 0.0
    # Anchor the grid on the joint bounding box so region edges do not sit
    # systematically on sample phase; only cells covering the intersection
    # box are evaluated.
    ox = min(min(b[0] for b in boxes_a), min(b[0] for b in boxes_b))
    oy = min(min(b[2] for b in boxes_a), min(b[2] for b in boxes_b))
    i0 = int(math.floor((x0 - ox) / cell))
    i1 = max(i0, int(math.ceil((x1 - ox) / cell)) - 1)
    j0 = int(math.floor((y0 - oy) / cell))
    j1 = max(j0, int(math.ceil((y1 - oy) / cell)) - 1)
    cx = ox + (np.arange(i0, i1 + 1) + 0.5) * cell
    cy = oy + (np.arange(j0, j1 + 1) + 0.5) * cell
    xs, ys = np.meshgrid(cx, cy, indexing="ij")
    in_a = np.zeros(xs.shape, dtype=bool)
    for p in polys_a:
        in_a |= _inside_mask(xs, ys, p, _as_rect(p))
    in_b = np.zeros(xs.shape, dtype=bool)
    for p in polys_b:
        in_b |= _inside_mask(xs, ys, p, _as_rect(p))
    return float(np.count_nonzero(in_a & in_b)) * cell * cell


def mark_rect_cells(mask, ox, oy, cell, x0, x1, y0, y1):
    """Set cells of `mask` whose centers fall inside the rectangle.

    `mask` is indexed [ix, iy] on a grid anchored at (ox, oy).
    """
    nx, ny = mask.shape
    i0 = max(0, int(math.ceil((x0 - ox) / cell - 0.5 - 1e-9)))
    i1 = min(nx - 1, int(math.floor((x1 - ox) / cell - 0.5 + 1e-9)))
    j0 = max(0, int(math.ceil((y0 - oy) / cell - 0.5 - 1e-9)))
    j1 = min(ny - 1, int(math.floor((y1 - oy) / cell - 0.5 + 1e-9)))
    if i0 <= i1 and j0 <= j1:
        mask[i0:i1 + 1, j0:j1 + 1] = True
