"""Downward camera model, ground footprints and the overlap-ratio metric.

The sensor sees a cone of half apex angle theta below the vehicle; the unit
of coverage is the square footprint of side s = h * tan(theta) / sqrt(2)
inscribed in the cone's ground circle. Footprints stay axis-aligned
regardless of heading (gimballed sensor). Altitude is z, up positive, so a
climb grows the footprint and coarsens the ground sampling distance.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geom import intersection_area, mark_rect_cells, square_poly

__all__ = [
    "OutOfRange", "EmptyPreferredArea", "CameraModel", "Footprint",
    "CoverageTrace", "footprint_side", "gsd", "optimal_altitude",
    "swept_footprints", "overlap_ratio", "resolution_filtered",
]


class OutOfRange(ValueError):
    """Altitude outside the camera's valid sensing range."""


class EmptyPreferredArea(ValueError):
    """Overlap ratio is undefined when the preferred area is empty."""


@dataclass(frozen=True)
class CameraModel:
    """Conical downward sensor with a square effective footprint.

    theta_deg: half apex angle of the sensing cone, degrees.
    sensor_*_mm / focal_mm / image_*_px: lens constants behind the
        meters-per-pixel-per-meter-altitude factors k_h and k_w.
    gsd_max: coarsest acceptable ground sampling distance, m/px.
    d_s_max: valid sensing distance, meters.
    """

    theta_deg: float
    sensor_w_mm: float
    sensor_h_mm: float
    focal_mm: float
    image_w_px: int
    image_h_px: int
    gsd_max: float
    d_s_max: float

    def __post_init__(self):
        if not (0.0 < self.theta_deg < 90.0):
            raise ValueError("theta must lie strictly between 0 and 90 degrees")
        if self.focal_mm <= 0 or self.sensor_w_mm <= 0 or self.sensor_h_mm <= 0:
            raise ValueError("lens constants must be positive")
        if self.image_w_px <= 0 or self.image_h_px <= 0:
            raise ValueError("image dimensions must be positive")
        if self.gsd_max <= 0 or self.d_s_max <= 0:
            raise ValueError("gsd_max and d_s_max must be positive")

    @property
    def k_h(self):
        return self.sensor_h_mm / (self.focal_mm * self.image_h_px)

    @property
    def k_w(self):
        return self.sensor_w_mm / (self.focal_mm * self.image_w_px)

    @property
    def tan_theta(self):
        return math.tan(math.radians(self.theta_deg))

    def to_dict(self):
        return {
            "theta_deg": self.theta_deg,
            "sensor_mm": [self.sensor_w_mm, self.sensor_h_mm],
            "focal_mm": self.focal_mm,
            "image_px": [self.image_w_px, self.image_h_px],
            "gsd_max": self.gsd_max,
            "d_s_max": self.d_s_max,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            theta_deg=float(data["theta_deg"]),
            sensor_w_mm=float(data["sensor_mm"][0]),
            sensor_h_mm=float(data["sensor_mm"][1]),
            focal_mm=float(data["focal_mm"]),
            image_w_px=int(data["image_px"][0]),
            image_h_px=int(data["image_px"][1]),
            gsd_max=float(data["gsd_max"]),
            d_s_max=float(data["d_s_max"]),
        )

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(open(path).read()))


def footprint_side(h, cam: CameraModel):
    """Side of the square footprint at altitude h: h * tan(theta) / sqrt(2)."""
    if h < 0.0 or h > cam.d_s_max:
        raise OutOfRange(f"altitude {h} outside [0, {cam.d_s_max}]")
    return h * cam.tan_theta / math.sqrt(2.0)


def gsd(h, cam: CameraModel):
    """(GSD_h, GSD_w) at altitude h; linear in h."""
    return cam.k_h * h, cam.k_w * h


def optimal_altitude(cam: CameraModel):
    """Largest altitude whose GSD still meets gsd_max, capped at d_s_max."""
    return min(cam.gsd_max / max(cam.k_h, cam.k_w), cam.d_s_max)


@dataclass
class Footprint:
    cx: float
    cy: float
    side: float
    t: float
    valid: bool = True

    def poly(self):
        return square_poly(self.cx, self.cy, self.side)

    def rect(self):
        h = self.side / 2.0
        return (self.cx - h, self.cx + h, self.cy - h, self.cy + h)


@dataclass
class CoverageTrace:
    """Time-ordered footprints of one agent."""

    footprints: list = field(default_factory=list)

    def __post_init__(self):
        ts = [f.t for f in self.footprints]
        if any(b <= a for a, b in zip(ts[:-1], ts[1:])):
            raise ValueError("footprint timestamps must strictly increase")

    def append(self, fp: Footprint):
        if self.footprints and fp.t <= self.footprints[-1].t:
            raise ValueError("footprint timestamps must strictly increase")
        self.footprints.append(fp)

    def valid_rects(self):
        return [f.rect() for f in self.footprints if f.valid and f.side > 0.0]

    def valid_polys(self):
        return [f.poly() for f in self.footprints if f.valid and f.side > 0.0]

    def __len__(self):
        return len(self.footprints)


def swept_footprints(v, h0, tau, dt, cam: CameraModel) -> CoverageTrace:
    """Footprints swept by holding velocity v from altitude h0 over [0, tau].

    Samples at t = 0, dt, ..., tau. The footprint center travels with the
    horizontal velocity and the side follows the altitude h0 + v_z * t;
    samples whose altitude leaves [0, d_s_max] are flagged invalid.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if dt <= 0.0 or dt > tau + 1e-12:
        raise ValueError("dt must lie in (0, tau]")
    v = np.asarray(v, dtype=float)
    ts = np.arange(0.0, tau + dt * 0.5, dt)
    trace = CoverageTrace()
    for t in ts:
        h = h0 + float(v[2]) * t
        ok = 0.0 <= h <= cam.d_s_max
        h_clamped = min(max(h, 0.0), cam.d_s_max)
        trace.append(Footprint(
            cx=float(v[0]) * t,
            cy=float(v[1]) * t,
            side=footprint_side(h_clamped, cam),
            t=float(t),
            valid=ok,
        ))
    return trace


def resolution_filtered(trace: CoverageTrace, cam: CameraModel) -> CoverageTrace:
    """Copy of `trace` with footprints coarser than gsd_max marked invalid."""
    side_cap = optimal_altitude(cam) * cam.tan_theta / math.sqrt(2.0)
    out = CoverageTrace()
    for f in trace.footprints:
        ok = f.valid and f.side <= side_cap * (1.0 + 1e-9)
        out.append(Footprint(f.cx, f.cy, f.side, f.t, valid=ok))
    return out


def _grid_masks(rects_a, rects_b, cell):
    x0 = min(min(r[0] for r in rects_a), min(r[0] for r in rects_b))
    x1 = max(max(r[1] for r in rects_a), max(r[1] for r in rects_b))
    y0 = min(min(r[2] for r in rects_a), min(r[2] for r in rects_b))
    y1 = max(max(r[3] for r in rects_a), max(r[3] for r in rects_b))
    nx = max(1, int(math.ceil((x1 - x0) / cell)))
    ny = max(1, int(math.ceil((y1 - y0) / cell)))
    mask_a = np.zeros((nx, ny), dtype=bool)
    mask_b = np.zeros((nx, ny), dtype=bool)
    for r in rects_a:
        mark_rect_cells(mask_a, x0, y0, cell, *r)
    for r in rects_b:
        mark_rect_cells(mask_b, x0, y0, cell, *r)
    return mask_a, mask_b


def overlap_ratio(pref: CoverageTrace, actual: CoverageTrace, cell=None, exact=False):
    """Fraction of the preferred swept area covered by the actual one.

    area(pref union  intersect  actual union) / area(pref union), in [0, 1].
    Coverage loss is 1 minus this value. The default path rasterises on a
    shared grid; exact=True uses polygon clipping instead.
    """
    rects_p = pref.valid_rects()
    if not rects_p:
        raise EmptyPreferredArea("preferred trace sweeps no area")
    rects_a = actual.valid_rects()
    if exact:
        polys_p = pref.valid_polys()
        area_p = intersection_area(polys_p, polys_p)
        if area_p <= 0.0:
            raise EmptyPreferredArea("preferred trace sweeps no area")
        if not rects_a:
            return 0.0
        inter = intersection_area(polys_p, actual.valid_polys())
        return min(1.0, max(0.0, inter / area_p))
    if cell is None:
        cell = max(1e-6, min(r[1] - r[0] for r in rects_p) / 20.0)
    if not rects_a:
        return 0.0
    mask_p, mask_a = _grid_masks(rects_p, rects_a, cell)
    denom = int(np.count_nonzero(mask_p))
    if denom == 0:
        raise EmptyPreferredArea("preferred trace sweeps no area")
    inter = int(np.count_nonzero(mask_p & mask_a))
    return inter / denom
