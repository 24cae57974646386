import math

import numpy as np
import pytest

from lswarm.geom import (
    Box3,
    DegeneratePolygon,
    ZeroVector,
    align_x_to,
    clip_convex,
    closest_point_box,
    closest_point_segment,
    ensure_ccw,
    intersection_area,
    is_rotation,
    poly_area,
    raster_area,
    rot_y,
    rot_z,
    square_poly,
    unit,
    vec3,
)

X = np.array([1.0, 0.0, 0.0])


def test_rot_z_identity():
    assert np.allclose(rot_z(0.0), np.eye(3))


def test_rot_z_quarter_turn():
    assert np.allclose(rot_z(90.0) @ X, [0.0, 1.0, 0.0], atol=1e-12)


def test_rot_z_45():
    expected = [math.sqrt(2) / 2, math.sqrt(2) / 2, 0.0]
    assert np.allclose(rot_z(45.0) @ X, expected, atol=1e-12)


def test_rot_y_identity():
    assert np.allclose(rot_y(0.0), np.eye(3))


def test_rot_y_quarter_turns():
    assert np.allclose(rot_y(90.0) @ X, [0.0, 0.0, -1.0], atol=1e-12)
    assert np.allclose(rot_y(-90.0) @ X, [0.0, 0.0, 1.0], atol=1e-12)


def test_rotations_are_orthonormal():
    rng = np.random.default_rng(1)
    for ang in rng.uniform(-360, 360, size=200):
        assert is_rotation(rot_z(ang))
        assert is_rotation(rot_y(ang))


def test_align_x_to_trivial_axes():
    assert np.allclose(align_x_to(vec3(2, 0, 0)), np.eye(3), atol=1e-12)
    assert np.allclose(align_x_to(vec3(0, 1, 0)) @ X, [0.0, 1.0, 0.0], atol=1e-12)


def test_align_x_to_diagonal():
    # Expected vector computed by applying the composed yaw/pitch matrix.
    v = vec3(1, 1, -1)
    got = align_x_to(v) @ X
    assert np.allclose(got, v / math.sqrt(3), atol=1e-12)


def test_align_x_to_random_parallel():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        v = rng.normal(size=3)
        if np.linalg.norm(v) < 1e-6:
            continue
        m = align_x_to(v)
        assert is_rotation(m)
        got = m @ X
        assert np.allclose(got, v / np.linalg.norm(v), atol=1e-9)


def test_align_x_to_zero_raises():
    with pytest.raises(ZeroVector):
        align_x_to(vec3(0, 0, 0))
    with pytest.raises(ZeroVector):
        unit(vec3(0, 0, 0))


def test_align_x_to_zero_roll():
    # The lateral axis (image of +y) stays level for any non-vertical heading.
    rng = np.random.default_rng(11)
    for _ in range(200):
        v = rng.normal(size=3)
        if abs(v[0]) < 1e-3 and abs(v[1]) < 1e-3:
            continue
        lateral = align_x_to(v) @ np.array([0.0, 1.0, 0.0])
        assert abs(lateral[2]) < 1e-9


def test_closest_point_box_face():
    b = Box3(vec3(-1, -1, -1), vec3(1, 1, 1))
    q, d = closest_point_box(vec3(5, 0, 0), b)
    assert np.allclose(q, [1, 0, 0])
    assert d == pytest.approx(4.0)


def test_closest_point_box_inside():
    b = Box3(vec3(-1, -1, -1), vec3(1, 1, 1))
    p = vec3(0.2, -0.3, 0.5)
    q, d = closest_point_box(p, b)
    assert np.allclose(q, p)
    assert d == 0.0


def test_closest_point_box_edge():
    b = Box3(vec3(-1, -1, -1), vec3(1, 1, 1))
    q, d = closest_point_box(vec3(2, 2, 0), b)
    assert np.allclose(q, [1, 1, 0])
    assert d == pytest.approx(math.sqrt(2))


def test_closest_point_box_dominates_surface_samples():
    # The returned distance never exceeds the distance to any surface sample.
    rng = np.random.default_rng(3)
    b = Box3(vec3(-2, -1, 0), vec3(1, 3, 4))
    lo, hi = b.min_corner, b.max_corner
    samples = rng.uniform(lo, hi, size=(10000, 3))
    axis = rng.integers(0, 3, size=10000)
    side = rng.integers(0, 2, size=10000)
    for i in range(10000):
        samples[i, axis[i]] = (lo, hi)[side[i]][axis[i]]
    for _ in range(50):
        p = rng.uniform(-6, 8, size=3)
        _, d = closest_point_box(p, b)
        sample_d = np.linalg.norm(samples - p, axis=1).min()
        assert d <= sample_d + 1e-9


def test_closest_point_segment_basic():
    a, b = vec3(-1, 0, 0), vec3(1, 0, 0)
    assert np.allclose(closest_point_segment(vec3(0, 1, 0), a, b), [0, 0, 0])
    assert np.allclose(closest_point_segment(vec3(5, 2, 0), a, b), b)
    assert np.allclose(closest_point_segment(vec3(1, 1, 1), a, a), a)


def test_box_invariant():
    with pytest.raises(ValueError):
        Box3(vec3(1, 0, 0), vec3(0, 1, 1))


def test_clip_convex_squares():
    a = square_poly(0.0, 0.0, 2.0)
    b = square_poly(1.0, 0.0, 2.0)
    piece = clip_convex(a, b)
    assert poly_area(ensure_ccw(piece)) == pytest.approx(2.0)


def test_intersection_area_identical_squares():
    s = square_poly(0.5, 0.5, 1.0)
    assert intersection_area([s], [s.copy()]) == pytest.approx(1.0)


def test_intersection_area_offset_half():
    a = square_poly(0.5, 0.5, 1.0)
    b = square_poly(1.0, 0.5, 1.0)
    assert intersection_area([a], [b]) == pytest.approx(0.5)


def test_intersection_area_disjoint():
    a = square_poly(0.0, 0.0, 1.0)
    b = square_poly(2.0, 0.0, 1.0)
    assert intersection_area([a], [b]) == 0.0


def test_intersection_area_degenerate():
    with pytest.raises(DegeneratePolygon):
        intersection_area([np.array([[0.0, 0.0], [1.0, 0.0]])], [square_poly(0, 0, 1)])


def test_intersection_area_union_dedup():
    # Overlapping members on one side must not be double counted.
    a = [square_poly(0.0, 0.0, 2.0), square_poly(0.5, 0.0, 2.0)]
    b = [square_poly(0.0, 0.0, 4.0)]
    assert intersection_area(a, b) == pytest.approx(2.0 * 2.5)
    assert intersection_area(b, a) == pytest.approx(2.0 * 2.5)


def _random_square_sets(rng, n_max=4):
    polys = []
    for _ in range(rng.integers(1, n_max + 1)):
        side = rng.uniform(0.5, 2.0)
        cx, cy = rng.uniform(-2, 2, size=2)
        polys.append(square_poly(cx, cy, side))
    return polys


def test_intersection_area_properties():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = _random_square_sets(rng)
        b = _random_square_sets(rng)
        ab = intersection_area(a, b)
        ba = intersection_area(b, a)
        assert ab == pytest.approx(ba, abs=1e-9)
        assert ab >= 0.0
        area_a = intersection_area(a, a)
        area_b = intersection_area(b, b)
        assert ab <= min(area_a, area_b) + 1e-9


def _hull(points):
    # Andrew's monotone chain, ccw.
    pts = sorted(map(tuple, points))

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and (
                (out[-1][0] - out[-2][0]) * (p[1] - out[-2][1])
                - (out[-1][1] - out[-2][1]) * (p[0] - out[-2][0])
            ) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1])


def _random_convex(rng):
    while True:
        pts = rng.uniform(-1.5, 1.5, size=(int(rng.integers(4, 9)), 2))
        hull = _hull(pts)
        if len(hull) >= 3:
            return hull


def test_intersection_area_matches_shapely_general():
    shapely = pytest.importorskip("shapely")
    from shapely.geometry import Polygon
    from shapely.ops import unary_union

    rng = np.random.default_rng(13)
    for _ in range(120):
        polys_a = [_random_convex(rng) for _ in range(rng.integers(1, 4))]
        polys_b = [_random_convex(rng) for _ in range(rng.integers(1, 4))]
        got = intersection_area(polys_a, polys_b)
        ua = unary_union([Polygon(p) for p in polys_a])
        ub = unary_union([Polygon(p) for p in polys_b])
        want = ua.intersection(ub).area
        assert got == pytest.approx(want, abs=1e-7)


def test_raster_area_identical_squares():
    s = square_poly(0.5, 0.5, 1.0)
    got = raster_area([s], [s.copy()], cell=0.05)
    assert got == pytest.approx(1.0, abs=0.05)


def test_raster_area_disjoint():
    a = square_poly(0.0, 0.0, 1.0)
    b = square_poly(3.0, 0.0, 1.0)
    assert raster_area([a], [b], cell=0.05) == 0.0


def test_raster_area_offset_vs_oracle():
    a = square_poly(0.5, 0.5, 1.0)
    b = square_poly(1.0, 0.5, 1.0)
    got = raster_area([a], [b], cell=0.05)
    assert got == pytest.approx(intersection_area([a], [b]), abs=0.05)


def test_raster_tracks_clipping_oracle_on_random_pairs():
    # 200 random square pairs, cell = side/50, agreement within 2 % relative.
    rng = np.random.default_rng(17)
    for _ in range(200):
        side = rng.uniform(0.5, 3.0)
        cx, cy = rng.uniform(-1, 1, size=2)
        dx, dy = rng.uniform(-0.4, 0.4, size=2) * side
        a = square_poly(cx, cy, side)
        b = square_poly(cx + dx, cy + dy, side)
        exact = intersection_area([a], [b])
        approx = raster_area([a], [b], cell=side / 50.0)
        assert approx == pytest.approx(exact, rel=0.02)


def test_raster_invalid_cell():
    with pytest.raises(ValueError):
        raster_area([square_poly(0, 0, 1)], [square_poly(0, 0, 1)], cell=0.0)
