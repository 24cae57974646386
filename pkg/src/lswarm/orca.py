"""3-D velocity obstacles and reciprocal half-space avoidance.

A velocity obstacle for a pair of spheres is a truncated cone in relative
velocity space; each neighbour contributes one linear half-space constraint
whose permitted side is {v : (v - point) . normal >= 0}. The solver returns
the feasible velocity closest to the preferred one subject to every
half-space, a speed ball and an acceleration ball, so the feasible set is
convex and the projection is exact.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AlreadyColliding", "HalfSpace", "AgentKinematics",
    "vo_contains", "escape_vector",
    "halfspace_reactive", "halfspace_nonreactive",
    "collision_recovery_halfspace", "build_halfspaces",
    "solve_velocity", "velocity_satisfies",
]

_EPS = 1e-12


class AlreadyColliding(ValueError):
    """The pair is already in contact; the velocity obstacle is undefined."""


@dataclass(frozen=True)
class HalfSpace:
    """One velocity-space constraint: permitted side is (v - point) . normal >= 0."""

    point: np.ndarray
    normal: np.ndarray
    kind: str = "reactive"  # reactive | nonreactive | static

    def __post_init__(self):
        pt = np.asarray(self.point, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        ln = float(np.linalg.norm(n))
        if abs(ln - 1.0) > 1e-9:
            if ln <= _EPS:
                raise ValueError("half-space normal must be non-zero")
            n = n / ln
        object.__setattr__(self, "point", pt)
        object.__setattr__(self, "normal", n)

    def permits(self, v, tol=1e-9):
        return float(np.dot(np.asarray(v) - self.point, self.normal)) >= -tol


@dataclass
class AgentKinematics:
    position: np.ndarray
    velocity: np.ndarray
    radius: float
    pref_velocity: np.ndarray
    max_speed: float
    max_accel: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.pref_velocity = np.asarray(self.pref_velocity, dtype=float)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.max_speed <= 0 or self.max_accel <= 0:
            raise ValueError("speed and acceleration limits must be positive")
        if np.linalg.norm(self.velocity) > self.max_speed + 1e-6:
            raise ValueError("velocity exceeds the speed limit")


def _any_perp(p):
    p = np.asarray(p, dtype=float)
    ax = np.abs(p)
    ref = np.zeros(3)
    ref[int(np.argmin(ax))] = 1.0
    perp = np.cross(p, ref)
    n = np.linalg.norm(perp)
    if n <= _EPS:
        return np.array([1.0, 0.0, 0.0])
    return perp / n


def vo_contains(v_rel, p_rel, r_sum, tau):
    """Whether holding v_rel collides within tau: some t in [0, tau] has
    t * v_rel inside the open ball around p_rel of radius r_sum."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    p = np.asarray(p_rel, dtype=float)
    v = np.asarray(v_rel, dtype=float)
    dist_sq = float(np.dot(p, p))
    if dist_sq <= r_sum * r_sum:
        raise AlreadyColliding("entities already overlap")
    vv = float(np.dot(v, v))
    if vv <= _EPS:
        return False
    t = min(max(float(np.dot(p, v)) / vv, 0.0), tau)
    diff = t * v - p
    return float(np.dot(diff, diff)) < r_sum * r_sum


def escape_vector(v_rel, p_rel, r_sum, tau):
    """Minimal translation u moving v_rel to the velocity-obstacle boundary,
    and the outward boundary normal there.

    Works for v_rel inside or outside the obstacle: outside, u points back
    toward the boundary and the induced constraint is already satisfied.
    """
    p = np.asarray(p_rel, dtype=float)
    v = np.asarray(v_rel, dtype=float)
    dist_sq = float(np.dot(p, p))
    r_sq = r_sum * r_sum
    if dist_sq <= r_sq:
        raise AlreadyColliding("entities already overlap")
    w = v - p / tau
    w_sq = float(np.dot(w, w))
    dot1 = float(np.dot(w, p))
    if dot1 < 0.0 and dot1 * dot1 > r_sq * w_sq:
        # closest exit crosses the truncation sphere
        w_len = math.sqrt(max(w_sq, _EPS))
        n = w / w_len
        u = (r_sum / tau - w_len) * n
        return u, n
    # closest exit crosses the cone flank
    b = float(np.dot(p, v))
    v_sq = float(np.dot(v, v))
    cross_sq = max(dist_sq * v_sq - b * b, 0.0)
    c = v_sq - cross_sq / (dist_sq - r_sq)
    disc = max(b * b - dist_sq * c, 0.0)
    t = (b + math.sqrt(disc)) / dist_sq
    ww = v - t * p
    ww_len = float(np.linalg.norm(ww))
    if ww_len <= _EPS:
        n = _any_perp(p)
        return (r_sum * t) * n, n
    n = ww / ww_len
    u = (r_sum * t - ww_len) * n
    return u, n


def _v_opt(agent: AgentKinematics, mode):
    return agent.pref_velocity if mode == "preferred" else agent.velocity


def halfspace_reactive(agent: AgentKinematics, other: AgentKinematics, tau,
                       v_opt_mode="current"):
    """Constraint against a reciprocating neighbour: each takes half of u."""
    p_rel = other.position - agent.position
    r_sum = agent.radius + other.radius
    v_opt = _v_opt(agent, v_opt_mode)
    u, n = escape_vector(v_opt - other.velocity, p_rel, r_sum, tau)
    return HalfSpace(point=v_opt + 0.5 * u, normal=n, kind="reactive")


def halfspace_nonreactive(agent: AgentKinematics, obs_position, obs_velocity,
                          obs_radius, tau, v_opt_mode="current"):
    """Constraint against an entity that will not yield: full u shift."""
    p_rel = np.asarray(obs_position, dtype=float) - agent.position
    r_sum = agent.radius + obs_radius
    v_opt = _v_opt(agent, v_opt_mode)
    u, n = escape_vector(v_opt - np.asarray(obs_velocity, dtype=float), p_rel, r_sum, tau)
    return HalfSpace(point=v_opt + u, normal=n, kind="nonreactive")


def collision_recovery_halfspace(agent: AgentKinematics, other_position,
                                 other_velocity, r_sum, dt,
                                 responsibility=0.5, kind="reactive",
                                 v_opt_mode="current"):
    """Separating constraint for pairs already in contact: push apart so the
    overlap resolves within one time step."""
    p_rel = np.asarray(other_position, dtype=float) - agent.position
    v_opt = _v_opt(agent, v_opt_mode)
    w = (v_opt - np.asarray(other_velocity, dtype=float)) - p_rel / dt
    w_len = float(np.linalg.norm(w))
    if w_len <= _EPS:
        n = _any_perp(p_rel) if np.linalg.norm(p_rel) <= _EPS else \
            -p_rel / float(np.linalg.norm(p_rel))
        u = (r_sum / dt) * n
    else:
        n = w / w_len
        u = (r_sum / dt - w_len) * n
    return HalfSpace(point=v_opt + responsibility * u, normal=n, kind=kind)


def build_halfspaces(agent: AgentKinematics, others_pos, others_vel, r_sums,
                     responsibilities, kinds, tau, dt, v_opt_mode="current"):
    """Vectorised constraint construction against k entities at once.

    Already-overlapping rows fall back to the one-step separating push.
    Equivalent to the per-pair construction, row by row.
    """
    others_pos = np.asarray(others_pos, dtype=float)
    k = len(others_pos)
    if k == 0:
        return []
    others_vel = np.asarray(others_vel, dtype=float)
    r_sums = np.asarray(r_sums, dtype=float)
    resp = np.asarray(responsibilities, dtype=float)
    v_opt = _v_opt(agent, v_opt_mode)

    rel_p = others_pos - agent.position
    rel_v = v_opt - others_vel
    dist_sq = np.einsum("ij,ij->i", rel_p, rel_p)
    r_sq = r_sums * r_sums
    colliding = dist_sq <= r_sq

    u = np.zeros((k, 3))
    n = np.zeros((k, 3))

    w = rel_v - rel_p / tau
    w_sq = np.einsum("ij,ij->i", w, w)
    dot1 = np.einsum("ij,ij->i", w, rel_p)
    dome = (~colliding) & (dot1 < 0.0) & (dot1 * dot1 > r_sq * w_sq)
    cone = (~colliding) & (~dome)

    if dome.any():
        w_len = np.sqrt(np.maximum(w_sq[dome], _EPS))
        nd = w[dome] / w_len[:, None]
        n[dome] = nd
        u[dome] = ((r_sums[dome] / tau - w_len))[:, None] * nd

    if cone.any():
        pc = rel_p[cone]
        vc = rel_v[cone]
        a = dist_sq[cone]
        b = np.einsum("ij,ij->i", pc, vc)
        v_sq = np.einsum("ij,ij->i", vc, vc)
        cross_sq = np.maximum(a * v_sq - b * b, 0.0)
        cval = v_sq - cross_sq / (a - r_sq[cone])
        disc = np.maximum(b * b - a * cval, 0.0)
        t = (b + np.sqrt(disc)) / a
        ww = vc - t[:, None] * pc
        ww_len = np.sqrt(np.einsum("ij,ij->i", ww, ww))
        degen = ww_len <= 1e-9
        ww_len = np.maximum(ww_len, _EPS)
        nc = ww / ww_len[:, None]
        if degen.any():
            rows = np.flatnonzero(cone)[degen]
            for r_i, local in zip(rows, np.flatnonzero(degen)):
                nc[local] = _any_perp(rel_p[r_i])
        n[cone] = nc
        u[cone] = (r_sums[cone] * t - np.where(degen, 0.0, ww_len))[:, None] * nc

    if colliding.any():
        wc = rel_v[colliding] - rel_p[colliding] / dt
        wl = np.sqrt(np.maximum(
            np.einsum("ij,ij->i", wc, wc), _EPS))
        ncol = wc / wl[:, None]
        n[colliding] = ncol
        u[colliding] = ((r_sums[colliding] / dt - wl))[:, None] * ncol

    points = v_opt[None, :] + resp[:, None] * u
    return [HalfSpace(point=points[i], normal=n[i], kind=kinds[i]) for i in range(k)]


def velocity_satisfies(v, halfspaces, tol=1e-6):
    v = np.asarray(v, dtype=float)
    return all(hs.permits(v, tol) for hs in halfspaces)


# ---------------------------------------------------------------------------
# Exact projection onto (half-spaces  intersect  speed ball  intersect  accel ball)
# ---------------------------------------------------------------------------
# Incremental scheme: process planes in order; when plane k is violated by the
# optimum of the first k-1 constraints, the new optimum lies on plane k and the
# problem drops to 2-D (a plane cut by discs and prior half-planes), then to
# 1-D on intersection lines. Plain-float tuples keep the inner loops cheap.

def _d3(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _s3(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _project_ball(g, c, radius):
    d = _s3(g, c)
    ln = math.sqrt(_d3(d, d))
    if ln <= radius:
        return g
    f = radius / ln
    return (c[0] + d[0] * f, c[1] + d[1] * f, c[2] + d[2] * f)


def _project_lens3(g, c0, r0, c1, r1):
    """Projection of g onto the intersection of two balls; None when empty."""
    p = _project_ball(g, c0, r0)
    d1 = _s3(p, c1)
    if _d3(d1, d1) <= r1 * r1 + 1e-12:
        return p
    q = _project_ball(g, c1, r1)
    d0 = _s3(q, c0)
    if _d3(d0, d0) <= r0 * r0 + 1e-12:
        return q
    dc = _s3(c1, c0)
    ll = math.sqrt(_d3(dc, dc))
    if ll <= _EPS:
        rmin = min(r0, r1)
        return _project_ball(g, c0, rmin)
    if ll > r0 + r1 + 1e-12:
        return None
    m = (dc[0] / ll, dc[1] / ll, dc[2] / ll)
    a = (ll * ll + r0 * r0 - r1 * r1) / (2.0 * ll)
    rc_sq = r0 * r0 - a * a
    if rc_sq < 0.0:
        return None
    cc = (c0[0] + a * m[0], c0[1] + a * m[1], c0[2] + a * m[2])
    w = _s3(g, cc)
    along = _d3(w, m)
    perp = (w[0] - along * m[0], w[1] - along * m[1], w[2] - along * m[2])
    pl = math.sqrt(_d3(perp, perp))
    rc = math.sqrt(rc_sq)
    if pl <= _EPS:
        e = _any_perp(np.array(m))
        return (cc[0] + rc * e[0], cc[1] + rc * e[1], cc[2] + rc * e[2])
    f = rc / pl
    return (cc[0] + perp[0] * f, cc[1] + perp[1] * f, cc[2] + perp[2] * f)


def _project_lens2(g, discs):
    (c0, r0), (c1, r1) = discs

    def proj(pt, c, r):
        dx, dy = pt[0] - c[0], pt[1] - c[1]
        ln = math.hypot(dx, dy)
        if ln <= r:
            return pt
        f = r / ln
        return (c[0] + dx * f, c[1] + dy * f)

    p = proj(g, c0, r0)
    if math.hypot(p[0] - c1[0], p[1] - c1[1]) <= r1 + 1e-9:
        return p
    q = proj(g, c1, r1)
    if math.hypot(q[0] - c0[0], q[1] - c0[1]) <= r0 + 1e-9:
        return q
    dx, dy = c1[0] - c0[0], c1[1] - c0[1]
    ll = math.hypot(dx, dy)
    if ll <= _EPS:
        return proj(g, c0, min(r0, r1))
    if ll > r0 + r1 + 1e-9:
        return None
    mx, my = dx / ll, dy / ll
    a = (ll * ll + r0 * r0 - r1 * r1) / (2.0 * ll)
    h_sq = r0 * r0 - a * a
    if h_sq < 0.0:
        return None
    h = math.sqrt(h_sq)
    bx, by = c0[0] + a * mx, c0[1] + a * my
    cand1 = (bx - h * my, by + h * mx)
    cand2 = (bx + h * my, by - h * mx)
    d1 = (cand1[0] - g[0]) ** 2 + (cand1[1] - g[1]) ** 2
    d2 = (cand2[0] - g[0]) ** 2 + (cand2[1] - g[1]) ** 2
    return cand1 if d1 <= d2 else cand2


def _plane_basis(n):
    ax = (abs(n[0]), abs(n[1]), abs(n[2]))
    ref = (1.0, 0.0, 0.0) if ax[0] <= min(ax[1], ax[2]) else \
          ((0.0, 1.0, 0.0) if ax[1] <= ax[2] else (0.0, 0.0, 1.0))
    e1 = (n[1] * ref[2] - n[2] * ref[1],
          n[2] * ref[0] - n[0] * ref[2],
          n[0] * ref[1] - n[1] * ref[0])
    ln = math.sqrt(_d3(e1, e1))
    e1 = (e1[0] / ln, e1[1] / ln, e1[2] / ln)
    e2 = (n[1] * e1[2] - n[2] * e1[1],
          n[2] * e1[0] - n[0] * e1[2],
          n[0] * e1[1] - n[1] * e1[0])
    return e1, e2


def _solve_on_line(planes, j, p0, e1, e2, off_j, m_j, ml_j, discs, g2):
    mhx, mhy = m_j[0] / ml_j, m_j[1] / ml_j
    f = -off_j / ml_j
    x0 = (f * mhx, f * mhy)
    d = (-mhy, mhx)
    tmin, tmax = -math.inf, math.inf
    for (c2, r2) in discs:
        ex, ey = x0[0] - c2[0], x0[1] - c2[1]
        b = ex * d[0] + ey * d[1]
        cc = ex * ex + ey * ey - r2 * r2
        disc = b * b - cc
        if disc < 0.0:
            return None
        sq = math.sqrt(disc)
        tmin = max(tmin, -b - sq)
        tmax = min(tmax, -b + sq)
    for i in range(j):
        pi, ni, _ = planes[i]
        mi = (_d3(ni, e1), _d3(ni, e2))
        offi = _d3(_s3(p0, pi), ni)
        a = offi + x0[0] * mi[0] + x0[1] * mi[1]
        b = d[0] * mi[0] + d[1] * mi[1]
        if abs(b) < _EPS:
            if a < -1e-9:
                return None
            continue
        tb = -a / b
        if b > 0.0:
            tmin = max(tmin, tb)
        else:
            tmax = min(tmax, tb)
    if tmin > tmax + 1e-9:
        return None
    t = (g2[0] - x0[0]) * d[0] + (g2[1] - x0[1]) * d[1]
    t = min(max(t, tmin), tmax)
    return (x0[0] + t * d[0], x0[1] + t * d[1])


def _solve_on_plane(planes, k, g, balls):
    p0, n, _ = planes[k]
    e1, e2 = _plane_basis(n)
    discs = []
    for (c, radius) in balls:
        h = _d3(_s3(c, p0), n)
        rr = radius * radius - h * h
        if rr < 0.0:
            return None
        cp = (c[0] - h * n[0], c[1] - h * n[1], c[2] - h * n[2])
        rel = _s3(cp, p0)
        discs.append(((_d3(rel, e1), _d3(rel, e2)), math.sqrt(rr)))
    grel = _s3(g, p0)
    g2 = (_d3(grel, e1), _d3(grel, e2))
    v2 = _project_lens2(g2, discs)
    if v2 is None:
        return None
    for j in range(k):
        pj, nj, _ = planes[j]
        m = (_d3(nj, e1), _d3(nj, e2))
        off = _d3(_s3(p0, pj), nj)
        ml = math.hypot(m[0], m[1])
        if ml < _EPS:
            if off < -1e-9:
                return None
            continue
        if off + v2[0] * m[0] + v2[1] * m[1] < -1e-9:
            v2 = _solve_on_line(planes, j, p0, e1, e2, off, m, ml, discs, g2)
            if v2 is None:
                return None
    return (p0[0] + v2[0] * e1[0] + v2[1] * e2[0],
            p0[1] + v2[0] * e1[1] + v2[1] * e2[1],
            p0[2] + v2[0] * e1[2] + v2[1] * e2[2])


def _solve_planes(planes, g, balls):
    (c0, r0), (c1, r1) = balls
    v = _project_lens3(g, c0, r0, c1, r1)
    if v is None:
        return None
    for k in range(len(planes)):
        pk, nk, _ = planes[k]
        if _d3(_s3(v, pk), nk) < -1e-9:
            v2 = _solve_on_plane(planes, k, g, balls)
            if v2 is None:
                return None
            v = v2
    return v


def solve_velocity(halfspaces, agent: AgentKinematics, dt):
    """Velocity closest to the preferred one under all constraints.

    Feasible set: every half-space, |v| <= max_speed and
    |v - velocity| <= max_accel * dt. When the intersection is empty,
    constraints are dropped one at a time in increasing violation depth,
    reactive ones first and static ones last, until a solve succeeds.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = tuple(float(x) for x in agent.pref_velocity)
    c1 = tuple(float(x) for x in agent.velocity)
    balls = (((0.0, 0.0, 0.0), float(agent.max_speed)),
             (c1, float(agent.max_accel) * dt))
    planes = [(tuple(float(x) for x in hs.point),
               tuple(float(x) for x in hs.normal),
               hs.kind) for hs in halfspaces]
    v = _solve_planes(planes, g, balls)
    if v is not None:
        return np.array(v)

    v0 = _project_lens3(g, balls[0][0], balls[0][1], balls[1][0], balls[1][1])
    if v0 is None:
        v0 = _project_ball(g, c1, balls[1][1])
    rank = {"reactive": 0, "nonreactive": 1, "static": 2}
    depth = [max(0.0, -_d3(_s3(v0, p), n)) for (p, n, _) in planes]
    order = sorted(range(len(planes)),
                   key=lambda i: (rank.get(planes[i][2], 0), depth[i], i))
    dropped = set()
    for idx in order:
        dropped.add(idx)
        active = [pl for i, pl in enumerate(planes) if i not in dropped]
        v = _solve_planes(active, g, balls)
        if v is not None:
            return np.array(v)
    return np.array(v0)
