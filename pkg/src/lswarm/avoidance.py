"""Coverage-aware velocity selection on top of the half-space solver.

The expensive part of ranking avoidance velocities by retained coverage is
precomputed once: unit headings are swept over yaw/pitch deflections on a
1-degree grid and the ground-area overlap between each deflected sweep and
the straight sweep is tabulated at a reference altitude. At runtime the
table is filtered by the deviation the solver was forced to take, by the
resolution bound on altitude, and by the active constraints; the surviving
candidate with the largest precomputed overlap wins, falling back to the
solver's velocity when nothing qualifies.

Also here: the deadlock-free preferred-velocity rule (head for the closest
point of the current path segment when pushed off it), static-obstacle
constraints from nearest-surface-point queries, and constant-velocity
Kalman tracking with covariance-based radius inflation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .coverage import CameraModel, optimal_altitude
from .environment import UrbanModel
from .geom import align_x_to, closest_point_segment
from .orca import (
    AgentKinematics,
    HalfSpace,
    build_halfspaces,
    collision_recovery_halfspace,
    escape_vector,
    solve_velocity,
)

__all__ = [
    "LutEntry", "LookupTable", "build_lut", "verify_lut", "select_velocity",
    "static_halfspaces", "PathProgress", "preferred_velocity",
    "KalmanTracker", "kalman_step", "inflated_radius", "TrackerBank",
    "StepConfig", "agent_step",
]


# ---------------------------------------------------------------------------
# Lookup table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LutEntry:
    alpha: float        # yaw deflection, degrees
    beta: float         # pitch deflection, degrees
    v: np.ndarray       # unit velocity in the table frame
    deviation: float    # |unit x - v|, in [0, 2]
    overlap: float      # swept-area overlap with the straight sweep, m^2


class LookupTable:
    """Deflection-angle grid with per-row deviation and overlap columns."""

    def __init__(self, alphas, betas, vs, deviations, overlaps,
                 theta_deg, h_ref, tau, dt, step_deg, cruise, d_s_max):
        self.alphas = np.asarray(alphas, dtype=float)
        self.betas = np.asarray(betas, dtype=float)
        self.vs = np.asarray(vs, dtype=float)
        self.deviations = np.asarray(deviations, dtype=float)
        self.overlaps = np.asarray(overlaps, dtype=float)
        self.theta_deg = float(theta_deg)
        self.h_ref = float(h_ref)
        self.tau = float(tau)
        self.dt = float(dt)
        self.step_deg = float(step_deg)
        self.cruise = float(cruise)
        self.d_s_max = float(d_s_max)
        self._na = int(round(180.0 / self.step_deg)) + 1
        # deviation-sorted secondary index, plus a deterministic overlap rank
        self._dev_order = np.argsort(self.deviations, kind="stable")
        self._overlap_order = np.lexsort(
            (self.betas, self.alphas, self.deviations, -self.overlaps))

    def __len__(self):
        return len(self.alphas)

    def index_of(self, alpha, beta):
        ia = int(round((alpha + 90.0) / self.step_deg))
        ib = int(round((beta + 90.0) / self.step_deg))
        if not (0 <= ia < self._na and 0 <= ib < self._na):
            raise IndexError("deflection outside the [-90, 90] grid")
        return ia * self._na + ib

    def entry(self, alpha, beta) -> LutEntry:
        i = self.index_of(alpha, beta)
        return LutEntry(self.alphas[i], self.betas[i], self.vs[i].copy(),
                        float(self.deviations[i]), float(self.overlaps[i]))

    def nearest_index(self, direction):
        """Row whose deflection grid point is closest to a unit direction
        expressed in the table frame."""
        w = np.asarray(direction, dtype=float)
        alpha = math.degrees(math.asin(max(-1.0, min(1.0, w[1]))))
        ca = math.cos(math.radians(alpha))
        beta = math.degrees(math.atan2(-w[2], w[0])) if ca > 1e-9 else 0.0
        alpha = max(-90.0, min(90.0, alpha))
        beta = max(-90.0, min(90.0, beta))
        step = self.step_deg
        return self.index_of(round(alpha / step) * step, round(beta / step) * step)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("# coverage-overlap lookup table v1\n")
            fh.write(
                f"# theta_deg={self.theta_deg!r} h_ref={self.h_ref!r}"
                f" tau={self.tau!r} dt={self.dt!r} step_deg={self.step_deg!r}"
                f" cruise={self.cruise!r} d_s_max={self.d_s_max!r}"
                f" rows={len(self)}\n")
            fh.write("alpha,beta,vx,vy,vz,deviation,overlap\n")
            for i in range(len(self)):
                row = (self.alphas[i], self.betas[i], self.vs[i][0],
                       self.vs[i][1], self.vs[i][2], self.deviations[i],
                       self.overlaps[i])
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            magic = fh.readline()
            if not magic.startswith("# coverage-overlap lookup table"):
                raise ValueError("not a lookup table file")
            header = {}
            for token in fh.readline().lstrip("# ").split():
                key, _, val = token.partition("=")
                header[key] = float(val)
            cols = fh.readline().strip()
            if cols != "alpha,beta,vx,vy,vz,deviation,overlap":
                raise ValueError("unexpected column layout")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if data.shape[0] != int(header["rows"]) or data.shape[1] != 7:
            raise ValueError("row count does not match the header")
        return cls(
            alphas=data[:, 0], betas=data[:, 1], vs=data[:, 2:5],
            deviations=data[:, 5], overlaps=data[:, 6],
            theta_deg=header["theta_deg"], h_ref=header["h_ref"],
            tau=header["tau"], dt=header["dt"], step_deg=header["step_deg"],
            cruise=header["cruise"], d_s_max=header["d_s_max"],
        )

    def reference_camera(self):
        """Minimal camera carrying just the geometry the table depends on."""
        return CameraModel(
            theta_deg=self.theta_deg, sensor_w_mm=1.0, sensor_h_mm=1.0,
            focal_mm=1.0, image_w_px=1000, image_h_px=1000,
            gsd_max=1.0, d_s_max=self.d_s_max)


def _union_area_batch(x0, x1, y0, y1, empty):
    """Union area of axis-aligned rectangles, batched over the first axis."""
    big = 1e18
    y0m = np.where(empty, big, y0)
    y1m = np.where(empty, big, y1)
    ys = np.sort(np.concatenate([y0m, y1m], axis=1), axis=1)
    ylo = ys[:, :-1]
    yhi = ys[:, 1:]
    heights = np.clip(yhi - ylo, 0.0, None)
    heights[yhi > big / 2] = 0.0
    spans = ((y0m[:, None, :] <= ylo[:, :, None] + 1e-12)
             & (y1m[:, None, :] >= yhi[:, :, None] - 1e-12)
             & ~empty[:, None, :])
    xs0 = np.where(spans, x0[:, None, :], big)
    xs1 = np.where(spans, x1[:, None, :], big)
    order = np.argsort(xs0, axis=2, kind="stable")
    xs0 = np.take_along_axis(xs0, order, axis=2)
    xs1 = np.take_along_axis(xs1, order, axis=2)
    cum_end = np.maximum.accumulate(xs1, axis=2)
    prev_end = np.concatenate(
        [np.full(xs0.shape[:2] + (1,), -big), cum_end[:, :, :-1]], axis=2)
    seg = np.clip(xs1 - np.maximum(xs0, prev_end), 0.0, None)
    seg[xs0 > big / 2] = 0.0
    cov = seg.sum(axis=2)
    return (cov * heights).sum(axis=1)


def build_lut(cam: CameraModel, h_ref=5.0, tau=2.0, dt=None, step_deg=1.0,
              cruise=1.0) -> LookupTable:
    """Tabulate swept-area overlap for every yaw/pitch deflection pair.

    Deflected unit headings are v = rot_y(beta) @ rot_z(alpha) @ (1, 0, 0)
    on a [-90, 90] x [-90, 90] grid; overlap compares the union of square
    footprints swept at the reference altitude against the straight sweep
    over the same horizon. A 1-degree step yields 181 x 181 = 32,761 rows.

    Footprints grown by climbing above the reference altitude are counted
    only up to the reference side: coverage coarser than the reference
    resolution is not equivalent coverage, and without the cap every slow
    climb ties the straight sweep exactly instead of losing overlap.
    """
    if dt is None:
        dt = tau / 10.0
    if tau <= 0 or dt <= 0 or dt > tau:
        raise ValueError("need 0 < dt <= tau")
    n_steps = 180.0 / step_deg
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ValueError("step must divide 180 evenly")
    na = int(round(n_steps)) + 1
    angles = -90.0 + step_deg * np.arange(na)
    A, B = np.meshgrid(angles, angles, indexing="ij")
    alphas = A.ravel()
    betas = B.ravel()
    ar = np.radians(alphas)
    br = np.radians(betas)
    ca, sa = np.cos(ar), np.sin(ar)
    cb, sb = np.cos(br), np.sin(br)
    vs = np.column_stack([cb * ca, sa, -sb * ca])
    deviations = np.sqrt(np.clip(2.0 - 2.0 * vs[:, 0], 0.0, None))

    ts = np.arange(0.0, tau + dt * 0.5, dt)
    tan_fac = cam.tan_theta / math.sqrt(2.0)
    s0 = h_ref * tan_fac
    ax0, ax1 = -s0 / 2.0, cruise * tau + s0 / 2.0
    ay0, ay1 = -s0 / 2.0, s0 / 2.0

    n = len(alphas)
    overlaps = np.empty(n)
    chunk = 4096
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        vsl = vs[lo:hi] * cruise
        X = vsl[:, 0:1] * ts[None, :]
        Y = vsl[:, 1:2] * ts[None, :]
        H = h_ref + vsl[:, 2:3] * ts[None, :]
        ok = (H >= -1e-9) & (H <= cam.d_s_max + 1e-9)
        S = np.minimum(np.clip(H, 0.0, cam.d_s_max) * tan_fac, s0)
        cx0 = np.maximum(X - S / 2.0, ax0)
        cx1 = np.minimum(X + S / 2.0, ax1)
        cy0 = np.maximum(Y - S / 2.0, ay0)
        cy1 = np.minimum(Y + S / 2.0, ay1)
        empty = (~ok) | (cx1 <= cx0) | (cy1 <= cy0)
        overlaps[lo:hi] = _union_area_batch(cx0, cx1, cy0, cy1, empty)

    return LookupTable(
        alphas=alphas, betas=betas, vs=vs, deviations=deviations,
        overlaps=overlaps, theta_deg=cam.theta_deg, h_ref=h_ref, tau=tau,
        dt=dt, step_deg=step_deg, cruise=cruise, d_s_max=cam.d_s_max)


def lut_row_overlap(lut: LookupTable, alpha, beta, cam=None):
    """Recompute one row's overlap with the polygon-clipping oracle."""
    from .coverage import swept_footprints
    from .geom import intersection_area

    cam = cam or lut.reference_camera()
    i = lut.index_of(alpha, beta)
    s0 = lut.h_ref * cam.tan_theta / math.sqrt(2.0)
    straight = swept_footprints(
        np.array([lut.cruise, 0.0, 0.0]), lut.h_ref, lut.tau, lut.dt, cam)
    deflected = swept_footprints(lut.vs[i] * lut.cruise, lut.h_ref, lut.tau, lut.dt, cam)
    for fp in deflected.footprints:
        fp.side = min(fp.side, s0)  # same reference-side cap as the builder
    a = straight.valid_polys()
    b = deflected.valid_polys()
    if not a or not b:
        return 0.0
    return intersection_area(a, b)


def verify_lut(lut: LookupTable, samples=50, seed=0, rel_tol=1e-6):
    """Recompute `samples` random rows; return a list of mismatch messages."""
    rng = np.random.default_rng(seed)
    problems = []
    if len(lut) != lut._na * lut._na:
        problems.append(f"expected {lut._na ** 2} rows, found {len(lut)}")
        return problems
    cam = lut.reference_camera()
    idx = rng.integers(0, len(lut), size=samples)
    for i in idx:
        want = lut_row_overlap(lut, lut.alphas[i], lut.betas[i], cam)
        got = lut.overlaps[i]
        scale = max(abs(want), 1e-12)
        if abs(got - want) / scale > rel_tol:
            problems.append(
                f"row ({lut.alphas[i]:g}, {lut.betas[i]:g}):"
                f" stored {got!r} recomputed {want!r}")
    return problems


def select_velocity(lut: LookupTable, v_pref, v_orca, halfspaces,
                    agent: AgentKinematics, cam: CameraModel, dt,
                    eps_sel=None, min_altitude=0.0, candidate_cap=512,
                    collect=None):
    """Best-coverage velocity at least as deviant as the solver's answer.

    Candidates must deviate from the preferred velocity by at least the
    solver's deviation plus a margin (anything closer is infeasible by
    convexity), keep the ground sampling distance within bounds over the
    table horizon, stay above the altitude floor, and satisfy every given
    half-space. The row nearest the solver's own heading always joins the
    ranked list, so the highest-overlap survivor scores at least what the
    solver's direction would. The published velocity steers from the
    solver's answer toward the winner as far as the acceleration ball
    allows this step; both endpoints satisfy the half-spaces, so every
    point between them does too. With no qualifying candidate the solver's
    velocity is returned unchanged.
    """
    v_pref = np.asarray(v_pref, dtype=float)
    v_orca = np.asarray(v_orca, dtype=float)
    cruise = float(np.linalg.norm(v_pref))
    if collect is not None:
        collect["fallback"] = True
    if cruise <= 1e-9 or cruise > agent.max_speed + 1e-9:
        return v_orca.copy()
    delta = float(np.linalg.norm(v_pref - v_orca))
    if delta <= 1e-9:
        return v_orca.copy()
    eps = 0.05 * cruise if eps_sel is None else eps_sel
    thresh = (delta + eps) / cruise
    if thresh > 2.0:
        return v_orca.copy()

    rot = align_x_to(v_pref)
    order = lut._overlap_order
    admissible = np.flatnonzero(lut.deviations[order] >= thresh)
    rows = order[admissible[:candidate_cap]]
    orca_speed = float(np.linalg.norm(v_orca))
    if orca_speed > 1e-9:
        # the row nearest the solver's heading always competes, so any win
        # scores at least what the solver's own direction would
        nearest = lut.nearest_index(rot.T @ (v_orca / orca_speed))
        if nearest not in rows:
            rows = np.append(rows, nearest)
            rows = rows[np.argsort(-lut.overlaps[rows], kind="stable")]
    if len(rows) == 0:
        return v_orca.copy()

    v_cand = (lut.vs[rows] @ rot.T) * cruise

    h = float(agent.position[2])
    h_cap = optimal_altitude(cam)
    vz = v_cand[:, 2]
    vz_max = (h_cap - h) / lut.tau          # horizon climb-rate bound
    vz_min = (min_altitude - h) / lut.tau   # horizon floor bound
    feasible = (vz <= max(vz_max, 0.0) + 1e-9) & (vz >= min(vz_min, 0.0) - 1e-9)

    if halfspaces:
        pts = np.array([hs.point for hs in halfspaces])
        nrm = np.array([hs.normal for hs in halfspaces])
        offs = np.einsum("ij,ij->i", pts, nrm)
        feasible &= np.all(v_cand @ nrm.T - offs[None, :] >= -1e-9, axis=1)

    hits = np.flatnonzero(feasible)
    if len(hits) == 0:
        return v_orca.copy()
    best = rows[hits[0]]

    # steer toward the winning candidate as far as the acceleration ball
    # allows; the straight segment from v_orca stays inside every half-space
    # and the speed ball (convexity), and the altitude-rate bounds put a
    # floor under the blend when the solver end violates them
    cand = v_cand[hits[0]]
    d = cand - v_orca
    dd = float(np.dot(d, d))
    if dd <= 1e-18:
        lam = 1.0
    else:
        e = v_orca - agent.velocity
        reach = agent.max_accel * dt
        b = float(np.dot(e, d))
        c = float(np.dot(e, e)) - reach * reach
        disc = max(b * b - dd * c, 0.0)
        lam = min(1.0, max(0.0, (-b + math.sqrt(disc)) / dd))
        lam_lo = 0.0
        dz = cand[2] - v_orca[2]
        if v_orca[2] > vz_max and dz < -1e-12:
            lam_lo = max(lam_lo, (v_orca[2] - vz_max) / -dz)
        if v_orca[2] < vz_min and dz > 1e-12:
            lam_lo = max(lam_lo, (vz_min - v_orca[2]) / dz)
        if lam <= 1e-9 or lam + 1e-12 < lam_lo:
            return v_orca.copy()
    out = v_orca + lam * d
    if collect is not None:
        collect.update({
            "fallback": False,
            "alpha": float(lut.alphas[best]),
            "beta": float(lut.betas[best]),
            "overlap": float(lut.overlaps[best]),
            "target": cand.copy(),
            "lam": lam,
            "velocity": out.copy(),
        })
    return out


# ---------------------------------------------------------------------------
# Static obstacles and path following
# ---------------------------------------------------------------------------

def static_halfspaces(agent: AgentKinematics, model: UrbanModel, eps,
                      sense_range, tau, v_opt_mode="current", dt=0.05,
                      max_points=1):
    """Constraints against nearby building surfaces.

    The closest surface point of each of the `max_points` nearest buildings
    in range becomes a point obstacle of radius eps; the combined radius is
    the agent radius plus eps and the agent takes the full shift.
    """
    if eps <= 0:
        raise ValueError("point-obstacle radius must be positive")
    lo, hi = model.building_arrays()
    if len(lo) == 0:
        return []
    p = agent.position
    q = np.minimum(np.maximum(p, lo), hi)
    d = np.linalg.norm(q - p, axis=1)
    order = np.argsort(d, kind="stable")[:max_points]
    v_opt = agent.pref_velocity if v_opt_mode == "preferred" else agent.velocity
    out = []
    combined = agent.radius + eps
    for i in order:
        if d[i] > sense_range:
            break
        p_rel = q[i] - p
        if d[i] <= combined:
            out.append(collision_recovery_halfspace(
                agent, q[i], np.zeros(3), combined, dt,
                responsibility=1.0, kind="static", v_opt_mode=v_opt_mode))
            continue
        u, n = escape_vector(v_opt, p_rel, combined, tau)
        out.append(HalfSpace(point=v_opt + u, normal=n, kind="static"))
    return out


class PathProgress:
    """Waypoint bookkeeping along one agent's path."""

    def __init__(self, waypoints, arrival_tol=0.3, path_tol=0.25):
        wps = np.asarray(waypoints, dtype=float)
        if wps.ndim != 2 or wps.shape[1] != 3 or wps.shape[0] < 2:
            raise ValueError("need at least two 3-D waypoints")
        self.waypoints = wps
        self.arrival_tol = arrival_tol
        self.path_tol = path_tol
        self.index = 0  # current segment start

    @property
    def wp_prev(self):
        return self.waypoints[self.index]

    @property
    def wp_next(self):
        return self.waypoints[min(self.index + 1, len(self.waypoints) - 1)]

    @property
    def done(self):
        return self.index >= len(self.waypoints) - 1

    def advance(self, position):
        while not self.done and \
                np.linalg.norm(position - self.waypoints[self.index + 1]) <= self.arrival_tol:
            self.index += 1

    def on_path(self, position):
        cp = closest_point_segment(position, self.wp_prev, self.wp_next)
        return float(np.linalg.norm(position - cp)) <= self.path_tol

    def goal(self):
        return self.waypoints[-1]


def preferred_velocity(agent: AgentKinematics, prog: PathProgress, cruise):
    """Goal-directed velocity: toward the next waypoint while on the path,
    toward the closest point of the current segment once pushed off it."""
    if cruise <= 0:
        raise ValueError("cruise speed must be positive")
    p = agent.position
    prog.advance(p)
    if prog.done:
        d = prog.goal() - p
        dist = float(np.linalg.norm(d))
        if dist <= prog.arrival_tol:
            return np.zeros(3)
        return d / dist * min(cruise, dist)
    if prog.on_path(p):
        target = prog.wp_next
    else:
        target = closest_point_segment(p, prog.wp_prev, prog.wp_next)
    d = target - p
    dist = float(np.linalg.norm(d))
    if dist <= 1e-9:
        d = prog.wp_next - p
        dist = float(np.linalg.norm(d))
        if dist <= 1e-9:
            return np.zeros(3)
    return d / dist * cruise


# ---------------------------------------------------------------------------
# Uncertainty handling
# ---------------------------------------------------------------------------

def _cv_transition(dt):
    f = np.eye(6)
    f[0, 3] = f[1, 4] = f[2, 5] = dt
    return f


def _process_noise(q_pos, q_vel, dt):
    return np.diag([q_pos * dt] * 3 + [q_vel * dt] * 3)


def _measurement_noise(r_pos, r_vel):
    return np.diag([r_pos ** 2] * 3 + [r_vel ** 2] * 3)


class KalmanTracker:
    """Constant-velocity filter over a 6-vector (position, velocity) state."""

    def __init__(self, mean, cov=None, q_pos=0.05, q_vel=0.05,
                 r_pos=0.0, r_vel=0.0):
        self.mean = np.asarray(mean, dtype=float).copy()
        self.q_pos = q_pos
        self.q_vel = q_vel
        self.r_pos = r_pos
        self.r_vel = r_vel
        if cov is None:
            cov = _measurement_noise(r_pos, r_vel)
        self.cov = np.asarray(cov, dtype=float).copy()

    @classmethod
    def from_measurement(cls, z, **kwargs):
        return cls(mean=z, cov=None, **kwargs)

    def copy(self):
        return KalmanTracker(self.mean, self.cov, self.q_pos, self.q_vel,
                             self.r_pos, self.r_vel)

    def predict(self, dt):
        f = _cv_transition(dt)
        self.mean = f @ self.mean
        self.cov = f @ self.cov @ f.T + _process_noise(self.q_pos, self.q_vel, dt)
        self.cov = 0.5 * (self.cov + self.cov.T)

    def update(self, z):
        z = np.asarray(z, dtype=float)
        r = _measurement_noise(self.r_pos, self.r_vel)
        s = self.cov + r
        try:
            gain = np.linalg.solve(s.T, self.cov.T).T
        except np.linalg.LinAlgError:
            gain = self.cov @ np.linalg.pinv(s)
        self.mean = self.mean + gain @ (z - self.mean)
        ikh = np.eye(6) - gain
        self.cov = ikh @ self.cov @ ikh.T + gain @ r @ gain.T
        self.cov = 0.5 * (self.cov + self.cov.T)

    def position_gain(self):
        """Diagonal of the position block of the last-computed gain proxy."""
        r = _measurement_noise(self.r_pos, self.r_vel)
        s = self.cov + r
        return self.cov @ np.linalg.pinv(s)


def kalman_step(tracker: KalmanTracker, measurement, dt) -> KalmanTracker:
    """Predict then update with a (position, velocity) measurement."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = tracker.copy()
    out.predict(dt)
    if measurement is not None:
        out.update(np.asarray(measurement, dtype=float))
    return out


def inflated_radius(radius, cov):
    """Radius grown by the sqrt of the largest position-covariance eigenvalue."""
    cov = np.asarray(cov, dtype=float)
    pos_block = cov[:3, :3]
    lam = float(np.linalg.eigvalsh(0.5 * (pos_block + pos_block.T))[-1])
    return radius + math.sqrt(max(lam, 0.0))


class TrackerBank:
    """Per-observer bank of constant-velocity trackers.

    Covariance (hence gain and radius inflation) depends only on tracker
    age, never on the data, so the whole schedule is precomputed and the
    per-entity state shrinks to a mean vector and an age.
    """

    def __init__(self, dt, q_pos=0.05, q_vel=0.05, r_pos=0.0, r_vel=0.0,
                 max_age=200):
        self.dt = dt
        self.f = _cv_transition(dt)
        r = _measurement_noise(r_pos, r_vel)
        q = _process_noise(q_pos, q_vel, dt)
        gains = [np.zeros((6, 6))]
        covs = [r.copy()]
        inflations = [inflated_radius(0.0, r)]
        cov = r.copy()
        for _ in range(1, max_age + 1):
            pred = self.f @ cov @ self.f.T + q
            s = pred + r
            try:
                gain = np.linalg.solve(s.T, pred.T).T
            except np.linalg.LinAlgError:
                gain = pred @ np.linalg.pinv(s)
            ikh = np.eye(6) - gain
            new_cov = ikh @ pred @ ikh.T + gain @ r @ gain.T
            new_cov = 0.5 * (new_cov + new_cov.T)
            gains.append(gain)
            covs.append(new_cov)
            inflations.append(inflated_radius(0.0, new_cov))
            if np.abs(new_cov - cov).max() < 1e-12:
                break
            cov = new_cov
        self.gains = gains
        self.covs = covs
        self.inflations = inflations
        self.entries = {}  # id -> [mean (6,), age]

    def observe(self, entity_id, z):
        z = np.asarray(z, dtype=float)
        entry = self.entries.get(entity_id)
        if entry is None:
            self.entries[entity_id] = [z.copy(), 0]
            return
        mean, age = entry
        age = min(age + 1, len(self.gains) - 1)
        pred = self.f @ mean
        entry[0] = pred + self.gains[age] @ (z - pred)
        entry[1] = age

    def drop_absent(self, present_ids):
        for key in list(self.entries):
            if key not in present_ids:
                del self.entries[key]

    def estimate(self, entity_id):
        mean, age = self.entries[entity_id]
        return mean, self.inflations[age]

    def covariance(self, entity_id):
        return self.covs[self.entries[entity_id][1]]


# ---------------------------------------------------------------------------
# Per-agent step
# ---------------------------------------------------------------------------

@dataclass
class StepConfig:
    dt: float = 0.05
    tau: float = 2.0
    mode: str = "lswarm"            # lswarm | orca
    cruise: float = 1.0
    sense_range: float = 10.0
    static_eps: float = 0.1
    static_points: int = 3
    eps_sel: float = None
    min_altitude: float = 0.5
    v_opt_mode: str = "current"    # current | preferred
    candidate_cap: int = 512
    progress: PathProgress = None
    collect: dict = None


def _entity_arrays(entities):
    if entities is None:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    if isinstance(entities, tuple) and len(entities) == 3:
        pos, vel, rad = entities
        return (np.asarray(pos, dtype=float).reshape(-1, 3),
                np.asarray(vel, dtype=float).reshape(-1, 3),
                np.asarray(rad, dtype=float).reshape(-1))
    pos = np.array([e[0] for e in entities], dtype=float).reshape(-1, 3)
    vel = np.array([e[1] for e in entities], dtype=float).reshape(-1, 3)
    rad = np.array([e[2] for e in entities], dtype=float).reshape(-1)
    return pos, vel, rad


def agent_step(agent: AgentKinematics, neighbors, obstacles, model, lut, cam,
               cfg: StepConfig):
    """One decision cycle: constraints, solve, coverage-aware selection.

    `neighbors` are reciprocating swarm members (half responsibility),
    `obstacles` non-reactive movers (full responsibility); both are
    (positions, velocities, radii) with radii already inflated for
    uncertainty. Static constraints and table-based selection only run in
    lswarm mode. Returns the velocity to publish.
    """
    if cfg.progress is not None:
        agent.pref_velocity = preferred_velocity(agent, cfg.progress, cfg.cruise)

    n_pos, n_vel, n_rad = _entity_arrays(neighbors)
    o_pos, o_vel, o_rad = _entity_arrays(obstacles)
    k_n, k_o = len(n_pos), len(o_pos)
    planes = []
    if k_n + k_o:
        pos = np.vstack([n_pos, o_pos])
        vel = np.vstack([n_vel, o_vel])
        r_sums = np.concatenate([n_rad, o_rad]) + agent.radius
        resp = np.concatenate([np.full(k_n, 0.5), np.full(k_o, 1.0)])
        kinds = ["reactive"] * k_n + ["nonreactive"] * k_o
        planes = build_halfspaces(agent, pos, vel, r_sums, resp, kinds,
                                  cfg.tau, cfg.dt, cfg.v_opt_mode)
    if cfg.mode == "lswarm" and model is not None:
        planes.extend(static_halfspaces(
            agent, model, cfg.static_eps, cfg.sense_range, cfg.tau,
            cfg.v_opt_mode, cfg.dt, cfg.static_points))

    v_orca = solve_velocity(planes, agent, cfg.dt)
    if cfg.mode != "lswarm" or lut is None or cam is None:
        return v_orca
    satisfied = [hs for hs in planes if hs.permits(v_orca, 1e-6)]
    return select_velocity(
        lut, agent.pref_velocity, v_orca, satisfied, agent, cam, cfg.dt,
        eps_sel=cfg.eps_sel, min_altitude=cfg.min_altitude,
        candidate_cap=cfg.candidate_cap, collect=cfg.collect)
