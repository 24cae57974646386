"""Deterministic time-stepped swarm engine, obstacle patterns and metrics.

Every step snapshots the world, computes each agent's next velocity from
that snapshot (optionally on a worker pool; results are identical either
way), then integrates positions with explicit Euler. All randomness flows
from the scenario seed, so a fixed (scenario, seed) pair reproduces traces
byte for byte.
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .avoidance import PathProgress, StepConfig, TrackerBank, agent_step, build_lut
from .coverage import (
    CameraModel,
    CoverageTrace,
    Footprint,
    footprint_side,
    optimal_altitude,
    overlap_ratio,
)
from .environment import fixture_path, load_model
from .lawnmower import PlanConfig, WaypointPath, plan, verify_coverage
from .orca import AgentKinematics

__all__ = [
    "UnknownPattern", "DynamicObstacle", "SpawnArena", "spawn_pattern",
    "SpatialHash", "neighbor_query", "Scenario", "MetricsRecord", "Trace",
    "World", "prepare", "step", "run",
]


class UnknownPattern(ValueError):
    """Obstacle pattern name not recognised."""


@dataclass
class DynamicObstacle:
    """Scripted constant-velocity mover; never reacts to anything."""

    position: np.ndarray
    velocity: np.ndarray
    radius: float
    spawn_time: float = 0.0
    despawn_time: float = math.inf

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)

    def active(self, t):
        return self.spawn_time <= t < self.despawn_time


@dataclass
class SpawnArena:
    """Geometry the obstacle patterns aim at."""

    path_points: np.ndarray          # sampled points of the planned paths
    center: np.ndarray               # arena / path centroid
    sphere_radius: float             # spawn shell radius for all-directions
    line_start: np.ndarray = None    # left-to-right pattern geometry
    line_dir: np.ndarray = None
    line_length: float = 0.0
    cruise: float = 1.0
    altitude: float = 5.0
    z_offset: tuple = (-1.2, -0.4)
    min_lead: float = 2.0
    streams: int = 0
    stream_gap: float = 2.0
    descent_deg: float = 0.0
    from_above: bool = False
    intercept: bool = False
    paths: list = None               # waypoint polylines for timed targeting
    duration: float = 0.0


def _nominal_position(waypoints, cruise, t):
    """Where an unhindered agent sits on its polyline after t seconds."""
    remaining = cruise * max(t, 0.0)
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        seg = float(np.linalg.norm(b - a))
        if remaining <= seg:
            return a + (b - a) * (remaining / max(seg, 1e-12))
        remaining -= seg
    return waypoints[-1].copy()


def spawn_pattern(name, count, seed, arena: SpawnArena, speed, radius):
    """Build `count` obstacles for a named pattern, reproducibly from seed.

    Obstacles are drawn one at a time (stream parameters hash off the
    stream index alone), so the first k of a larger count equal the full
    set at count k.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0b57]))
    obstacles = []
    if name == "left-to-right":
        if arena.line_dir is None:
            raise ValueError("pattern needs line geometry")
        travel_t = arena.line_length / max(arena.cruise, 1e-9)
        side = np.array([-arena.line_dir[1], arena.line_dir[0], 0.0])
        phi = math.radians(arena.descent_deg)
        # crossing velocity stays perpendicular to the path axis; a nonzero
        # dive angle tilts it within the crossing plane
        vel = (-side * math.cos(phi) + np.array([0.0, 0.0, -math.sin(phi)])) * speed
        streams = arena.streams if arena.streams > 0 else count
        stream_params = {}
        for i in range(count):
            s = i % max(streams, 1)
            if s not in stream_params:
                srng = np.random.default_rng(
                    np.random.SeedSequence([int(seed), 0x57e4, s]))
                stream_params[s] = (
                    srng.uniform(arena.min_lead, 0.75 * travel_t),
                    srng.uniform(-0.5, 0.5),
                    srng.uniform(arena.z_offset[0], arena.z_offset[1]),
                )
            t0, dx, dz = stream_params[s]
            member = i // max(streams, 1)
            jx, jz = rng.uniform(-0.15, 0.15, size=2)
            t_hit = t0 + member * arena.stream_gap
            along = arena.cruise * t0 + dx + jx
            hit = arena.line_start + along * arena.line_dir
            hit = hit + np.array([0.0, 0.0, dz + jz * 0.5])
            start = hit - vel * t_hit
            obstacles.append(DynamicObstacle(start.copy(), vel.copy(), radius))
    elif name == "all-directions":
        pts = arena.path_points
        for _ in range(count):
            d = rng.normal(size=3)
            n = np.linalg.norm(d)
            d = d / n if n > 1e-9 else np.array([1.0, 0.0, 0.0])
            if arena.from_above:
                d[2] = abs(d[2])
            pos = arena.center + d * arena.sphere_radius
            if pos[2] < 0.5:  # keep spawns above ground
                d = d.copy()
                d[2] = abs(d[2])
                pos = arena.center + d * arena.sphere_radius
            if arena.intercept and arena.paths:
                # aim at the point of a random path where its agent will be
                # when the obstacle gets there (fixed-point on arrival time)
                wps = arena.paths[int(rng.integers(0, len(arena.paths)))]
                t_a = float(np.linalg.norm(_nominal_position(wps, arena.cruise, 0.0) - pos)) / speed
                for _ in range(4):
                    target = _nominal_position(wps, arena.cruise, t_a)
                    t_a = float(np.linalg.norm(target - pos)) / speed
                target = _nominal_position(wps, arena.cruise, t_a)
            else:
                target = pts[int(rng.integers(0, len(pts)))]
            aim = target - pos
            an = np.linalg.norm(aim)
            vel = aim / an * speed if an > 1e-9 else np.array([speed, 0.0, 0.0])
            obstacles.append(DynamicObstacle(pos, vel, radius))
    else:
        raise UnknownPattern(f"unknown obstacle pattern {name!r}")
    return obstacles


class SpatialHash:
    """Uniform grid over 3-D points; queries return closed-ball membership."""

    def __init__(self, points, cell):
        self.cell = float(cell)
        self.points = np.asarray(points, dtype=float)
        self.cells = {}
        for i, p in enumerate(self.points):
            key = (int(math.floor(p[0] / cell)),
                   int(math.floor(p[1] / cell)),
                   int(math.floor(p[2] / cell)))
            self.cells.setdefault(key, []).append(i)

    def query(self, p, radius):
        """Indices of points with |q - p| <= radius, ascending."""
        p = np.asarray(p, dtype=float)
        reach = int(math.ceil(radius / self.cell))
        cx = int(math.floor(p[0] / self.cell))
        cy = int(math.floor(p[1] / self.cell))
        cz = int(math.floor(p[2] / self.cell))
        found = []
        for ix in range(cx - reach, cx + reach + 1):
            for iy in range(cy - reach, cy + reach + 1):
                for iz in range(cz - reach, cz + reach + 1):
                    found.extend(self.cells.get((ix, iy, iz), ()))
        if not found:
            return np.zeros(0, dtype=int)
        idx = np.array(sorted(found), dtype=int)
        d = np.linalg.norm(self.points[idx] - p, axis=1)
        return idx[d <= radius]


# ---------------------------------------------------------------------------
# Scenario description
# ---------------------------------------------------------------------------

@dataclass
class AgentSpec:
    count: int = 1
    radius: float = 0.3
    cruise_speed: float = 1.0
    max_speed: float = 2.0
    max_accel: float = 4.0
    altitude: float = 5.0


@dataclass
class ObstacleSpec:
    count: int = 0
    pattern: str = "left-to-right"
    speed: float = 2.0
    radius: float = 0.35
    reactive: bool = False
    z_offset: tuple = (-1.2, -0.4)
    sphere_radius: float = 0.0  # 0 -> derived from the arena
    min_lead: float = 2.0
    streams: int = 0            # >0 groups crossers into that many corridors
    stream_gap: float = 2.0     # seconds between members of one stream
    descent_deg: float = 0.0    # crossing-plane dive angle below horizontal
    from_above: bool = False    # spawn shell restricted to the upper half
    intercept: bool = False     # time aim points to agents' nominal motion


@dataclass
class NoiseSpec:
    pos_std: float = 0.0
    vel_std: float = 0.0


@dataclass
class PathSpec:
    kind: str = "line"            # line | lawnmower
    length: float = 20.0
    lane_spacing: float = 4.0
    y_offset: float = 0.0
    clearance: float = 2.0
    row_factor: float = 1.0


@dataclass
class TuningSpec:
    sense_range: float = 10.0
    static_eps: float = 0.1
    static_points: int = 3
    eps_sel_factor: float = 0.05
    min_altitude: float = 0.5
    v_opt_mode: str = "current"
    candidate_cap: int = 512
    neighbor_range: float = 0.0   # 0 -> 2 * max_speed * tau
    neighbor_cap: int = 15
    arrival_tol: float = 0.3
    path_tol: float = 0.25
    q_pos: float = 0.05
    q_vel: float = 0.05
    metrics_cell: float = 0.0     # 0 -> reference footprint side / 24
    compute_overlap: bool = True
    lut_step_deg: float = 1.0


@dataclass
class Scenario:
    name: str = "scenario"
    mode: str = "lswarm"          # lswarm | orca
    seed: int = 0
    dt: float = 0.05
    tau: float = 2.0
    duration: float = 20.0
    model: str = None             # bundled fixture name, file path, or None
    camera: dict = field(default_factory=lambda: default_camera().to_dict())
    agents: AgentSpec = field(default_factory=AgentSpec)
    path: PathSpec = field(default_factory=PathSpec)
    obstacles: ObstacleSpec = field(default_factory=ObstacleSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    tuning: TuningSpec = field(default_factory=TuningSpec)
    lut_path: str = None

    def __post_init__(self):
        if self.dt <= 0 or self.dt > self.tau:
            raise ValueError("need 0 < dt <= tau")
        if self.mode not in ("lswarm", "orca"):
            raise ValueError("mode must be lswarm or orca")

    @classmethod
    def from_dict(cls, data):
        def build(spec_cls, key):
            raw = dict(data.get(key) or {})
            if "z_offset" in raw:
                raw["z_offset"] = tuple(raw["z_offset"])
            return spec_cls(**raw)

        return cls(
            name=data.get("name", "scenario"),
            mode=data.get("mode", "lswarm"),
            seed=int(data.get("seed", 0)),
            dt=float(data.get("dt", 0.05)),
            tau=float(data.get("tau", 2.0)),
            duration=float(data.get("duration", 20.0)),
            model=data.get("model"),
            camera=dict(data.get("camera") or default_camera().to_dict()),
            agents=build(AgentSpec, "agents"),
            path=build(PathSpec, "path"),
            obstacles=build(ObstacleSpec, "obstacles"),
            noise=build(NoiseSpec, "noise"),
            tuning=build(TuningSpec, "tuning"),
            lut_path=data.get("lut_path"),
        )

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, mode=None, seed=None, obstacle_count=None,
                       agent_count=None, compute_overlap=None):
        sc = replace(self)
        if mode is not None:
            sc.mode = mode
        if seed is not None:
            sc.seed = int(seed)
        if obstacle_count is not None:
            sc.obstacles = replace(sc.obstacles, count=int(obstacle_count))
        if agent_count is not None:
            sc.agents = replace(sc.agents, count=int(agent_count))
        if compute_overlap is not None:
            sc.tuning = replace(sc.tuning, compute_overlap=compute_overlap)
        return sc


def default_camera():
    """Square-pixel camera whose footprint half-diagonal is 1 m at 5 m up."""
    return CameraModel(
        theta_deg=math.degrees(math.atan(0.4)),
        sensor_w_mm=4.8, sensor_h_mm=4.8, focal_mm=4.8,
        image_w_px=1000, image_h_px=1000,
        gsd_max=0.0065, d_s_max=40.0)


@dataclass
class MetricsRecord:
    mode: str
    seed: int
    n_steps: int
    overlap_ratio: float = None            # plain, mean over agents
    overlap_ratio_res: float = None        # resolution-constrained
    coverage_loss: float = None
    per_agent_overlap: list = field(default_factory=list)
    per_agent_overlap_res: list = field(default_factory=list)
    min_agent_separation: float = math.inf # min over pairs of (dist - r_i - r_j)
    agent_agent_collisions: int = 0
    agent_building_collisions: int = 0
    agent_obstacle_collisions: int = 0
    uncovered_fraction: float = None
    mean_step_ms: float = 0.0
    max_step_ms: float = 0.0

    def to_dict(self):
        out = dict(self.__dict__)
        if out["min_agent_separation"] == math.inf:
            out["min_agent_separation"] = None
        return out


class Trace:
    """Per-(step, entity) rows of the simulated world."""

    COLUMNS = "step,t,id,kind,x,y,z,vx,vy,vz,side,res_ok"

    def __init__(self):
        self.rows = []

    def add(self, step_i, t, ident, kind, pos, vel, side, res_ok):
        self.rows.append((step_i, float(t), ident, kind,
                          float(pos[0]), float(pos[1]), float(pos[2]),
                          float(vel[0]), float(vel[1]), float(vel[2]),
                          float(side), bool(res_ok)))

    def to_csv(self, path=None):
        lines = [self.COLUMNS]
        for r in self.rows:
            lines.append(
                f"{r[0]},{r[1]!r},{r[2]},{r[3]},{r[4]!r},{r[5]!r},{r[6]!r},"
                f"{r[7]!r},{r[8]!r},{r[9]!r},{r[10]!r},{int(r[11])}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------

_LUT_CACHE = {}


def _lut_for(cam: CameraModel, tau, step_deg, lut_path=None):
    if lut_path:
        from .avoidance import LookupTable
        return LookupTable.load(lut_path)
    key = (round(cam.theta_deg, 9), 5.0, round(tau, 9), round(step_deg, 9),
           round(cam.d_s_max, 9))
    if key not in _LUT_CACHE:
        _LUT_CACHE[key] = build_lut(cam, h_ref=5.0, tau=tau, step_deg=step_deg)
    return _LUT_CACHE[key]


class _Runtime:
    """Scenario resolved into concrete objects shared by every step."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.cam = CameraModel.from_dict(scenario.camera)
        self.model = None
        if scenario.model:
            src = scenario.model
            if not str(src).endswith(".json"):
                src = fixture_path(str(src))
            self.model = load_model(src)
        self.paths = self._build_paths()
        self.lut = None
        if scenario.mode == "lswarm":
            self.lut = _lut_for(self.cam, scenario.tau,
                                scenario.tuning.lut_step_deg, scenario.lut_path)
        t = scenario.tuning
        self.neighbor_range = t.neighbor_range or 2.0 * scenario.agents.max_speed * scenario.tau
        self.arena = self._build_arena()
        self.obstacles = spawn_pattern(
            scenario.obstacles.pattern, scenario.obstacles.count,
            scenario.seed, self.arena, scenario.obstacles.speed,
            scenario.obstacles.radius) if scenario.obstacles.count else []

    def _build_paths(self):
        sc = self.scenario
        if sc.path.kind == "line":
            alt = sc.agents.altitude
            paths = []
            for i in range(sc.agents.count):
                y = sc.path.y_offset + i * sc.path.lane_spacing
                paths.append(WaypointPath(agent_id=i, waypoints=np.array([
                    [0.0, y, alt], [sc.path.length, y, alt]])))
            return paths
        if sc.path.kind == "lawnmower":
            if self.model is None:
                raise ValueError("lawnmower paths need an urban model")
            cfg = PlanConfig(clearance=sc.path.clearance,
                             row_factor=sc.path.row_factor,
                             n_agents=sc.agents.count,
                             agent_radius=sc.agents.radius)
            return plan(self.model, self.cam, cfg)
        raise ValueError(f"unknown path kind {sc.path.kind!r}")

    def _build_arena(self):
        sc = self.scenario
        samples = []
        for p in self.paths:
            wps = p.waypoints
            for a, b in zip(wps[:-1], wps[1:]):
                seg = np.linalg.norm(b - a)
                n = max(2, int(seg / 2.0) + 1)
                for t in np.linspace(0.0, 1.0, n):
                    samples.append(a + t * (b - a))
        pts = np.array(samples) if samples else np.zeros((1, 3))
        center = pts.mean(axis=0)
        spread = float(np.linalg.norm(pts - center, axis=1).max()) if len(pts) else 0.0
        radius = sc.obstacles.sphere_radius or (spread + 10.0)
        first = self.paths[0].waypoints if self.paths else np.zeros((2, 3))
        line_dir = first[1] - first[0]
        ln = np.linalg.norm(line_dir)
        line_dir = line_dir / ln if ln > 1e-9 else np.array([1.0, 0.0, 0.0])
        return SpawnArena(
            path_points=pts, center=center, sphere_radius=radius,
            line_start=first[0].copy(), line_dir=line_dir,
            line_length=float(ln), cruise=sc.agents.cruise_speed,
            altitude=sc.agents.altitude,
            z_offset=sc.obstacles.z_offset, min_lead=sc.obstacles.min_lead,
            streams=sc.obstacles.streams, stream_gap=sc.obstacles.stream_gap,
            descent_deg=sc.obstacles.descent_deg,
            from_above=sc.obstacles.from_above,
            intercept=sc.obstacles.intercept,
            paths=[p.waypoints for p in self.paths], duration=sc.duration)


class World:
    """Mutable simulation state; read access is safe between steps."""

    def __init__(self, rt: _Runtime):
        sc = rt.scenario
        n = sc.agents.count
        self.t = 0.0
        self.step_index = 0
        self.apos = np.array([p.waypoints[0] for p in rt.paths], dtype=float)
        self.avel = np.zeros((n, 3))
        self.radii = np.full(n, sc.agents.radius)
        self.progress = [PathProgress(p.waypoints,
                                      arrival_tol=sc.tuning.arrival_tol,
                                      path_tol=sc.tuning.path_tol)
                         for p in rt.paths]
        self.obstacles = rt.obstacles
        self.banks = [TrackerBank(sc.dt, q_pos=sc.tuning.q_pos,
                                  q_vel=sc.tuning.q_vel,
                                  r_pos=sc.noise.pos_std,
                                  r_vel=sc.noise.vel_std)
                      for _ in range(n)]
        self.rng_noise = np.random.default_rng(
            np.random.SeedSequence([sc.seed, 0x4015e]))
        self.trace = Trace()
        self.footprints = [[] for _ in range(n)]  # (t, x, y, side, alt_ok, res_ok)
        self.selection_log = [[] for _ in range(n)]
        self.aa_contact = np.zeros((n, n), dtype=bool)
        self.ab_contact = np.zeros(n, dtype=bool)
        self.ao_contact = None
        self.metrics = MetricsRecord(mode=sc.mode, seed=sc.seed, n_steps=0)
        self.step_times = []


def prepare(scenario: Scenario):
    rt = _Runtime(scenario)
    return World(rt), rt


def neighbor_query(world: World, agent_index, radius, hash_cell=None):
    """Entities (other agents then obstacles) within `radius`, via the hash.

    Returns indices into the combined [agents + active obstacles] array.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = [world.apos]
    active = [o for o in world.obstacles if o.active(world.t)]
    if active:
        pts.append(np.array([o.position for o in active]))
    pts = np.vstack(pts)
    cell = hash_cell or max(radius, 1e-6)
    h = SpatialHash(pts, cell)
    idx = h.query(world.apos[agent_index], radius)
    return idx[idx != agent_index]


def _decide_agent(i, rt, world, snapshot, cfg_base):
    sc = rt.scenario
    apos, avel, obs_pos, obs_vel, obs_rad, obs_resp, est = snapshot
    n = len(apos)
    p = apos[i]

    ids = []
    all_pos = np.vstack([apos, obs_pos]) if len(obs_pos) else apos
    d = np.linalg.norm(all_pos - p, axis=1)
    order = np.argsort(d, kind="stable")
    for j in order:
        if j == i or d[j] > rt.neighbor_range:
            continue
        ids.append(int(j))
        if len(ids) >= sc.tuning.neighbor_cap:
            break

    bank = world.banks[i]
    present = set()
    for j in ids:
        bank.observe(j, est[i, j])
        present.add(j)
    bank.drop_absent(present)

    n_pos, n_vel, n_rad = [], [], []
    o_pos, o_vel, o_rad = [], [], []
    for j in ids:
        mean, inflation = bank.estimate(j)
        if j < n:
            n_pos.append(mean[:3]); n_vel.append(mean[3:])
            n_rad.append(world.radii[j] + inflation)
        else:
            k = j - n
            if obs_resp[k]:
                n_pos.append(mean[:3]); n_vel.append(mean[3:])
                n_rad.append(obs_rad[k] + inflation)
            else:
                o_pos.append(mean[:3]); o_vel.append(mean[3:])
                o_rad.append(obs_rad[k] + inflation)

    agent = AgentKinematics(
        position=p.copy(), velocity=avel[i].copy(), radius=sc.agents.radius,
        pref_velocity=np.zeros(3), max_speed=sc.agents.max_speed,
        max_accel=sc.agents.max_accel)
    collect = {}
    cfg = replace(cfg_base, progress=world.progress[i], collect=collect)
    neighbors = (np.array(n_pos).reshape(-1, 3), np.array(n_vel).reshape(-1, 3),
                 np.array(n_rad)) if n_pos else None
    obstacles = (np.array(o_pos).reshape(-1, 3), np.array(o_vel).reshape(-1, 3),
                 np.array(o_rad)) if o_pos else None
    v_new = agent_step(agent, neighbors, obstacles, rt.model, rt.lut, rt.cam, cfg)
    return v_new, collect


def step(world: World, rt: _Runtime, pool=None):
    """Advance the world by one tick of the scenario's dt."""
    sc = rt.scenario
    n = len(world.apos)
    t = world.t
    active = [o for o in world.obstacles if o.active(t)]
    obs_pos = np.array([o.position for o in active]).reshape(-1, 3)
    obs_vel = np.array([o.velocity for o in active]).reshape(-1, 3)
    obs_rad = np.array([o.radius for o in active])
    obs_resp = np.array([sc.obstacles.reactive] * len(active), dtype=bool)

    ents = np.hstack([np.vstack([world.apos, obs_pos]),
                      np.vstack([world.avel, obs_vel])])  # (n+m, 6)
    m = len(ents)
    est = np.broadcast_to(ents, (n, m, 6)).copy()
    if sc.noise.pos_std > 0 or sc.noise.vel_std > 0:
        noise = world.rng_noise.standard_normal((n, m, 6))
        noise[:, :, :3] *= sc.noise.pos_std
        noise[:, :, 3:] *= sc.noise.vel_std
        est += noise
        for i in range(n):
            est[i, i] = ents[i]  # own state observed exactly

    cfg_base = StepConfig(
        dt=sc.dt, tau=sc.tau, mode=sc.mode, cruise=sc.agents.cruise_speed,
        sense_range=sc.tuning.sense_range, static_eps=sc.tuning.static_eps,
        static_points=sc.tuning.static_points,
        eps_sel=sc.tuning.eps_sel_factor * sc.agents.cruise_speed,
        min_altitude=sc.tuning.min_altitude,
        v_opt_mode=sc.tuning.v_opt_mode,
        candidate_cap=sc.tuning.candidate_cap)

    snapshot = (world.apos.copy(), world.avel.copy(), obs_pos, obs_vel,
                obs_rad, obs_resp, est)

    t0 = time.perf_counter()
    if pool is not None:
        results = list(pool.map(
            lambda i: _decide_agent(i, rt, world, snapshot, cfg_base), range(n)))
    else:
        results = [_decide_agent(i, rt, world, snapshot, cfg_base) for i in range(n)]
    world.step_times.append((time.perf_counter() - t0) * 1000.0)

    new_vel = np.array([r[0] for r in results]).reshape(n, 3)
    for i, (_, collect) in enumerate(results):
        if collect and not collect.get("fallback", True):
            world.selection_log[i].append(
                (t, float(world.apos[i][2]), collect["velocity"]))

    # record the state that produced these velocities, then integrate
    h_cap = optimal_altitude(rt.cam)
    for i in range(n):
        z = float(world.apos[i][2])
        alt_ok = 0.0 <= z <= rt.cam.d_s_max
        side = footprint_side(min(max(z, 0.0), rt.cam.d_s_max), rt.cam)
        res_ok = alt_ok and z <= h_cap + 1e-9
        world.trace.add(world.step_index, t, f"a{i}", "agent",
                        world.apos[i], new_vel[i], side, res_ok)
        world.footprints[i].append(
            (t, float(world.apos[i][0]), float(world.apos[i][1]),
             side, alt_ok, res_ok))
    for k, o in enumerate(world.obstacles):
        if o.active(t):
            world.trace.add(world.step_index, t, f"o{k}", "obstacle",
                            o.position, o.velocity, 0.0, True)

    world.apos = world.apos + new_vel * sc.dt
    world.avel = new_vel
    for o in world.obstacles:
        if o.active(t):
            o.position = o.position + o.velocity * sc.dt

    moved_obs = np.array([o.position for o in active]).reshape(-1, 3)
    _account_collisions(world, rt, moved_obs, obs_rad, active)
    world.t = t + sc.dt
    world.step_index += 1
    world.metrics.n_steps = world.step_index


def _account_collisions(world: World, rt, obs_pos, obs_rad, active):
    sc = rt.scenario
    n = len(world.apos)
    if n > 1:
        diff = world.apos[:, None, :] - world.apos[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        r_sum = world.radii[:, None] + world.radii[None, :]
        sep = dist - r_sum
        iu = np.triu_indices(n, k=1)
        world.metrics.min_agent_separation = min(
            world.metrics.min_agent_separation, float(sep[iu].min()))
        contact = dist < r_sum
        np.fill_diagonal(contact, False)
        new = contact & ~world.aa_contact
        world.metrics.agent_agent_collisions += int(np.count_nonzero(new[iu]))
        world.aa_contact = contact
    if rt.model is not None and rt.model.buildings:
        lo, hi = rt.model.building_arrays()
        q = np.minimum(np.maximum(world.apos[:, None, :], lo[None]), hi[None])
        d = np.linalg.norm(q - world.apos[:, None, :], axis=2).min(axis=1)
        contact = d < world.radii
        new = contact & ~world.ab_contact
        world.metrics.agent_building_collisions += int(np.count_nonzero(new))
        world.ab_contact = contact
    if len(active):
        d = np.linalg.norm(world.apos[:, None, :] - obs_pos[None], axis=2)
        contact = d < (world.radii[:, None] + obs_rad[None, :])
        if world.ao_contact is None or world.ao_contact.shape != contact.shape:
            world.ao_contact = np.zeros_like(contact)
        new = contact & ~world.ao_contact
        world.metrics.agent_obstacle_collisions += int(np.count_nonzero(new))
        world.ao_contact = contact


def _agent_trace(world: World, i, resolution_constrained):
    trace = CoverageTrace()
    for (t, x, y, side, alt_ok, res_ok) in world.footprints[i]:
        ok = alt_ok and (res_ok or not resolution_constrained)
        trace.append(Footprint(cx=x, cy=y, side=side, t=t, valid=ok))
    return trace


def run(scenario: Scenario, workers=1, return_world=False):
    """Simulate the scenario; returns (trace, metrics).

    When overlap metrics are enabled, the preferred trace comes from the
    same scenario stripped of obstacles (identical execution when the
    scenario already has none). With return_world=True the final world
    (selection logs, footprints) is appended to the result.
    """
    world, rt = prepare(scenario)
    n_steps = max(1, int(round(scenario.duration / scenario.dt)))
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for _ in range(n_steps):
            step(world, rt, pool)
    finally:
        if pool is not None:
            pool.shutdown()

    metrics = world.metrics
    metrics.mean_step_ms = float(np.mean(world.step_times))
    metrics.max_step_ms = float(np.max(world.step_times))

    if scenario.tuning.compute_overlap:
        if scenario.obstacles.count == 0:
            pref_world = world
        else:
            pref_world, pref_rt = prepare(
                scenario.with_overrides(obstacle_count=0, compute_overlap=False))
            pref_pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
            try:
                for _ in range(n_steps):
                    step(pref_world, pref_rt, pref_pool)
            finally:
                if pref_pool is not None:
                    pref_pool.shutdown()
        cell = scenario.tuning.metrics_cell or max(
            footprint_side(min(scenario.agents.altitude, rt.cam.d_s_max), rt.cam),
            0.2) / 24.0
        plain, res = [], []
        for i in range(scenario.agents.count):
            pref = _agent_trace(pref_world, i, resolution_constrained=False)
            plain.append(overlap_ratio(pref, _agent_trace(world, i, False), cell=cell))
            res.append(overlap_ratio(pref, _agent_trace(world, i, True), cell=cell))
        metrics.per_agent_overlap = plain
        metrics.per_agent_overlap_res = res
        metrics.overlap_ratio = float(np.mean(plain))
        metrics.overlap_ratio_res = float(np.mean(res))
        metrics.coverage_loss = 1.0 - metrics.overlap_ratio

    if rt.model is not None and rt.scenario.path.kind == "lawnmower":
        metrics.uncovered_fraction = verify_coverage(rt.paths, rt.model, rt.cam)

    if return_world:
        return world.trace, metrics, world
    return world.trace, metrics
