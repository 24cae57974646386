"""Coverage-constrained local collision avoidance for aerial swarms.

A deterministic multi-agent simulation library: serpentine global coverage
planning over 3-D urban scenes, 3-D reciprocal velocity-obstacle avoidance
with static-obstacle and acceleration constraints, a precomputed
coverage-overlap lookup table for velocity selection, and the metrics to
compare plain avoidance against the coverage-aware variant.
"""

from .geom import (
    Box3,
    align_x_to,
    closest_point_box,
    closest_point_segment,
    intersection_area,
    raster_area,
    rot_y,
    rot_z,
)
from .environment import OccupancyGrid, UrbanModel, build_occupancy, load_model, nearest_obstacle_point
from .coverage import (
    CameraModel,
    CoverageTrace,
    Footprint,
    footprint_side,
    gsd,
    optimal_altitude,
    overlap_ratio,
    swept_footprints,
)
from .lawnmower import PlanConfig, WaypointPath, plan, verify_coverage
from .orca import (
    AgentKinematics,
    HalfSpace,
    escape_vector,
    halfspace_nonreactive,
    halfspace_reactive,
    solve_velocity,
    vo_contains,
)
from .avoidance import (
    KalmanTracker,
    LookupTable,
    LutEntry,
    PathProgress,
    agent_step,
    build_lut,
    inflated_radius,
    kalman_step,
    preferred_velocity,
    select_velocity,
    static_halfspaces,
)
from .sim import DynamicObstacle, MetricsRecord, Scenario, neighbor_query, run, spawn_pattern

__version__ = "0.1.0"
