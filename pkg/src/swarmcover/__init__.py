"""Energy-aware multi-UAV coverage planning.

A receding-horizon planner that repeatedly assembles and solves a
mixed-integer linear model over a moving horizon for a small swarm of
multicopters: waypoint coverage with single-claim bookkeeping, geo-fence and
obstacle constraints with anti-tunneling coupling, pairwise separation, and a
battery model that sends low-charge vehicles home.  Includes a closed-loop
simulator, a scenario file format and a CLI.
"""

from .geometry import (
    AffineFace,
    ConvexRegion,
    DegenerateGeometryError,
    PolyApprox,
    convex_hull,
    make_cylinder_faces,
    make_sphere_faces,
    signed_distances,
)
from .milp import BigMError, LinExpr, MilpModel, ModelError, VarHandle
from .mission import MissionRules, OpTransition, PlanInfo, TransitChoice
from .ocp import (
    BuildError,
    GeoFence,
    Obstacle,
    OcpHandles,
    OpMode,
    ScenarioSnapshot,
    Target,
    UasAgent,
    Waypoint,
    WeightSet,
    build,
)
from .scenario import Scenario, ScenarioError, load_scenario, validate_scenario
from .sim import SimulationConfig, SimulationLog, run, save_logs, verify_log_invariants
from .solvers import MilpSolution, SolverError, solve
from .vehicle import (
    BatteryTelemetry,
    LimitViolation,
    LpvSegment,
    ParamsError,
    VehicleInput,
    VehicleParams,
    VehicleState,
    battery_telemetry,
    default_params,
    load_params,
    return_threshold,
    segment_for,
    step,
)

__version__ = "0.1.0"
