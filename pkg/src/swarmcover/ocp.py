"""Assembly of the per-iteration planning problem.

Given a scenario snapshot (agents with measured states, waypoints with their
coverage states, geo fence, obstacles, weights) this module builds one
mixed-integer linear model containing, per airborne agent: the discrete-time
dynamics pinned to the measured state, box and slack constraints, geo-fence
containment, obstacle exclusion with corner-cutting coupling for fixed
obstacles, pairwise separation, waypoint-coverage claims with the coverage
recursion, and (in transit/return modes) the target-distance epigraph.  The
objective is the sum of weighted effort slacks, weighted target distances and
weighted uncovered-waypoint states.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import vehicle as vh
from .geometry import ConvexRegion, PolyApprox, make_cylinder_faces, make_sphere_faces
from .milp import LinExpr, MilpModel, VarHandle, as_expr, dot, encode_hull_inside, \
    encode_hull_outside, encode_norm_lb, encode_norm_ub, M_BIG_DEFAULT
from .solvers import MilpSolution


class BuildError(ValueError):
    """The snapshot cannot be turned into a well-posed model."""


class OpMode(enum.IntEnum):
    COVERING = 0
    TRANSIT = 1
    RETURN = 2
    LANDED = 3


@dataclass
class Target:
    """Active target-distance dynamics of one agent."""

    position: np.ndarray
    weight: float
    waypoint_index: int | None = None   # set in transit mode; None for return

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)

    @property
    def relaxed_by_coverage(self) -> bool:
        return self.waypoint_index is not None


@dataclass
class UasAgent:
    agent_id: str
    params: vh.VehicleParams
    state: vh.VehicleState
    p_init: np.ndarray
    op_mode: OpMode = OpMode.COVERING
    target: Target | None = None

    def __post_init__(self):
        self.p_init = np.asarray(self.p_init, dtype=float).reshape(3)
        self.op_mode = OpMode(self.op_mode)

    @property
    def airborne(self) -> bool:
        return self.op_mode != OpMode.LANDED


@dataclass
class Waypoint:
    position: np.ndarray
    radius: float
    weight: float = 1.0
    coverage: int = 1           # 1 while a visit is still owed, 0 once covered

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.radius = float(self.radius)
        self.coverage = int(self.coverage)


@dataclass
class Obstacle:
    region: ConvexRegion
    clearance: float = 0.0          # extra keep-out margin around the hull
    velocity: np.ndarray | None = None

    def __post_init__(self):
        if self.velocity is not None:
            self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)

    @property
    def moving(self) -> bool:
        return self.velocity is not None and bool(np.any(self.velocity != 0.0))


@dataclass
class GeoFence:
    region: ConvexRegion
    margin: float = 0.0             # >0 inflates, <0 narrows the allowed set


@dataclass
class WeightSet:
    """Objective weights; effort weights are normalized by the component box
    limit and the airborne-agent count inside the builder."""

    input_effort: dict[str, float] = field(
        default_factory=lambda: {"lift": 0.1, "tau_x": 0.1, "tau_y": 0.1, "tau_z": 0.1}
    )
    state_effort: dict[str, float] = field(
        default_factory=lambda: {"wx": 0.1, "wy": 0.1, "wz": 0.1, "yaw": 0.1, "dod": 0.1}
    )
    target: float = 2.0
    coverage_scale: float = 1.0
    transit_selection: tuple[float, float, float] = (0.6, 0.2, 0.2)
    return_scale_floor: float = 0.05


@dataclass
class ScenarioSnapshot:
    horizon: int
    dt: float
    agents: list[UasAgent]
    waypoints: list[Waypoint]
    geo_fence: GeoFence
    obstacles: list[Obstacle]
    weights: WeightSet = field(default_factory=WeightSet)
    swarm_clearance: float = 0.4    # buffer added to the two vehicle radii
    h_physical: int = 8             # side count for separation/target shapes
    h_waypoint: int = 4             # side count for the waypoint sphere
    m_big: float = M_BIG_DEFAULT

    def airborne_agents(self) -> list[UasAgent]:
        return [a for a in self.agents if a.airborne]


# state components carrying effort slacks: label -> state index
_STATE_SLACK = {"wx": 9, "wy": 10, "wz": 11, "yaw": 8, "dod": 12}
_INPUT_SLACK = {"lift": 0, "tau_x": 1, "tau_y": 2, "tau_z": 3}


@dataclass
class OcpHandles:
    """Decision-variable handles of one built model, keyed by agent id."""

    horizon: int
    agent_ids: list[str]
    x: dict = field(default_factory=dict)              # id -> (N+1) x 14 handles
    u: dict = field(default_factory=dict)              # id -> N x 5 handles
    input_slack: dict = field(default_factory=dict)    # id -> {label: N handles}
    state_slack: dict = field(default_factory=dict)    # id -> {label: N handles}
    claim: dict = field(default_factory=dict)          # (w, id) -> N binaries
    coverage: dict = field(default_factory=dict)       # w -> (N+1) exprs/handles
    target_distance: dict = field(default_factory=dict)  # id -> N handles (n=1..N)
    obstacle_relax: dict = field(default_factory=dict)  # (id, o) -> [n][face]
    obstacle_keep: dict = field(default_factory=dict)   # (id, o) -> [n][face]
    separation_relax: dict = field(default_factory=dict)  # (id_i, id_j) -> [n][face]
    objective_parts: dict = field(default_factory=dict)   # name -> LinExpr

    def position(self, agent_id: str, n: int) -> list[VarHandle]:
        return self.x[agent_id][n][0:3]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

_PRECHECK_TOL = 1e-6


def _validate_snapshot(snap: ScenarioSnapshot) -> None:
    if snap.horizon < 2:
        raise BuildError(f"prediction horizon must be >= 2, got {snap.horizon}")
    if snap.dt <= 0:
        raise BuildError(f"step time must be positive, got {snap.dt}")
    agents = snap.airborne_agents()
    if not agents:
        raise BuildError("no airborne agent left to plan for")
    ids = [a.agent_id for a in agents]
    if len(set(ids)) != len(ids):
        raise BuildError("duplicate agent ids")
    for agent in agents:
        if abs(agent.params.dt - snap.dt) > 1e-9:
            raise BuildError(
                f"agent {agent.agent_id}: model step {agent.params.dt} differs "
                f"from scenario step {snap.dt}"
            )
        _check_initial_state(snap, agent)
        if agent.op_mode in (OpMode.TRANSIT, OpMode.RETURN) and agent.target is None:
            raise BuildError(
                f"agent {agent.agent_id} is in mode {agent.op_mode.name} without a target"
            )
    for i, a in enumerate(agents):
        for b in agents[i + 1:]:
            dmin = a.params.radius + b.params.radius + snap.swarm_clearance
            dist = float(np.linalg.norm(a.state.position - b.state.position))
            if dist < dmin - _PRECHECK_TOL:
                raise BuildError(
                    f"agents {a.agent_id}/{b.agent_id} start {dist:.3f} m apart, "
                    f"below the separation {dmin:.3f} m"
                )
    for w, wp in enumerate(snap.waypoints):
        if wp.radius <= 0:
            raise BuildError(f"waypoint {w} has nonpositive radius {wp.radius}")
        if wp.coverage not in (0, 1):
            raise BuildError(f"waypoint {w} has coverage state {wp.coverage}, not 0/1")


def _check_initial_state(snap: ScenarioSnapshot, agent: UasAgent) -> None:
    p0 = agent.state.position
    fence = snap.geo_fence
    d = fence.region.containment(p0)
    if d > fence.margin + _PRECHECK_TOL:
        raise BuildError(
            f"agent {agent.agent_id} starts {d:.3f} m relative to the geo fence "
            f"(allowed {fence.margin:.3f} m)"
        )
    for o, obstacle in enumerate(snap.obstacles):
        dmin = agent.params.radius + obstacle.clearance
        if obstacle.region.containment(p0) < dmin - _PRECHECK_TOL:
            raise BuildError(
                f"agent {agent.agent_id} starts inside the keep-out zone of obstacle {o}"
            )
    lims = agent.params.limits
    lo, hi = lims.state_box(agent.params.dod_cutoff)
    vec = agent.state.to_vector()
    for k in range(vh.STATE_DIM):
        if vec[k] < lo[k] - _PRECHECK_TOL or vec[k] > hi[k] + _PRECHECK_TOL:
            raise BuildError(
                f"agent {agent.agent_id}: initial state '{vh.STATE_LABELS[k]}' = "
                f"{vec[k]:.6g} violates [{lo[k]:.6g}, {hi[k]:.6g}]"
            )


# ---------------------------------------------------------------------------
# per-agent dynamics, boxes, slacks
# ---------------------------------------------------------------------------


def _position_bounds(snap: ScenarioSnapshot) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = snap.geo_fence.region.aabb()
    pad = abs(snap.geo_fence.margin) + 1.0
    return lo - pad, hi + pad


def _add_vehicle_block(model: MilpModel, handles: OcpHandles,
                       snap: ScenarioSnapshot, agent: UasAgent,
                       n_active: int) -> None:
    N = snap.horizon
    params = agent.params
    seg = vh.segment_for(params, agent.state.dod)
    lo_s, hi_s = params.limits.state_box(params.dod_cutoff)
    lo_u, hi_u = params.limits.input_box()
    pos_lo, pos_hi = _position_bounds(snap)
    lo_s = lo_s.copy()
    hi_s = hi_s.copy()
    lo_s[0:3], hi_s[0:3] = pos_lo, pos_hi

    aid = agent.agent_id
    xs = []
    x0 = agent.state.to_vector()
    for n in range(N + 1):
        row = []
        for k in range(vh.STATE_DIM):
            if n == 0:
                var = model.add_continuous(x0[k], x0[k], f"x_{aid}_{n}_{vh.STATE_LABELS[k]}")
            else:
                var = model.add_continuous(lo_s[k], hi_s[k], f"x_{aid}_{n}_{vh.STATE_LABELS[k]}")
            row.append(var)
        xs.append(row)
    us = []
    for n in range(N):
        us.append([
            model.add_continuous(lo_u[k], hi_u[k], f"u_{aid}_{n}_{vh.INPUT_LABELS[k]}")
            for k in range(vh.INPUT_DIM)
        ])
    handles.x[aid] = xs
    handles.u[aid] = us

    # dynamics x(n+1) = A x(n) + B u(n) + E, using the current charge segment
    for n in range(N):
        for r in range(vh.STATE_DIM):
            expr = LinExpr({xs[n + 1][r].index: -1.0}, seg.e_vec[r])
            for j in np.nonzero(np.abs(seg.a_mat[r]) > 1e-14)[0]:
                expr.add_term(xs[n][j], float(seg.a_mat[r, j]))
            for j in np.nonzero(np.abs(seg.b_mat[r]) > 1e-14)[0]:
                expr.add_term(us[n][j], float(seg.b_mat[r, j]))
            model.add_eq(expr, 0.0, f"dyn_{aid}_{n}_{vh.STATE_LABELS[r]}")

    # corrected thrust deviation tied linearly to lift and velocity
    tie = params.thrust_tie
    for n in range(N):
        expr = as_expr(us[n][vh.THRUST_DEV]) - tie.lift_coef * us[n][vh.LIFT]
        for ax in range(3):
            if tie.velocity_coef[ax] != 0.0:
                expr = expr - tie.velocity_coef[ax] * xs[n][3 + ax]
        model.add_eq(expr, 0.0, f"tie_{aid}_{n}")

    # optional planar speed cap beyond the per-axis boxes
    if params.limits.v_horizontal is not None:
        approx = make_cylinder_faces(snap.h_physical)
        for n in range(1, N + 1):
            encode_norm_ub(
                model, (xs[n][3], xs[n][4], 0.0), approx,
                params.limits.v_horizontal, name=f"vcap_{aid}_{n}",
            )

    # effort slacks and their weighted cost
    effort = handles.objective_parts.setdefault("effort", LinExpr())
    weights = snap.weights
    in_slacks: dict[str, list[VarHandle]] = {}
    for label, j in _INPUT_SLACK.items():
        w = weights.input_effort.get(label, 0.0)
        if w == 0.0:
            continue
        limit = max(abs(lo_u[j]), abs(hi_u[j]))
        coef = w / (limit * n_active) if limit > 0 else w / n_active
        slacks = []
        for n in range(N):
            s = model.add_continuous(0.0, limit, f"us_{aid}_{n}_{label}")
            model.add_le(as_expr(us[n][j]) - s, 0.0)
            model.add_le(-as_expr(us[n][j]) - s, 0.0)
            slacks.append(s)
            effort.add_term(s, coef)
        in_slacks[label] = slacks
    st_slacks: dict[str, list[VarHandle]] = {}
    for label, j in _STATE_SLACK.items():
        w = weights.state_effort.get(label, 0.0)
        if w == 0.0:
            continue
        limit = max(abs(lo_s[j]), abs(hi_s[j]))
        coef = w / (limit * n_active) if limit > 0 else w / n_active
        slacks = []
        for n in range(1, N + 1):
            s = model.add_continuous(0.0, limit, f"xs_{aid}_{n}_{label}")
            model.add_le(as_expr(xs[n][j]) - s, 0.0)
            model.add_le(-as_expr(xs[n][j]) - s, 0.0)
            slacks.append(s)
            effort.add_term(s, coef)
        st_slacks[label] = slacks
    handles.input_slack[aid] = in_slacks
    handles.state_slack[aid] = st_slacks


# ---------------------------------------------------------------------------
# safety constraints
# ---------------------------------------------------------------------------


def _add_geo_fence(model: MilpModel, handles: OcpHandles,
                   snap: ScenarioSnapshot) -> None:
    fence = snap.geo_fence
    for agent in snap.airborne_agents():
        for n in range(1, snap.horizon + 1):
            encode_hull_inside(
                model, handles.position(agent.agent_id, n), fence.region,
                fence.margin, name=f"fence_{agent.agent_id}_{n}",
            )


def add_corner_cutting(model: MilpModel, relax: list, name: str) -> list[list[VarHandle]]:
    """Couple consecutive-step obstacle-side binaries so that one separating
    face stays active across every step.

    ``relax[n]`` holds the per-face binaries of step n (entry 0 may be fixed
    0/1 integers for the measured state).  For each transition a keep binary
    ``c`` is added with ``b(n) + b(n+1) <= 2 c`` per face and ``sum_h c <=
    n_faces - 1``, and the keep binaries are returned as ``[n][face]``.
    """
    keeps: list[list[VarHandle]] = []
    n_faces = len(relax[0])
    for n in range(len(relax) - 1):
        row = []
        for h in range(n_faces):
            c = model.add_binary(f"{name}_keep{n}_{h}")
            expr = as_expr(relax[n][h]) + as_expr(relax[n + 1][h]) - 2.0 * c
            model.add_le(expr, 0.0, f"{name}_cc{n}_{h}")
            row.append(c)
        model.add_le(dot([1.0] * n_faces, row), n_faces - 1, f"{name}_cc{n}_card")
        keeps.append(row)
    return keeps


def _add_obstacles(model: MilpModel, handles: OcpHandles,
                   snap: ScenarioSnapshot) -> None:
    N, dt = snap.horizon, snap.dt
    for o, obstacle in enumerate(snap.obstacles):
        sweep = 0.0
        regions = [obstacle.region] * (N + 1)
        if obstacle.moving:
            v = obstacle.velocity
            sweep = float(np.linalg.norm(v)) * dt / 2.0
            regions = [obstacle.region.translate(v * (dt * n)) for n in range(N + 1)]
        for agent in snap.airborne_agents():
            aid = agent.agent_id
            keep_out = agent.params.radius + obstacle.clearance + sweep
            relax: list[list] = []
            # measured position: fold the step-0 side pattern into constants
            d0 = regions[0].signed_distances(agent.state.position)
            relax.append([0 if d >= keep_out else 1 for d in d0])
            for n in range(1, N + 1):
                row = encode_hull_outside(
                    model, handles.position(aid, n), regions[n], keep_out,
                    name=f"obs{o}_{aid}_{n}",
                )
                for b in row:
                    b.branch_priority = 1
                relax.append(row)
            handles.obstacle_relax[(aid, o)] = relax
            if not obstacle.moving:
                handles.obstacle_keep[(aid, o)] = add_corner_cutting(
                    model, relax, name=f"obs{o}_{aid}"
                )


def _add_separation(model: MilpModel, handles: OcpHandles,
                    snap: ScenarioSnapshot) -> None:
    agents = snap.airborne_agents()
    approx = make_cylinder_faces(snap.h_physical, closed=True)
    for i, a in enumerate(agents):
        for b in agents[i + 1:]:
            dmin = a.params.radius + b.params.radius + snap.swarm_clearance
            rows = []
            for n in range(1, snap.horizon + 1):
                pa = handles.position(a.agent_id, n)
                pb = handles.position(b.agent_id, n)
                vec = [as_expr(pa[k]) - pb[k] for k in range(3)]
                row = encode_norm_lb(
                    model, vec, approx, dmin,
                    name=f"sep_{a.agent_id}_{b.agent_id}_{n}",
                )
                for b_var in row:
                    b_var.branch_priority = 2
                rows.append(row)
            handles.separation_relax[(a.agent_id, b.agent_id)] = rows


# ---------------------------------------------------------------------------
# waypoint coverage
# ---------------------------------------------------------------------------


def _step_reach(params: vh.VehicleParams, seg: vh.LpvSegment) -> float:
    """Upper bound on per-step position displacement over the state/input
    boxes; infinite when the position rows depend on unbounded components."""
    lo_s, hi_s = params.limits.state_box(params.dod_cutoff)
    lo_u, hi_u = params.limits.input_box()
    total = 0.0
    for ax in range(3):
        row = seg.a_mat[ax].copy()
        row[ax] -= 1.0
        if np.any(np.abs(row[0:3]) > 1e-12):
            return math.inf
        bound = abs(seg.e_vec[ax])
        for j in range(3, vh.STATE_DIM):
            c = row[j]
            if c != 0.0:
                lo, hi = c * lo_s[j], c * hi_s[j]
                if not math.isfinite(max(abs(lo), abs(hi))):
                    return math.inf
                bound += max(abs(lo), abs(hi))
        for j in range(vh.INPUT_DIM):
            c = seg.b_mat[ax, j]
            if c != 0.0:
                bound += max(abs(c * lo_u[j]), abs(c * hi_u[j]))
        total += bound * bound
    return math.sqrt(total)


def add_waypoint_dynamics(model: MilpModel, handles: OcpHandles,
                          snap: ScenarioSnapshot) -> None:
    """Coverage-claim binaries, their proximity gating, the one-claimer rule
    and the coverage-state recursion."""
    N = snap.horizon
    agents = snap.airborne_agents()
    approx = make_sphere_faces(snap.h_waypoint)
    coverage_cost = handles.objective_parts.setdefault("coverage", LinExpr())
    reach = {
        a.agent_id: _step_reach(a.params, vh.segment_for(a.params, a.state.dod))
        for a in agents
    }
    for w, wp in enumerate(snap.waypoints):
        claims_by_step: list[list[VarHandle]] = [[] for _ in range(N)]
        for agent in agents:
            aid = agent.agent_id
            claims = []
            dist0 = float(np.linalg.norm(agent.state.position - wp.position))
            for n in range(N):
                b = model.add_binary(f"claim_w{w}_{aid}_{n}")
                b.branch_priority = 3
                b.branch_up = True
                if wp.coverage == 0:
                    model.fix(b, 0.0)
                elif n == 0:
                    # measured position: the claim is a constant decision
                    vals = approx.values(agent.state.position - wp.position)
                    if np.any(vals > wp.radius * approx.c_in_inner + 1e-9):
                        model.fix(b, 0.0)
                elif dist0 > reach[aid] * n + wp.radius:
                    model.fix(b, 0.0)   # waypoint unreachable this early
                else:
                    p = handles.position(aid, n)
                    vec = [as_expr(p[k]) - wp.position[k] for k in range(3)]
                    encode_norm_ub(
                        model, vec, approx, wp.radius, relax_binary=b,
                        inner=True, name=f"near_w{w}_{aid}_{n}",
                    )
                claims.append(b)
                claims_by_step[n].append(b)
            handles.claim[(w, aid)] = claims

        # coverage state: one visit drains it, at most one claimer per step
        states: list = [as_expr(float(wp.coverage))]
        for n in range(N):
            step_sum = dot([1.0] * len(claims_by_step[n]), claims_by_step[n])
            model.add_le(step_sum - states[n], 0.0, f"claimcap_w{w}_{n}")
            nxt = model.add_continuous(0.0, 1.0, f"cov_w{w}_{n + 1}")
            model.add_eq(as_expr(nxt) - states[n] + step_sum, 0.0, f"covdyn_w{w}_{n + 1}")
            states.append(as_expr(nxt))
            coverage_cost = coverage_cost + (
                as_expr(nxt) * (wp.weight * snap.weights.coverage_scale)
            )
        handles.coverage[w] = states
    handles.objective_parts["coverage"] = coverage_cost


# ---------------------------------------------------------------------------
# target distance
# ---------------------------------------------------------------------------


def add_target_distance(model: MilpModel, handles: OcpHandles,
                        snap: ScenarioSnapshot, agent: UasAgent) -> None:
    """Epigraph variables for the distance to the agent's target, relaxed by
    the target waypoint's coverage state in transit mode, plus their cost."""
    if agent.target is None:
        raise BuildError(f"agent {agent.agent_id} has no target to track")
    N = snap.horizon
    aid = agent.agent_id
    target = agent.target
    approx = make_cylinder_faces(snap.h_physical, closed=True)
    c_in = approx.c_in_inner

    pos_lo, pos_hi = _position_bounds(snap)
    span = np.maximum(np.abs(pos_lo - target.position), np.abs(pos_hi - target.position))
    d_max = float(np.linalg.norm(span)) / c_in + 1.0

    relax_expr = None
    if target.relaxed_by_coverage:
        if target.waypoint_index not in handles.coverage:
            raise BuildError(
                f"agent {aid} tracks waypoint {target.waypoint_index} which is "
                f"not part of the model"
            )
        if d_max > model.m_big:
            raise BuildError(
                f"coverage relaxation needs M >= {d_max:.3g} above m_big"
            )

    cost = handles.objective_parts.setdefault("target", LinExpr())
    dvars = []
    for n in range(1, N + 1):
        d = model.add_continuous(0.0, d_max, f"dist_{aid}_{n}")
        bound: LinExpr = as_expr(d)
        if target.relaxed_by_coverage:
            phi_n = handles.coverage[target.waypoint_index][n]
            bound = bound + (1.0 - phi_n) * d_max
        p = handles.position(aid, n)
        vec = [as_expr(p[k]) - target.position[k] for k in range(3)]
        encode_norm_ub(model, vec, approx, bound, inner=True,
                       name=f"target_{aid}_{n}")
        cost.add_term(d, target.weight)
        dvars.append(d)
    handles.target_distance[aid] = dvars
    handles.objective_parts["target"] = cost


# ---------------------------------------------------------------------------
# top-level build
# ---------------------------------------------------------------------------


def build(snap: ScenarioSnapshot, safety_only: bool = False
          ) -> tuple[MilpModel, OcpHandles]:
    """Build the full model for one planning iteration.

    ``safety_only`` drops coverage and target terms (used as the recovery
    problem after an infeasible solve): dynamics, boxes, fence, obstacle and
    separation constraints stay.
    """
    _validate_snapshot(snap)
    agents = snap.airborne_agents()
    model = MilpModel(name="coverage_ocp", m_big=snap.m_big)
    handles = OcpHandles(horizon=snap.horizon,
                         agent_ids=[a.agent_id for a in agents])
    for agent in agents:
        _add_vehicle_block(model, handles, snap, agent, len(agents))
    _add_geo_fence(model, handles, snap)
    _add_obstacles(model, handles, snap)
    _add_separation(model, handles, snap)
    if not safety_only:
        if snap.waypoints:
            add_waypoint_dynamics(model, handles, snap)
        for agent in agents:
            if agent.op_mode in (OpMode.TRANSIT, OpMode.RETURN):
                add_target_distance(model, handles, snap, agent)

    objective = LinExpr()
    for part in handles.objective_parts.values():
        objective = objective + part
    model.set_objective(objective)
    return model, handles


def objective_breakdown(handles: OcpHandles, solution: MilpSolution) -> dict[str, float]:
    """Recompute each objective term from the solution values."""
    return {name: solution.eval(expr) for name, expr in handles.objective_parts.items()}
