"""Operation-mode state machine and target lifecycle.

Each agent is in one of four modes: covering (chasing waypoints inside the
horizon), transit (heading to a chosen faraway waypoint), return (heading
home on low charge or a finished mission) and landed.  Between planning
iterations the next mode is derived from the realized coverage vector, the
charge level and the previous plan, and the agents' target-distance dynamics
are added, updated or removed accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import vehicle as vh
from .ocp import OcpHandles, OpMode, Target, UasAgent, Waypoint, WeightSet

ACTION_NONE = "none"
ACTION_ADD = "add_target"
ACTION_UPDATE = "update_target"
ACTION_REMOVE = "remove_target"
ACTION_LAND = "mark_landed"


@dataclass
class MissionRules:
    """Thresholds of the mode machine."""

    d_r_max: float                 # overestimated remaining flight distance, m
    landing_radius: float = 1.0    # "at the landing site" radius, m
    velocity_tol: float = 0.05     # max-norm velocity counting as standstill, m/s


@dataclass
class PlanInfo:
    """What the previous solve promised: which agents would claim a waypoint
    within the horizon, and which waypoints are due to be claimed."""

    claims_by_agent: dict[str, bool] = field(default_factory=dict)
    waypoints_planned: set[int] = field(default_factory=set)


def extract_plan(handles: OcpHandles, solution) -> PlanInfo:
    """Summarize the claim binaries of a solved model."""
    info = PlanInfo(claims_by_agent={aid: False for aid in handles.agent_ids})
    for (w, aid), claims in handles.claim.items():
        if any(solution.value(b) > 0.5 for b in claims):
            info.claims_by_agent[aid] = True
            info.waypoints_planned.add(w)
    return info


@dataclass
class OpTransition:
    agent_id: str
    from_mode: OpMode
    to_mode: OpMode
    action: str
    waypoint_index: int | None = None
    weight: float | None = None


@dataclass
class TransitChoice:
    waypoint_index: int
    cost: float
    horizontal: float    # normalized cost components
    vertical: float
    heading: float


def action_table(op: int, op_next: int) -> tuple[str, ...]:
    """Target-lifecycle actions for a mode pair; unreachable pairs act empty."""
    table = {
        (0, 1): (ACTION_ADD,),
        (0, 2): (ACTION_ADD,),
        (1, 0): (ACTION_REMOVE,),
        (1, 1): (ACTION_UPDATE,),
        (1, 2): (ACTION_ADD,),
        (2, 2): (ACTION_UPDATE,),
        (2, 3): (ACTION_LAND, ACTION_REMOVE),
    }
    return table.get((op, op_next), ())


def determine_next_op(agent: UasAgent, coverage: list[int],
                      plan: PlanInfo | None, rules: MissionRules) -> OpMode:
    """Next operation mode.

    Landed is absorbing; a returning agent lands once it is inside the
    landing radius at standstill; any agent switches to return when the whole
    area is covered or its charge passed the return threshold; a transit
    agent holds its mode while its target waypoint stays uncovered; a
    covering agent that would not claim any waypoint in the horizon goes
    looking for a transit target.  With no previous plan (first iteration)
    covering is kept.
    """
    if agent.op_mode == OpMode.LANDED:
        return OpMode.LANDED
    if agent.op_mode == OpMode.RETURN:
        dist = float(np.linalg.norm(agent.state.position - agent.p_init))
        standstill = float(np.max(np.abs(agent.state.velocity))) <= rules.velocity_tol
        if dist <= rules.landing_radius and standstill:
            return OpMode.LANDED
        return OpMode.RETURN
    dod_r = vh.return_threshold(agent.params, rules.d_r_max)
    if all(c == 0 for c in coverage) or agent.state.dod >= dod_r:
        return OpMode.RETURN
    if agent.op_mode == OpMode.TRANSIT:
        target = agent.target
        if (target is not None and target.waypoint_index is not None
                and coverage[target.waypoint_index] == 1):
            return OpMode.TRANSIT
        return OpMode.COVERING
    if plan is not None and not plan.claims_by_agent.get(agent.agent_id, False):
        return OpMode.TRANSIT
    return OpMode.COVERING


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def select_target_waypoint(agent: UasAgent, waypoints: list[Waypoint],
                           coverage: list[int], excluded: set[int],
                           selection_weights: tuple[float, float, float],
                           ) -> TransitChoice | None:
    """Cheapest feasible transit target, or None when nothing is left.

    Feasible waypoints are uncovered and not excluded (another agent's target
    or due to be claimed per the last plan).  The cost mixes the horizontal
    and vertical distances and the heading change toward the waypoint, each
    normalized over the candidates; ties go to the lowest index.
    """
    feasible = [w for w, wp in enumerate(waypoints)
                if coverage[w] == 1 and w not in excluded]
    if not feasible:
        return None
    pos = agent.state.position
    yaw = float(agent.state.attitude[2])
    rows = []
    for w in feasible:
        delta = waypoints[w].position - pos
        horizontal = math.hypot(delta[0], delta[1])
        vertical = abs(float(delta[2]))
        if horizontal < 1e-9:
            heading = 0.0
        else:
            bearing = math.atan2(delta[1], delta[0])
            heading = abs(_wrap_angle(bearing - yaw)) / math.pi
        rows.append((w, horizontal, vertical, heading))
    norms = [max(max(r[k] for r in rows), 1e-12) for k in (1, 2, 3)]
    w_h, w_v, w_psi = selection_weights
    best = None
    for w, horizontal, vertical, heading in rows:
        parts = (horizontal / norms[0], vertical / norms[1], heading / norms[2])
        cost = w_h * parts[0] + w_v * parts[1] + w_psi * parts[2]
        if best is None or cost < best.cost - 1e-12:
            best = TransitChoice(w, cost, *parts)
    return best


def _transit_weight(weights: WeightSet, agent: UasAgent, wp: Waypoint,
                    rules: MissionRules) -> float:
    dist = float(np.linalg.norm(agent.state.position - wp.position))
    return weights.target / max(dist, rules.landing_radius)


def _return_weight(weights: WeightSet, agent: UasAgent, coverage: list[int],
                   rules: MissionRules) -> float:
    """Return-pull weight: normalized by the current distance home and scaled
    with how far the charge sits past the return threshold, so a freshly
    triggered return still explores while a drained one heads straight home.
    With the whole area covered the pull is at full scale."""
    dod_r = vh.return_threshold(agent.params, rules.d_r_max)
    if all(c == 0 for c in coverage):
        scale = 1.0
    else:
        span = agent.params.dod_max - dod_r
        if span <= 1e-12:
            scale = 1.0
        else:
            scale = (agent.state.dod - dod_r) / span
        scale = min(max(scale, weights.return_scale_floor), 1.0)
    dist = float(np.linalg.norm(agent.state.position - agent.p_init))
    return weights.target * scale / max(dist, rules.landing_radius)


def update_target_dynamics(agents: list[UasAgent], waypoints: list[Waypoint],
                           coverage: list[int], plan: PlanInfo | None,
                           rules: MissionRules, weights: WeightSet,
                           ) -> list[OpTransition]:
    """Advance every agent's mode and rewire its target-distance dynamics.

    Emits one transition record per action (one with action 'none' when
    nothing changed); agents are mutated in place.
    """
    transitions: list[OpTransition] = []
    taken = {a.target.waypoint_index for a in agents
             if a.op_mode == OpMode.TRANSIT and a.target is not None
             and a.target.waypoint_index is not None}
    for agent in agents:
        op = agent.op_mode
        op_next = determine_next_op(agent, coverage, plan, rules)
        choice = None
        if op == OpMode.COVERING and op_next == OpMode.TRANSIT:
            excluded = set(taken)
            if plan is not None:
                excluded |= plan.waypoints_planned
            choice = select_target_waypoint(
                agent, waypoints, coverage, excluded, weights.transit_selection
            )
            if choice is None:
                # nothing left to chase: coverage is complete for this agent
                op_next = OpMode.RETURN

        actions = action_table(op.value, op_next.value)
        if not actions:
            transitions.append(OpTransition(agent.agent_id, op, op_next, ACTION_NONE))
        for action in actions:
            if action == ACTION_ADD and op_next == OpMode.TRANSIT:
                wp = waypoints[choice.waypoint_index]
                weight = _transit_weight(weights, agent, wp, rules)
                agent.target = Target(wp.position, weight, choice.waypoint_index)
                taken.add(choice.waypoint_index)
                transitions.append(OpTransition(
                    agent.agent_id, op, op_next, action,
                    choice.waypoint_index, weight,
                ))
            elif action == ACTION_ADD:  # return target at the start position
                weight = _return_weight(weights, agent, coverage, rules)
                agent.target = Target(agent.p_init, weight, None)
                transitions.append(OpTransition(
                    agent.agent_id, op, op_next, action, None, weight,
                ))
            elif action == ACTION_UPDATE:
                if op_next == OpMode.TRANSIT:
                    w = agent.target.waypoint_index
                    weight = _transit_weight(weights, agent, waypoints[w], rules)
                    agent.target = Target(waypoints[w].position, weight, w)
                    transitions.append(OpTransition(
                        agent.agent_id, op, op_next, action, w, weight,
                    ))
                else:
                    weight = _return_weight(weights, agent, coverage, rules)
                    agent.target = Target(agent.p_init, weight, None)
                    transitions.append(OpTransition(
                        agent.agent_id, op, op_next, action, None, weight,
                    ))
            elif action == ACTION_REMOVE:
                agent.target = None
                transitions.append(OpTransition(agent.agent_id, op, op_next, action))
            elif action == ACTION_LAND:
                transitions.append(OpTransition(agent.agent_id, op, op_next, action))
        agent.op_mode = op_next
    return transitions


def needs_rebuild(transitions: list[OpTransition]) -> bool:
    """True when at least one transition carries a real action."""
    return any(t.action != ACTION_NONE for t in transitions)
