"""Closed-loop mission simulation.

Each step: refresh the charge-dependent dynamics segment, advance the mode
machine and target dynamics, build and solve the planning problem for the
current snapshot, apply the first optimal input to every airborne agent,
drain realized coverage from the step-0 claims, advance scripted obstacles,
and log.  The loop stops when every agent has landed or the step cap is
reached; an infeasible solve triggers one safety-only recovery solve and a
second failure aborts the run.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import mission, vehicle as vh
from .ocp import Obstacle, OcpHandles, OpMode, UasAgent, build, objective_breakdown
from .scenario import ObstacleSpec, Scenario
from .solvers import MilpSolution, solve

log = logging.getLogger(__name__)

_SAFETY_TOL = 1e-6


@dataclass
class SimulationConfig:
    max_steps: int | None = None          # default: the scenario's cap
    solver_backend: str = "fallback"
    solve_time_limit: float | None = None
    seed: int | None = None               # recorded; the loop is deterministic
    mismatch_hook: Callable[[UasAgent, vh.VehicleState], vh.VehicleState] | None = None


@dataclass
class ObstacleTrack:
    """Runtime position/velocity of one scenario obstacle."""

    spec: ObstacleSpec
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def current(self) -> Obstacle:
        region = self.spec.region.translate(self.offset) if np.any(self.offset) \
            else self.spec.region
        vel = self.velocity if np.any(self.velocity) else None
        return Obstacle(region=region, clearance=self.spec.clearance, velocity=vel)


def advance_moving_obstacles(tracks: list[ObstacleTrack], dt: float,
                             step: int) -> None:
    """Apply the scheduled velocity of simulation step ``step`` for ``dt``."""
    for track in tracks:
        track.velocity = track.spec.velocity_at(step)
        track.offset = track.offset + track.velocity * dt


@dataclass
class AgentRecord:
    agent_id: str
    mode: OpMode
    state: np.ndarray                 # realized state after the step
    applied: np.ndarray | None        # input applied during the step
    soc: float
    u_b: float
    i_b: float
    dod_segment: int


@dataclass
class StepRecord:
    step: int
    agents: list[AgentRecord]
    coverage: list[int]
    transitions: list[mission.OpTransition]
    objective: float | None = None
    objective_parts: dict = field(default_factory=dict)
    solve_status: str = ""
    solve_time: float = 0.0
    recovered: bool = False
    obstacle_offsets: list[np.ndarray] = field(default_factory=list)


@dataclass
class SimulationLog:
    scenario_name: str
    steps: list[StepRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _segment_index(params: vh.VehicleParams, dod: float) -> int:
    return params.segments.index(vh.segment_for(params, dod))


def run(scenario: Scenario, config: SimulationConfig | None = None) -> SimulationLog:
    config = config or SimulationConfig()
    max_steps = config.max_steps if config.max_steps is not None else scenario.max_steps
    agents = scenario.make_agents()
    coverage = scenario.initial_coverage()
    tracks = [ObstacleTrack(spec) for spec in scenario.obstacles]
    simlog = SimulationLog(scenario_name=scenario.name)
    plan: mission.PlanInfo | None = None
    termination = "step_cap"
    diagnostic = ""
    infeasible_streak = 0

    for step in range(max_steps):
        if all(a.op_mode == OpMode.LANDED for a in agents):
            termination = "all_landed"
            break

        # mode machine first: it may land agents or rewire targets
        transitions = mission.update_target_dynamics(
            agents, scenario.waypoints, coverage, plan,
            scenario.rules, scenario.weights,
        )
        airborne = [a for a in agents if a.airborne]
        if not airborne:
            simlog.steps.append(StepRecord(
                step=step, agents=[], coverage=list(coverage),
                transitions=transitions,
                obstacle_offsets=[t.offset.copy() for t in tracks],
            ))
            termination = "all_landed"
            break

        for track in tracks:
            track.velocity = track.spec.velocity_at(step)
        snapshot = scenario.snapshot(airborne, coverage, [t.current() for t in tracks])
        model, handles = build(snapshot)
        solution = solve(model, config.solve_time_limit, config.solver_backend)
        recovered = False
        if not solution.has_values:
            log.warning("step %d: %s solve, retrying with safety-only model",
                        step, solution.status)
            model, handles = build(snapshot, safety_only=True)
            solution = solve(model, config.solve_time_limit, config.solver_backend)
            recovered = True
            infeasible_streak += 1
            if not solution.has_values:
                termination = "infeasible"
                diagnostic = (
                    f"step {step}: planning and recovery both ended "
                    f"{solution.status}; aborting"
                )
                break
        else:
            infeasible_streak = 0
        if infeasible_streak >= 2:
            termination = "infeasible"
            diagnostic = f"step {step}: two consecutive recovery-only iterations"
            break

        records = []
        for agent in agents:
            if not agent.airborne:
                records.append(_frozen_record(agent))
                continue
            aid = agent.agent_id
            u0 = vh.VehicleInput.from_vector(
                np.array(solution.value_list(handles.u[aid][0]))
            )
            telemetry = vh.battery_telemetry(agent.params, agent.state, u0)
            nxt = vh.step(agent.params, agent.state, u0)
            if config.mismatch_hook is not None:
                nxt = config.mismatch_hook(agent, nxt)
            agent.state = nxt
            records.append(AgentRecord(
                agent_id=aid,
                mode=agent.op_mode,
                state=nxt.to_vector(),
                applied=u0.to_vector(),
                soc=telemetry.soc,
                u_b=telemetry.u_b,
                i_b=telemetry.i_b,
                dod_segment=_segment_index(agent.params, nxt.dod),
            ))

        if not recovered:
            for (w, aid), claims in handles.claim.items():
                if coverage[w] == 1 and solution.value(claims[0]) > 0.5:
                    coverage[w] = 0
            plan = mission.extract_plan(handles, solution)
        else:
            plan = mission.PlanInfo(
                claims_by_agent={a.agent_id: False for a in airborne}
            )

        advance_moving_obstacles(tracks, scenario.dt, step)
        simlog.steps.append(StepRecord(
            step=step,
            agents=records,
            coverage=list(coverage),
            transitions=transitions,
            objective=solution.objective,
            objective_parts=objective_breakdown(handles, solution),
            solve_status=solution.status,
            solve_time=solution.wall_time,
            recovered=recovered,
            obstacle_offsets=[t.offset.copy() for t in tracks],
        ))
    else:
        if all(a.op_mode == OpMode.LANDED for a in agents):
            termination = "all_landed"

    simlog.summary = _summarize(scenario, config, agents, coverage, simlog,
                                termination, diagnostic)
    return simlog


def _frozen_record(agent: UasAgent) -> AgentRecord:
    telemetry = vh.battery_telemetry(agent.params, agent.state, vh.hover_input())
    return AgentRecord(
        agent_id=agent.agent_id,
        mode=agent.op_mode,
        state=agent.state.to_vector(),
        applied=None,
        soc=telemetry.soc,
        u_b=telemetry.u_b,
        i_b=0.0,
        dod_segment=_segment_index(agent.params, agent.state.dod),
    )


def _summarize(scenario: Scenario, config: SimulationConfig,
               agents: list[UasAgent], coverage: list[int],
               simlog: SimulationLog, termination: str, diagnostic: str) -> dict:
    n_wp = len(coverage)
    covered = n_wp - sum(coverage)
    per_agent = {}
    for agent in agents:
        per_agent[agent.agent_id] = {
            "final_dod": agent.state.dod,
            "final_mode": int(agent.op_mode),
            "landed": agent.op_mode == OpMode.LANDED,
            "home_distance": float(np.linalg.norm(agent.state.position - agent.p_init)),
        }
    violations = verify_log_invariants(scenario, simlog)
    return {
        "scenario": scenario.name,
        "termination_reason": termination,
        "diagnostic": diagnostic,
        "aborted": termination == "infeasible",
        "steps_run": len(simlog.steps),
        "waypoints_total": n_wp,
        "waypoints_covered": covered,
        "coverage_fraction": covered / n_wp if n_wp else 1.0,
        "all_landed": all(a.op_mode == OpMode.LANDED for a in agents),
        "agents": per_agent,
        "solver_backend": config.solver_backend,
        "seed": config.seed,
        "safety_violations": violations,
    }


# ---------------------------------------------------------------------------
# invariants over a finished log
# ---------------------------------------------------------------------------


def verify_log_invariants(scenario: Scenario, simlog: SimulationLog) -> list[str]:
    """Exact rechecks over the realized trajectory: fence containment,
    obstacle clearance, pairwise separation, non-increasing coverage,
    non-decreasing charge, and state boxes.  Returns violation strings."""
    out: list[str] = []
    fence = scenario.geo_fence
    radius = {s.agent_id: s.params.radius for s in scenario.vehicles}
    params = {s.agent_id: s.params for s in scenario.vehicles}
    last_cov = None
    last_dod: dict[str, float] = {}
    for rec in simlog.steps:
        for ar in rec.agents:
            pos = ar.state[0:3]
            d = fence.region.containment(pos)
            if d > fence.margin + _SAFETY_TOL:
                out.append(f"step {rec.step} {ar.agent_id}: geo fence violated by "
                           f"{d - fence.margin:.2e} m")
            for o, spec in enumerate(scenario.obstacles):
                offset = rec.obstacle_offsets[o] if o < len(rec.obstacle_offsets) else np.zeros(3)
                region = spec.region.translate(offset) if np.any(offset) else spec.region
                dmin = radius[ar.agent_id] + spec.clearance
                gap = region.containment(pos)
                if gap < dmin - _SAFETY_TOL and ar.mode != OpMode.LANDED:
                    out.append(f"step {rec.step} {ar.agent_id}: obstacle {o} "
                               f"clearance {gap:.3f} < {dmin:.3f} m")
            p = params[ar.agent_id]
            lo, hi = p.limits.state_box(p.dod_cutoff)
            vec = ar.state
            for k in range(vh.STATE_DIM):
                if vec[k] < lo[k] - _SAFETY_TOL or vec[k] > hi[k] + _SAFETY_TOL:
                    out.append(f"step {rec.step} {ar.agent_id}: state "
                               f"{vh.STATE_LABELS[k]} = {vec[k]:.4f} outside box")
            prev = last_dod.get(ar.agent_id)
            if prev is not None and vec[vh.DOD] < prev - 1e-9:
                out.append(f"step {rec.step} {ar.agent_id}: charge recovered "
                           f"({prev:.6f} -> {vec[vh.DOD]:.6f})")
            last_dod[ar.agent_id] = vec[vh.DOD]
        for i, a in enumerate(rec.agents):
            for b in rec.agents[i + 1:]:
                dmin = radius[a.agent_id] + radius[b.agent_id] + scenario.swarm_clearance
                dist = float(np.linalg.norm(a.state[0:3] - b.state[0:3]))
                if dist < dmin - _SAFETY_TOL:
                    out.append(f"step {rec.step}: agents {a.agent_id}/{b.agent_id} "
                               f"separation {dist:.3f} < {dmin:.3f} m")
        if last_cov is not None:
            for w, (prev, cur) in enumerate(zip(last_cov, rec.coverage)):
                if cur > prev:
                    out.append(f"step {rec.step}: coverage state of waypoint {w} "
                               f"increased")
        last_cov = rec.coverage
    return out


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

TRAJECTORY_HEADER = (
    ["step", "agent"] + list(vh.STATE_LABELS) + list(vh.INPUT_LABELS)
    + ["mode", "soc", "u_b", "i_b"]
)


def save_logs(simlog: SimulationLog, out_dir) -> dict[str, Path]:
    """Write trajectory/coverage CSVs, the transition log and the summary
    JSON; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectory": out / "trajectory.csv",
        "coverage": out / "coverage.csv",
        "transitions": out / "transitions.log",
        "summary": out / "summary.json",
    }
    with open(paths["trajectory"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for rec in simlog.steps:
            for ar in rec.agents:
                applied = ar.applied if ar.applied is not None else [""] * vh.INPUT_DIM
                writer.writerow(
                    [rec.step, ar.agent_id]
                    + [f"{v:.9g}" for v in ar.state]
                    + [f"{v:.9g}" if v != "" else "" for v in applied]
                    + [int(ar.mode), f"{ar.soc:.9g}", f"{ar.u_b:.9g}", f"{ar.i_b:.9g}"]
                )
    with open(paths["coverage"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "waypoint", "coverage"])
        for rec in simlog.steps:
            for w, phi in enumerate(rec.coverage):
                writer.writerow([rec.step, w, phi])
    with open(paths["transitions"], "w", encoding="utf-8") as fh:
        stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
        for rec in simlog.steps:
            for t in rec.transitions:
                wp = "-" if t.waypoint_index is None else t.waypoint_index
                weight = "-" if t.weight is None else f"{t.weight:.6g}"
                fh.write(
                    f"{stamp} step={rec.step} agent={t.agent_id} "
                    f"op={int(t.from_mode)}->{int(t.to_mode)} action={t.action} "
                    f"waypoint={wp} weight={weight}\n"
                )
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(simlog.summary, fh, indent=1)
    return paths
