"""Scenario files: strict parsing, semantic validation, snapshot assembly.

A scenario is a JSON document with sections for the vehicles (parameter-file
references plus initial states), the geo fence, obstacles (optionally with a
piecewise-constant velocity schedule), waypoints, objective weights, horizon
and timing, and the mission thresholds.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vehicle as vh
from .geometry import ConvexRegion, DegenerateGeometryError, convex_hull
from .milp import M_BIG_DEFAULT
from .mission import MissionRules
from .ocp import GeoFence, Obstacle, OpMode, ScenarioSnapshot, UasAgent, Waypoint, WeightSet


class ScenarioError(ValueError):
    """Unreadable or structurally invalid scenario input."""


def _check_keys(obj: dict, where: str, required: set[str], optional: set[str] = frozenset()):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - required - set(optional)
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ScenarioError(f"{where}: missing keys {sorted(missing)}")


@dataclass
class VelocityStage:
    step: int
    velocity: np.ndarray

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)


@dataclass
class ObstacleSpec:
    """An obstacle with an optional scripted velocity timeline."""

    region: ConvexRegion
    clearance: float
    schedule: list[VelocityStage] = field(default_factory=list)

    def velocity_at(self, step: int) -> np.ndarray:
        v = np.zeros(3)
        for stage in self.schedule:
            if stage.step <= step:
                v = stage.velocity
        return v

    @property
    def scripted(self) -> bool:
        return any(np.any(s.velocity != 0.0) for s in self.schedule)


@dataclass
class VehicleSpec:
    agent_id: str
    params: vh.VehicleParams
    params_problems: list[str]
    start: np.ndarray
    dod: float
    yaw: float

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(3)

    def make_agent(self) -> UasAgent:
        return UasAgent(
            agent_id=self.agent_id,
            params=self.params,
            state=vh.hover_state(self.start, dod=self.dod, yaw=self.yaw),
            p_init=self.start.copy(),
        )


@dataclass
class Scenario:
    name: str
    horizon: int
    dt: float
    max_steps: int
    vehicles: list[VehicleSpec]
    geo_fence: GeoFence | None
    obstacles: list[ObstacleSpec]
    waypoints: list[Waypoint]
    weights: WeightSet
    rules: MissionRules
    swarm_clearance: float
    h_physical: int = 8
    h_waypoint: int = 4
    m_big: float = M_BIG_DEFAULT
    geometry_problems: list[str] = field(default_factory=list)

    def make_agents(self) -> list[UasAgent]:
        if self.geometry_problems:
            raise ScenarioError("; ".join(self.geometry_problems))
        return [spec.make_agent() for spec in self.vehicles]

    def initial_coverage(self) -> list[int]:
        return [wp.coverage for wp in self.waypoints]

    def snapshot(self, agents: list[UasAgent], coverage: list[int],
                 obstacles: list[Obstacle]) -> ScenarioSnapshot:
        if self.geometry_problems:
            raise ScenarioError("; ".join(self.geometry_problems))
        waypoints = [
            Waypoint(wp.position, wp.radius, wp.weight, coverage[w])
            for w, wp in enumerate(self.waypoints)
        ]
        return ScenarioSnapshot(
            horizon=self.horizon,
            dt=self.dt,
            agents=agents,
            waypoints=waypoints,
            geo_fence=self.geo_fence,
            obstacles=obstacles,
            weights=self.weights,
            swarm_clearance=self.swarm_clearance,
            h_physical=self.h_physical,
            h_waypoint=self.h_waypoint,
            m_big=self.m_big,
        )


_TOP_KEYS_REQ = {"name", "horizon", "dt", "vehicles", "geo_fence", "waypoints"}
_TOP_KEYS_OPT = {"max_steps", "obstacles", "weights", "thresholds", "approx", "m_big"}


def load_scenario(path) -> Scenario:
    """Parse and structurally validate a scenario file.

    Raises :class:`ScenarioError` for unreadable files, JSON syntax errors
    (with line/column), unknown or missing keys, missing vehicle parameter
    files and degenerate hull geometry.  Semantic checks that should be
    reported in bulk live in :func:`validate_scenario`.
    """
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc

    _check_keys(data, str(path), _TOP_KEYS_REQ, _TOP_KEYS_OPT)
    geometry_problems: list[str] = []

    fence_raw = data["geo_fence"]
    _check_keys(fence_raw, "geo_fence", {"vertices"}, {"margin"})
    fence = None
    try:
        fence_region = convex_hull(fence_raw["vertices"], name="geo_fence")
        fence = GeoFence(fence_region, float(fence_raw.get("margin", 0.0)))
    except DegenerateGeometryError as exc:
        geometry_problems.append(f"geo_fence: {exc}")

    obstacles = []
    for k, raw in enumerate(data.get("obstacles", [])):
        _check_keys(raw, f"obstacles[{k}]", {"vertices"},
                    {"clearance", "velocity", "schedule", "name"})
        try:
            region = convex_hull(raw["vertices"], name=raw.get("name", f"obstacle{k}"))
        except DegenerateGeometryError as exc:
            geometry_problems.append(f"obstacles[{k}]: {exc}")
            continue
        schedule = []
        if "velocity" in raw:
            schedule.append(VelocityStage(0, raw["velocity"]))
        for j, st in enumerate(raw.get("schedule", [])):
            _check_keys(st, f"obstacles[{k}].schedule[{j}]", {"step", "velocity"})
            schedule.append(VelocityStage(int(st["step"]), st["velocity"]))
        schedule.sort(key=lambda s: s.step)
        obstacles.append(ObstacleSpec(region, float(raw.get("clearance", 0.0)), schedule))

    waypoints = []
    for k, raw in enumerate(data["waypoints"]):
        _check_keys(raw, f"waypoints[{k}]", {"position", "radius"}, {"weight", "covered"})
        waypoints.append(Waypoint(
            position=raw["position"],
            radius=float(raw["radius"]),
            weight=float(raw.get("weight", 1.0)),
            coverage=0 if raw.get("covered", False) else 1,
        ))

    vehicles = []
    for k, raw in enumerate(data["vehicles"]):
        _check_keys(raw, f"vehicles[{k}]", {"id", "params_file", "start"}, {"dod", "yaw"})
        params_path = Path(raw["params_file"])
        if not params_path.is_absolute():
            params_path = path.parent / params_path
        if not params_path.is_file():
            raise ScenarioError(
                f"vehicles[{k}]: parameter file not found: {params_path}"
            )
        try:
            params = vh.load_params(params_path, validate=False)
        except (vh.ParamsError, json.JSONDecodeError, ValueError) as exc:
            raise ScenarioError(f"vehicles[{k}]: bad parameter file {params_path}: {exc}")
        problems = vh.validate_params(params)
        vehicles.append(VehicleSpec(
            agent_id=str(raw["id"]),
            params=params,
            params_problems=problems,
            start=raw["start"],
            dod=float(raw.get("dod", 0.0)),
            yaw=float(raw.get("yaw", 0.0)),
        ))

    weights = WeightSet()
    if "weights" in data:
        raw = data["weights"]
        _check_keys(raw, "weights", set(), {
            "input_effort", "state_effort", "target", "coverage_scale",
            "transit_selection", "return_scale_floor",
        })
        if "input_effort" in raw:
            weights.input_effort = {k: float(v) for k, v in raw["input_effort"].items()}
        if "state_effort" in raw:
            weights.state_effort = {k: float(v) for k, v in raw["state_effort"].items()}
        weights.target = float(raw.get("target", weights.target))
        weights.coverage_scale = float(raw.get("coverage_scale", weights.coverage_scale))
        if "transit_selection" in raw:
            weights.transit_selection = tuple(float(v) for v in raw["transit_selection"])
        weights.return_scale_floor = float(
            raw.get("return_scale_floor", weights.return_scale_floor))

    thresholds = data.get("thresholds", {})
    _check_keys(thresholds, "thresholds", {"d_r_max"},
                {"landing_radius", "velocity_tol", "swarm_clearance"})
    rules = MissionRules(
        d_r_max=float(thresholds["d_r_max"]),
        landing_radius=float(thresholds.get("landing_radius", 1.0)),
        velocity_tol=float(thresholds.get("velocity_tol", 0.05)),
    )

    approx = data.get("approx", {})
    _check_keys(approx, "approx", set(), {"physical", "waypoint"})

    return Scenario(
        name=str(data["name"]),
        horizon=int(data["horizon"]),
        dt=float(data["dt"]),
        max_steps=int(data.get("max_steps", 500)),
        vehicles=vehicles,
        geo_fence=fence,
        obstacles=obstacles,
        waypoints=waypoints,
        weights=weights,
        rules=rules,
        swarm_clearance=float(thresholds.get("swarm_clearance", 0.4)),
        h_physical=int(approx.get("physical", 8)),
        h_waypoint=int(approx.get("waypoint", 4)),
        m_big=float(data.get("m_big", M_BIG_DEFAULT)),
        geometry_problems=geometry_problems,
    )


def validate_scenario(scenario: Scenario) -> list[str]:
    """All semantic violations (empty when the scenario is runnable)."""
    v: list[str] = list(scenario.geometry_problems)
    if scenario.horizon < 2:
        v.append(f"horizon must be >= 2, got {scenario.horizon}")
    if scenario.dt <= 0:
        v.append(f"dt must be positive, got {scenario.dt}")
    if scenario.max_steps < 1:
        v.append(f"max_steps must be >= 1, got {scenario.max_steps}")
    if not scenario.vehicles:
        v.append("no vehicles defined")
    ids = [s.agent_id for s in scenario.vehicles]
    if len(set(ids)) != len(ids):
        v.append("duplicate vehicle ids")

    for w, wp in enumerate(scenario.waypoints):
        if wp.radius <= 0:
            v.append(f"waypoints[{w}]: radius must be positive, got {wp.radius}")

    fence = scenario.geo_fence
    for k, spec in enumerate(scenario.vehicles):
        tag = f"vehicles[{k}] ({spec.agent_id})"
        for problem in spec.params_problems:
            v.append(f"{tag}: {problem}")
        if abs(spec.params.dt - scenario.dt) > 1e-9:
            v.append(f"{tag}: model step {spec.params.dt} != scenario dt {scenario.dt}")
        if not 0.0 <= spec.dod <= 1.0:
            v.append(f"{tag}: initial depth of discharge {spec.dod} outside [0, 1]")
        elif spec.dod >= spec.params.dod_cutoff:
            v.append(f"{tag}: initial depth of discharge {spec.dod} beyond the "
                     f"cutoff {spec.params.dod_cutoff}")
        if fence is not None:
            d = fence.region.containment(spec.start)
            if d > fence.margin + 1e-6:
                v.append(f"{tag}: start position sits {d:.3f} m relative to the geo "
                         f"fence (allowed {fence.margin:.3f})")
        for o, obs in enumerate(scenario.obstacles):
            dmin = spec.params.radius + obs.clearance
            if obs.region.containment(spec.start) < dmin - 1e-6:
                v.append(f"{tag}: start position inside keep-out of obstacle {o}")
        try:
            vh.return_threshold(spec.params, scenario.rules.d_r_max)
        except vh.ParamsError as exc:
            v.append(f"{tag}: {exc}")

    for i, a in enumerate(scenario.vehicles):
        for b in scenario.vehicles[i + 1:]:
            dmin = a.params.radius + b.params.radius + scenario.swarm_clearance
            dist = float(np.linalg.norm(a.start - b.start))
            if dist < dmin - 1e-6:
                v.append(f"vehicles {a.agent_id}/{b.agent_id}: starts {dist:.3f} m "
                         f"apart, below the required separation {dmin:.3f} m")

    for h_label, h in (("approx.physical", scenario.h_physical),
                       ("approx.waypoint", scenario.h_waypoint)):
        if h < 4 or h % 2:
            v.append(f"{h_label} must be an even integer >= 4, got {h}")
    if not math.isfinite(scenario.m_big) or scenario.m_big <= 0:
        v.append(f"m_big must be finite positive, got {scenario.m_big}")
    return v
