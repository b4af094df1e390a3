"""Discrete-time multicopter model with battery energy bookkeeping.

The 14-dimensional state stacks position, velocity, attitude, body rates,
battery depth of discharge and polarization voltage (NED frame: x north,
y east, z down).  The 5-dimensional input is lift deviation from hover, three
torques, and a corrected thrust deviation that feeds the energy rows.  The
dynamics are linear per depth-of-discharge segment; parameter files can carry
externally identified matrices, and :func:`default_params` builds a documented
synthetic set (small-angle rigid body with linear drag, first-order rate
damping, and linear battery drain/polarization rows, discretized exactly via
the matrix exponential).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm

log = logging.getLogger(__name__)

STATE_DIM = 14
INPUT_DIM = 5

# state layout
POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)      # roll, pitch, yaw
RATE = slice(9, 12)
DOD = 12
U_POL = 13

# input layout
LIFT = 0
TORQUE = slice(1, 4)
THRUST_DEV = 4

STATE_LABELS = (
    "x", "y", "z", "vx", "vy", "vz",
    "roll", "pitch", "yaw", "wx", "wy", "wz",
    "dod", "u_pol",
)
INPUT_LABELS = ("lift", "tau_x", "tau_y", "tau_z", "thrust_dev")


class LimitViolation(ValueError):
    """An input component sits outside its box limit."""


class ParamsError(ValueError):
    """A vehicle parameter set fails validation."""


def _vec3(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(3)
    return arr


@dataclass
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    rates: np.ndarray
    dod: float
    u_pol: float = 0.0

    def __post_init__(self):
        self.position = _vec3(self.position)
        self.velocity = _vec3(self.velocity)
        self.attitude = _vec3(self.attitude)
        self.rates = _vec3(self.rates)
        self.dod = float(self.dod)
        self.u_pol = float(self.u_pol)
        if not -1e-9 <= self.dod <= 1.0 + 1e-9:
            raise ValueError(f"depth of discharge {self.dod} outside [0, 1]")
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("non-finite state component")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.position, self.velocity, self.attitude, self.rates,
            [self.dod, self.u_pol],
        ])

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "VehicleState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (STATE_DIM,):
            raise ValueError(f"state vector must have {STATE_DIM} entries, got {vec.shape}")
        return cls(vec[POS], vec[VEL], vec[ATT], vec[RATE], vec[DOD], vec[U_POL])


def hover_state(position, dod: float = 0.0, yaw: float = 0.0,
                u_pol: float = 0.0) -> VehicleState:
    """A motionless state at ``position`` with the given charge level."""
    return VehicleState(position, np.zeros(3), np.array([0.0, 0.0, yaw]),
                        np.zeros(3), dod, u_pol)


@dataclass
class VehicleInput:
    lift: float
    torque: np.ndarray
    thrust_dev: float

    def __post_init__(self):
        self.lift = float(self.lift)
        self.torque = _vec3(self.torque)
        self.thrust_dev = float(self.thrust_dev)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.lift], self.torque, [self.thrust_dev]])

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "VehicleInput":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (INPUT_DIM,):
            raise ValueError(f"input vector must have {INPUT_DIM} entries, got {vec.shape}")
        return cls(vec[LIFT], vec[TORQUE], vec[THRUST_DEV])


def hover_input() -> VehicleInput:
    return VehicleInput(0.0, np.zeros(3), 0.0)


@dataclass
class Limits:
    """Box limits per state/input component (symmetric unless a pair)."""

    velocity: np.ndarray          # +/- per axis, m/s
    attitude: np.ndarray          # +/- per axis, rad
    rate: np.ndarray              # +/- per axis, rad/s
    lift: tuple[float, float]     # N
    torque: np.ndarray            # +/- per axis, N m
    thrust_dev: tuple[float, float]  # N
    u_pol: tuple[float, float]    # V
    v_horizontal: float | None = None  # optional planar speed cap, m/s

    def __post_init__(self):
        self.velocity = _vec3(self.velocity)
        self.attitude = _vec3(self.attitude)
        self.rate = _vec3(self.rate)
        self.torque = _vec3(self.torque)
        self.lift = (float(self.lift[0]), float(self.lift[1]))
        self.thrust_dev = (float(self.thrust_dev[0]), float(self.thrust_dev[1]))
        self.u_pol = (float(self.u_pol[0]), float(self.u_pol[1]))

    def state_box(self, dod_cutoff: float) -> tuple[np.ndarray, np.ndarray]:
        lo = np.empty(STATE_DIM)
        hi = np.empty(STATE_DIM)
        lo[POS], hi[POS] = -np.inf, np.inf
        lo[VEL], hi[VEL] = -self.velocity, self.velocity
        lo[ATT], hi[ATT] = -self.attitude, self.attitude
        lo[RATE], hi[RATE] = -self.rate, self.rate
        lo[DOD], hi[DOD] = 0.0, dod_cutoff
        lo[U_POL], hi[U_POL] = self.u_pol
        return lo, hi

    def input_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.empty(INPUT_DIM)
        hi = np.empty(INPUT_DIM)
        lo[LIFT], hi[LIFT] = self.lift
        lo[TORQUE], hi[TORQUE] = -self.torque, self.torque
        lo[THRUST_DEV], hi[THRUST_DEV] = self.thrust_dev
        return lo, hi


@dataclass
class ThrustTie:
    """Linear coupling of the corrected thrust deviation to lift and velocity:
    ``thrust_dev = lift_coef * lift + velocity_coef . v``."""

    lift_coef: float = 1.0
    velocity_coef: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.lift_coef = float(self.lift_coef)
        self.velocity_coef = _vec3(self.velocity_coef)

    def apply(self, lift: float, velocity) -> float:
        return self.lift_coef * lift + float(self.velocity_coef @ _vec3(velocity))


@dataclass
class OutputMap:
    """Linear battery output map for one segment: open-circuit voltage line,
    series resistance, and current as a line in the thrust deviation."""

    ocv0: float
    ocv_slope: float
    r0: float
    i_hover: float
    i_per_thrust: float


@dataclass
class LpvSegment:
    dod_lo: float
    dod_hi: float
    a_mat: np.ndarray
    b_mat: np.ndarray
    e_vec: np.ndarray
    output: OutputMap

    def __post_init__(self):
        self.a_mat = np.asarray(self.a_mat, dtype=float).reshape(STATE_DIM, STATE_DIM)
        self.b_mat = np.asarray(self.b_mat, dtype=float).reshape(STATE_DIM, INPUT_DIM)
        self.e_vec = np.asarray(self.e_vec, dtype=float).reshape(STATE_DIM)

    def contains(self, dod: float) -> bool:
        return self.dod_lo <= dod < self.dod_hi

    def predict(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.a_mat @ x + self.b_mat @ u + self.e_vec


@dataclass
class BatteryTelemetry:
    soc: float
    u_b: float
    i_b: float


@dataclass
class VehicleParams:
    name: str
    dt: float
    mass: float
    gravity: float
    motor_count: int
    radius: float                 # vehicle radius for separation distances, m
    p_dc_nom: float               # nominal hover power draw, W
    v_cruise: float               # assumed return cruise speed, m/s
    charge_capacity: float        # battery charge, C
    u_nominal: float              # nominal battery voltage, V
    dod_max: float
    dod_cutoff: float
    limits: Limits
    thrust_tie: ThrustTie
    segments: list[LpvSegment]
    meta: dict = field(default_factory=dict)


def segment_for(params: VehicleParams, dod: float) -> LpvSegment:
    """The segment whose half-open interval contains ``dod`` (the final
    segment also covers its upper endpoint)."""
    if not 0.0 <= dod <= 1.0:
        raise ValueError(f"depth of discharge {dod} outside [0, 1]")
    for seg in params.segments:
        if seg.contains(dod):
            return seg
    last = params.segments[-1]
    if dod == last.dod_hi:
        return last
    raise ParamsError(f"no segment covers depth of discharge {dod}")


def step(params: VehicleParams, state: VehicleState, u: VehicleInput) -> VehicleState:
    """One discrete-time step with the segment matching the current charge.

    The next depth of discharge is clamped into [0, 1] with a warning so that
    simulations may run past exhaustion.
    """
    _check_input(params.limits, u)
    seg = segment_for(params, state.dod)
    nxt = seg.predict(state.to_vector(), u.to_vector())
    if not np.all(np.isfinite(nxt)):
        raise ParamsError("dynamics produced a non-finite state")
    if nxt[DOD] < 0.0 or nxt[DOD] > 1.0:
        log.warning("depth of discharge %.6f clamped into [0, 1]", nxt[DOD])
        nxt[DOD] = min(max(nxt[DOD], 0.0), 1.0)
    return VehicleState.from_vector(nxt)


def _check_input(limits: Limits, u: VehicleInput, tol: float = 1e-9) -> None:
    lo, hi = limits.input_box()
    vec = u.to_vector()
    for k, label in enumerate(INPUT_LABELS):
        if vec[k] < lo[k] - tol or vec[k] > hi[k] + tol:
            raise LimitViolation(
                f"input '{label}' = {vec[k]:.6g} outside [{lo[k]:.6g}, {hi[k]:.6g}]"
            )


def return_threshold(params: VehicleParams, d_r_max: float) -> float:
    """Depth-of-discharge level that triggers the return flight, from the
    worst-case remaining flight distance ``d_r_max`` at nominal hover power
    and cruise speed."""
    positives = {
        "p_dc_nom": params.p_dc_nom,
        "v_cruise": params.v_cruise,
        "charge_capacity": params.charge_capacity,
        "u_nominal": params.u_nominal,
        "dod_max": params.dod_max,
    }
    for key, value in positives.items():
        if value <= 0:
            raise ParamsError(f"{key} must be positive, got {value}")
    if d_r_max < 0:
        raise ParamsError(f"d_r_max must be nonnegative, got {d_r_max}")
    threshold = params.dod_max - (
        params.p_dc_nom * d_r_max
        / (params.v_cruise * params.charge_capacity * params.u_nominal)
    )
    if threshold <= 0:
        raise ParamsError(
            f"return threshold {threshold:.6g} is not positive; d_r_max = "
            f"{d_r_max} exceeds what the battery budget allows"
        )
    return threshold


def battery_telemetry(params: VehicleParams, state: VehicleState,
                      u: VehicleInput) -> BatteryTelemetry:
    """State of charge plus terminal voltage/current from the segment's
    linear output map."""
    out = segment_for(params, state.dod).output
    i_b = out.i_hover + out.i_per_thrust * u.thrust_dev
    u_b = out.ocv0 - out.ocv_slope * state.dod - out.r0 * i_b - state.u_pol
    return BatteryTelemetry(soc=1.0 - state.dod, u_b=u_b, i_b=i_b)


# ---------------------------------------------------------------------------
# synthetic parameterization
# ---------------------------------------------------------------------------

_DEFAULT_BREAKS = (0.0, 0.4, 0.8, 1.0)
_DEFAULT_POWER_SCALE = (1.0, 1.035, 1.09)
_DEFAULT_OCV = ((16.8, 2.0), (16.48, 1.2), (20.32, 6.0))  # continuous at breaks


def _discretize(a_c: np.ndarray, b_c: np.ndarray, e_c: np.ndarray,
                dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # exact zero-order-hold discretization via the augmented matrix exponential
    n, m = STATE_DIM, INPUT_DIM
    aug = np.zeros((n + m + 1, n + m + 1))
    aug[:n, :n] = a_c
    aug[:n, n:n + m] = b_c
    aug[:n, n + m] = e_c
    phi = expm(aug * dt)
    return phi[:n, :n], phi[:n, n:n + m], phi[:n, n + m]


def default_params(dt: float = 1.0, name: str = "synthetic-quad") -> VehicleParams:
    """A self-consistent synthetic quadcopter parameter set.

    Motion rows: double integrators with small-angle attitude coupling
    (ax = -g*pitch, ay = +g*roll, az = -lift/m), linear drag on velocity and
    first-order damping on body rates.  Battery rows: depth of discharge
    grows with hover power plus a linear thrust-deviation term; polarization
    voltage is a first-order lag driven by the battery current.
    """
    mass, gravity = 1.5, 9.81
    drag = 0.10
    inertia = np.array([0.02, 0.02, 0.035])
    rate_damping = 0.8
    q_b, u_nom = 18000.0, 14.8
    p_hover = 180.0
    power_per_thrust = 11.0
    r1, c1 = 0.02, 1800.0
    r0 = 0.018

    limits = Limits(
        velocity=(2.0, 2.0, 1.0),
        attitude=(0.35, 0.35, math.pi),
        rate=(1.2, 1.2, 0.8),
        lift=(-4.0, 4.0),
        torque=(0.04, 0.04, 0.03),
        thrust_dev=(-4.6, 4.6),
        u_pol=(-0.5, 1.0),
    )
    tie = ThrustTie(lift_coef=1.0, velocity_coef=(0.0, 0.0, -0.12))

    segments = []
    for k in range(len(_DEFAULT_BREAKS) - 1):
        scale = _DEFAULT_POWER_SCALE[k]
        ocv0, ocv_slope = _DEFAULT_OCV[k]
        i_hover = scale * p_hover / u_nom

        a_c = np.zeros((STATE_DIM, STATE_DIM))
        b_c = np.zeros((STATE_DIM, INPUT_DIM))
        e_c = np.zeros(STATE_DIM)
        a_c[0, 3] = a_c[1, 4] = a_c[2, 5] = 1.0
        a_c[3, 3] = a_c[4, 4] = a_c[5, 5] = -drag
        a_c[3, 7] = -gravity   # vx <- pitch
        a_c[4, 6] = gravity    # vy <- roll
        b_c[5, LIFT] = -1.0 / mass
        a_c[6, 9] = a_c[7, 10] = a_c[8, 11] = 1.0
        for ax in range(3):
            a_c[9 + ax, 9 + ax] = -rate_damping
            b_c[9 + ax, 1 + ax] = 1.0 / inertia[ax]
        b_c[DOD, THRUST_DEV] = scale * power_per_thrust / (q_b * u_nom)
        e_c[DOD] = scale * p_hover / (q_b * u_nom)
        a_c[U_POL, U_POL] = -1.0 / (r1 * c1)
        b_c[U_POL, THRUST_DEV] = (power_per_thrust / u_nom) / c1
        e_c[U_POL] = i_hover / c1

        a_d, b_d, e_d = _discretize(a_c, b_c, e_c, dt)
        segments.append(LpvSegment(
            dod_lo=_DEFAULT_BREAKS[k],
            dod_hi=_DEFAULT_BREAKS[k + 1],
            a_mat=a_d,
            b_mat=b_d,
            e_vec=e_d,
            output=OutputMap(
                ocv0=ocv0,
                ocv_slope=ocv_slope,
                r0=r0,
                i_hover=i_hover,
                i_per_thrust=power_per_thrust / u_nom,
            ),
        ))

    params = VehicleParams(
        name=name,
        dt=dt,
        mass=mass,
        gravity=gravity,
        motor_count=4,
        radius=0.3,
        p_dc_nom=p_hover,
        v_cruise=5.0,
        charge_capacity=q_b,
        u_nominal=u_nom,
        dod_max=0.75,
        dod_cutoff=0.9,
        limits=limits,
        thrust_tie=tie,
        segments=segments,
        meta={"discretization_order": "exact", "source": "synthetic"},
    )
    problems = validate_params(params)
    if problems:
        raise ParamsError("; ".join(problems))
    return params


# ---------------------------------------------------------------------------
# validation and parameter-file round trip
# ---------------------------------------------------------------------------


def validate_params(params: VehicleParams, continuity_tol: float = 1e-3) -> list[str]:
    """All detected problems (empty list when the set is usable)."""
    problems: list[str] = []
    if params.dt <= 0:
        problems.append(f"dt must be positive, got {params.dt}")
    if params.motor_count < 4 or params.motor_count % 2 != 0:
        problems.append(f"motor_count must be an even integer >= 4, got {params.motor_count}")
    if not params.dod_max < params.dod_cutoff <= 1.0:
        problems.append(
            f"need dod_max < dod_cutoff <= 1, got {params.dod_max}, {params.dod_cutoff}"
        )
    for label, value in (("mass", params.mass), ("radius", params.radius),
                         ("p_dc_nom", params.p_dc_nom), ("v_cruise", params.v_cruise),
                         ("charge_capacity", params.charge_capacity),
                         ("u_nominal", params.u_nominal)):
        if value <= 0:
            problems.append(f"{label} must be positive, got {value}")

    segs = params.segments
    if not segs:
        return problems + ["no dynamics segments supplied"]
    if abs(segs[0].dod_lo) > 1e-12 or abs(segs[-1].dod_hi - 1.0) > 1e-12:
        problems.append("segments must cover exactly [0, 1]")
    for a, b in zip(segs, segs[1:]):
        if abs(a.dod_hi - b.dod_lo) > 1e-12:
            problems.append(f"segment gap/overlap at depth of discharge {a.dod_hi}")
    for k, seg in enumerate(segs):
        for mat in (seg.a_mat, seg.b_mat, seg.e_vec):
            if not np.all(np.isfinite(mat)):
                problems.append(f"segment {k} has non-finite matrix entries")
                break

    # hover-state prediction must agree across each breakpoint
    u0 = np.zeros(INPUT_DIM)
    for a, b in zip(segs, segs[1:]):
        x = np.zeros(STATE_DIM)
        x[DOD] = a.dod_hi
        gap = float(np.max(np.abs(a.predict(x, u0) - b.predict(x, u0))))
        if gap > continuity_tol:
            problems.append(
                f"segment predictions differ by {gap:.3g} at breakpoint "
                f"{a.dod_hi} (tolerance {continuity_tol})"
            )

    # charge must never recover under any admissible input
    state_lo, state_hi = params.limits.state_box(params.dod_cutoff)
    in_lo, in_hi = params.limits.input_box()
    for k, seg in enumerate(segs):
        row_a = seg.a_mat[DOD].copy()
        row_a[DOD] -= 1.0
        worst = seg.e_vec[DOD]
        ok = True
        for j in range(STATE_DIM):
            coef = row_a[j]
            if coef == 0.0:
                continue
            lo, hi = coef * state_lo[j], coef * state_hi[j]
            if not math.isfinite(min(lo, hi)):
                problems.append(
                    f"segment {k}: charge row depends on unbounded state {STATE_LABELS[j]}"
                )
                ok = False
                break
            worst += min(lo, hi)
        if not ok:
            continue
        for j in range(INPUT_DIM):
            coef = seg.b_mat[DOD, j]
            worst += min(coef * in_lo[j], coef * in_hi[j])
        if worst < -1e-12:
            problems.append(
                f"segment {k}: depth of discharge can decrease by {-worst:.3g} per step"
            )

    # the thrust tie must stay representable inside the thrust_dev box
    tie = params.thrust_tie
    lo = hi = 0.0
    for coef, bound in ((tie.lift_coef, params.limits.lift),):
        lo += min(coef * bound[0], coef * bound[1])
        hi += max(coef * bound[0], coef * bound[1])
    for ax in range(3):
        coef = tie.velocity_coef[ax]
        v = params.limits.velocity[ax]
        lo -= abs(coef) * v
        hi += abs(coef) * v
    if lo < params.limits.thrust_dev[0] - 1e-9 or hi > params.limits.thrust_dev[1] + 1e-9:
        problems.append(
            f"thrust tie range [{lo:.3g}, {hi:.3g}] exceeds the thrust_dev box "
            f"{params.limits.thrust_dev}"
        )
    return problems


def params_to_dict(params: VehicleParams) -> dict:
    return {
        "name": params.name,
        "dt": params.dt,
        "mass": params.mass,
        "gravity": params.gravity,
        "motor_count": params.motor_count,
        "radius": params.radius,
        "p_dc_nom": params.p_dc_nom,
        "v_cruise": params.v_cruise,
        "charge_capacity": params.charge_capacity,
        "u_nominal": params.u_nominal,
        "dod_max": params.dod_max,
        "dod_cutoff": params.dod_cutoff,
        "limits": {
            "velocity": params.limits.velocity.tolist(),
            "attitude": params.limits.attitude.tolist(),
            "rate": params.limits.rate.tolist(),
            "lift": list(params.limits.lift),
            "torque": params.limits.torque.tolist(),
            "thrust_dev": list(params.limits.thrust_dev),
            "u_pol": list(params.limits.u_pol),
            "v_horizontal": params.limits.v_horizontal,
        },
        "thrust_tie": {
            "lift_coef": params.thrust_tie.lift_coef,
            "velocity_coef": params.thrust_tie.velocity_coef.tolist(),
        },
        "segments": [
            {
                "dod_range": [seg.dod_lo, seg.dod_hi],
                "a_mat": seg.a_mat.tolist(),
                "b_mat": seg.b_mat.tolist(),
                "e_vec": seg.e_vec.tolist(),
                "output": {
                    "ocv0": seg.output.ocv0,
                    "ocv_slope": seg.output.ocv_slope,
                    "r0": seg.output.r0,
                    "i_hover": seg.output.i_hover,
                    "i_per_thrust": seg.output.i_per_thrust,
                },
            }
            for seg in params.segments
        ],
        "meta": params.meta,
    }


def params_from_dict(data: dict, validate: bool = True) -> VehicleParams:
    try:
        limits = Limits(
            velocity=data["limits"]["velocity"],
            attitude=data["limits"]["attitude"],
            rate=data["limits"]["rate"],
            lift=tuple(data["limits"]["lift"]),
            torque=data["limits"]["torque"],
            thrust_dev=tuple(data["limits"]["thrust_dev"]),
            u_pol=tuple(data["limits"]["u_pol"]),
            v_horizontal=data["limits"].get("v_horizontal"),
        )
        tie = ThrustTie(
            lift_coef=data["thrust_tie"]["lift_coef"],
            velocity_coef=data["thrust_tie"]["velocity_coef"],
        )
        segments = [
            LpvSegment(
                dod_lo=seg["dod_range"][0],
                dod_hi=seg["dod_range"][1],
                a_mat=seg["a_mat"],
                b_mat=seg["b_mat"],
                e_vec=seg["e_vec"],
                output=OutputMap(**seg["output"]),
            )
            for seg in data["segments"]
        ]
        params = VehicleParams(
            name=data["name"],
            dt=data["dt"],
            mass=data["mass"],
            gravity=data["gravity"],
            motor_count=data["motor_count"],
            radius=data["radius"],
            p_dc_nom=data["p_dc_nom"],
            v_cruise=data["v_cruise"],
            charge_capacity=data["charge_capacity"],
            u_nominal=data["u_nominal"],
            dod_max=data["dod_max"],
            dod_cutoff=data["dod_cutoff"],
            limits=limits,
            thrust_tie=tie,
            segments=segments,
            meta=data.get("meta", {}),
        )
    except KeyError as exc:
        raise ParamsError(f"vehicle parameter file misses key {exc}") from exc
    if validate:
        problems = validate_params(params)
        if problems:
            raise ParamsError("; ".join(problems))
    return params


def load_params(path, validate: bool = True) -> VehicleParams:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return params_from_dict(data, validate=validate)


def save_params(params: VehicleParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh, indent=1)
