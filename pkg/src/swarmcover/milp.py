"""Mixed-integer linear model container and geometric constraint encoders.

The model stores continuous/binary variables, linear constraints and a linear
objective in solver-neutral form; :mod:`swarmcover.solvers` turns it into
matrices.  Encoders translate norm bounds and convex-region membership into
linear rows, using binary relaxation ("big M") where a disjunction is needed.
Each relaxation constant is validated against the variable bounds so that a
disabled constraint is provably vacuous, and the tightest valid constant (at
most ``m_big``) is used.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .geometry import ConvexRegion, PolyApprox

CONTINUOUS = "continuous"
BINARY = "binary"

LE = "<="
GE = ">="
EQ = "=="

FEASIBILITY_TOL = 1e-6
INTEGRALITY_TOL = 1e-6
M_BIG_DEFAULT = 1e4


class ModelError(ValueError):
    """Malformed model input (bad bounds, foreign variables, ...)."""


class BigMError(ModelError):
    """A relaxation needs a bigger constant than the model's ``m_big``."""


@dataclass(eq=False)
class VarHandle:
    """A decision variable; bounds may be tightened (fixed) after creation.

    ``branch_priority`` and ``branch_up`` steer the built-in solver: higher
    priority binaries are branched first, and ``branch_up`` forces the dive
    side (None dives toward the relaxation value).
    """

    index: int
    kind: str
    lb: float
    ub: float
    name: str = ""
    branch_priority: int = 0
    branch_up: bool | None = None

    def __add__(self, other):
        return as_expr(self) + other

    __radd__ = __add__

    def __sub__(self, other):
        return as_expr(self) - other

    def __rsub__(self, other):
        return as_expr(other) - self

    def __mul__(self, factor):
        return as_expr(self) * factor

    __rmul__ = __mul__

    def __neg__(self):
        return as_expr(self) * -1.0


class LinExpr:
    """A linear expression ``sum(coef * var) + constant``."""

    __slots__ = ("coefs", "constant")

    def __init__(self, coefs: dict[int, float] | None = None, constant: float = 0.0):
        self.coefs = coefs if coefs is not None else {}
        self.constant = float(constant)

    def copy(self) -> "LinExpr":
        return LinExpr(dict(self.coefs), self.constant)

    def add_term(self, var: VarHandle, coef: float) -> "LinExpr":
        if coef != 0.0:
            self.coefs[var.index] = self.coefs.get(var.index, 0.0) + coef
        return self

    def __add__(self, other) -> "LinExpr":
        out = self.copy()
        other = as_expr(other)
        for idx, coef in other.coefs.items():
            out.coefs[idx] = out.coefs.get(idx, 0.0) + coef
        out.constant += other.constant
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + (as_expr(other) * -1.0)

    def __rsub__(self, other):
        return as_expr(other) + (self * -1.0)

    def __mul__(self, factor) -> "LinExpr":
        factor = float(factor)
        return LinExpr({i: c * factor for i, c in self.coefs.items()}, self.constant * factor)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


ExprLike = Union[LinExpr, VarHandle, float, int]


def as_expr(x: ExprLike) -> LinExpr:
    if isinstance(x, LinExpr):
        return x
    if isinstance(x, VarHandle):
        return LinExpr({x.index: 1.0})
    return LinExpr({}, float(x))


def dot(coefs: Sequence[float], items: Sequence[ExprLike]) -> LinExpr:
    """``sum(c * x)`` over paired coefficients and variables/expressions."""
    out = LinExpr()
    for c, x in zip(coefs, items):
        if c != 0.0:
            out = out + as_expr(x) * float(c)
    return out


@dataclass
class Constraint:
    expr: LinExpr
    sense: str
    rhs: float
    name: str = ""


class MilpModel:
    """Variables, linear constraints and a linear minimization objective."""

    def __init__(self, name: str = "model", m_big: float = M_BIG_DEFAULT):
        if not math.isfinite(m_big) or m_big <= 0:
            raise ModelError(f"m_big must be a finite positive constant, got {m_big}")
        self.name = name
        self.m_big = float(m_big)
        self.variables: list[VarHandle] = []
        self.constraints: list[Constraint] = []
        self.objective: LinExpr = LinExpr()

    # -- variables ---------------------------------------------------------

    def add_continuous(self, lb: float = -math.inf, ub: float = math.inf,
                       name: str = "") -> VarHandle:
        if lb > ub:
            raise ModelError(f"empty bound interval [{lb}, {ub}] for '{name}'")
        var = VarHandle(len(self.variables), CONTINUOUS, float(lb), float(ub), name)
        self.variables.append(var)
        return var

    def add_binary(self, name: str = "") -> VarHandle:
        var = VarHandle(len(self.variables), BINARY, 0.0, 1.0, name)
        self.variables.append(var)
        return var

    def fix(self, var: VarHandle, value: float) -> VarHandle:
        var.lb = var.ub = float(value)
        return var

    @property
    def n_binary(self) -> int:
        return sum(1 for v in self.variables if v.kind == BINARY)

    @property
    def n_free_binary(self) -> int:
        return sum(1 for v in self.variables if v.kind == BINARY and v.lb != v.ub)

    # -- constraints and objective -----------------------------------------

    def _check_expr(self, expr: LinExpr) -> None:
        for idx, coef in expr.coefs.items():
            if not (0 <= idx < len(self.variables)):
                raise ModelError(f"expression references unknown variable index {idx}")
            if not math.isfinite(coef):
                raise ModelError("non-finite coefficient in expression")

    def add_constraint(self, expr: ExprLike, sense: str, rhs: float = 0.0,
                       name: str = "") -> Constraint:
        if sense not in (LE, GE, EQ):
            raise ModelError(f"unknown constraint sense {sense!r}")
        expr = as_expr(expr)
        self._check_expr(expr)
        con = Constraint(expr, sense, float(rhs), name)
        self.constraints.append(con)
        return con

    def add_le(self, expr: ExprLike, rhs: float = 0.0, name: str = "") -> Constraint:
        return self.add_constraint(expr, LE, rhs, name)

    def add_ge(self, expr: ExprLike, rhs: float = 0.0, name: str = "") -> Constraint:
        return self.add_constraint(expr, GE, rhs, name)

    def add_eq(self, expr: ExprLike, rhs: float = 0.0, name: str = "") -> Constraint:
        return self.add_constraint(expr, EQ, rhs, name)

    def set_objective(self, expr: ExprLike) -> None:
        expr = as_expr(expr)
        self._check_expr(expr)
        self.objective = expr

    # -- interval arithmetic -------------------------------------------------

    def expr_bounds(self, expr: ExprLike) -> tuple[float, float]:
        """Lower/upper bound of an expression over the variable boxes."""
        expr = as_expr(expr)
        lo = hi = expr.constant
        for idx, coef in expr.coefs.items():
            var = self.variables[idx]
            a, b = coef * var.lb, coef * var.ub
            lo += min(a, b)
            hi += max(a, b)
        return lo, hi

    def relaxation_constant(self, violation: ExprLike) -> float:
        """Smallest M so that ``violation <= M`` holds over the variable boxes.

        ``violation`` is the amount by which a relaxed row could be exceeded;
        rejects models whose bounds admit more slack than ``m_big``.
        """
        _, hi = self.expr_bounds(violation)
        needed = max(hi, 0.0)
        if not math.isfinite(needed):
            raise BigMError(
                "cannot bound a relaxed constraint: a participating variable "
                "is unbounded"
            )
        if needed > self.m_big:
            raise BigMError(
                f"relaxation needs M >= {needed:.6g} but the model caps it at "
                f"m_big = {self.m_big:.6g}; feasible space would be cut"
            )
        return needed

    # -- export ---------------------------------------------------------------

    def _var_names(self) -> list[str]:
        names = []
        seen = set()
        for var in self.variables:
            base = re.sub(r"[^A-Za-z0-9_]", "_", var.name) or "v"
            if base[0].isdigit():
                base = "v" + base
            name = f"{base}_{var.index}" if (base in seen or not var.name) else base
            seen.add(name)
            names.append(name)
        return names

    def to_lp_string(self) -> str:
        """Human-readable LP-format text (one constraint per line)."""
        names = self._var_names()

        def render(expr: LinExpr) -> str:
            parts = []
            for idx in sorted(expr.coefs):
                coef = expr.coefs[idx]
                sign = "-" if coef < 0 else "+"
                parts.append(f"{sign} {abs(coef):.12g} {names[idx]}")
            if not parts:
                return "0"
            text = " ".join(parts)
            return text[2:] if text.startswith("+ ") else text

        lines = [f"\\ {self.name}", "Minimize"]
        if self.objective.constant:
            lines.append(f"\\ objective constant: {self.objective.constant:.12g}")
        lines.append(f" obj: {render(self.objective)}")
        lines.append("Subject To")
        for k, con in enumerate(self.constraints):
            label = con.name or f"c{k}"
            sense = {LE: "<=", GE: ">=", EQ: "="}[con.sense]
            lines.append(f" {label}: {render(con.expr)} {sense} {con.rhs - con.expr.constant:.12g}")
        lines.append("Bounds")
        for var, name in zip(self.variables, names):
            if var.kind == BINARY and (var.lb, var.ub) == (0.0, 1.0):
                continue
            lo = f"{var.lb:.12g}" if math.isfinite(var.lb) else "-inf"
            hi = f"{var.ub:.12g}" if math.isfinite(var.ub) else "+inf"
            lines.append(f" {lo} <= {name} <= {hi}")
        binaries = [n for v, n in zip(self.variables, names) if v.kind == BINARY]
        if binaries:
            lines.append("Binaries")
            lines.append(" " + " ".join(binaries))
        lines.append("End")
        return "\n".join(lines) + "\n"

    def write_lp(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_lp_string())


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------


def encode_abs(model: MilpModel, a: ExprLike, name: str = "abs") -> VarHandle:
    """Add a slack ``s >= |a|`` (tight under minimization) and return it."""
    lo, hi = model.expr_bounds(a)
    ub = max(abs(lo), abs(hi)) if math.isfinite(lo) and math.isfinite(hi) else math.inf
    slack = model.add_continuous(0.0, ub, name)
    model.add_le(as_expr(a) - slack, 0.0, f"{name}_ub")
    model.add_le(-as_expr(a) - slack, 0.0, f"{name}_lb")
    return slack


def _vec_exprs(vec: Sequence[ExprLike]) -> list[LinExpr]:
    if len(vec) != 3:
        raise ModelError(f"expected a 3-vector of variables/expressions, got {len(vec)}")
    return [as_expr(v) for v in vec]


def encode_norm_ub(
    model: MilpModel,
    vec: Sequence[ExprLike],
    approx: PolyApprox,
    bound: ExprLike,
    relax_binary: VarHandle | None = None,
    inner: bool = False,
    name: str = "norm_ub",
) -> None:
    """Constrain the approximated norm of ``vec`` to stay below ``bound``.

    Adds one row per face: ``f_h(vec) <= bound * c_in`` where ``c_in`` is the
    inscribed scaling if ``inner`` else 1.  When ``relax_binary`` is given the
    rows only bind while the binary is 1.
    """
    exprs = _vec_exprs(vec)
    scale = approx.c_in_inner if inner else approx.c_in_outer
    bound_expr = as_expr(bound) * scale
    for h, face in enumerate(approx.faces):
        f = dot((face.cx, face.cy, face.cz), exprs)
        row = f - bound_expr
        if relax_binary is not None:
            m = model.relaxation_constant(row)
            row = row + m * relax_binary - m
        model.add_le(row, 0.0, f"{name}_f{h}")


def encode_norm_lb(
    model: MilpModel,
    vec: Sequence[ExprLike],
    approx: PolyApprox,
    bound: ExprLike,
    name: str = "norm_lb",
) -> list[VarHandle]:
    """Require the norm of ``vec`` to reach ``bound`` on at least one face.

    Each face is relaxed by its own binary, and at most ``n_faces - 1`` faces
    may be relaxed, so one face function must exceed ``bound``.  Since every
    face function underestimates the true norm, an accepted vector satisfies
    the exact bound.  Returns the per-face binaries.
    """
    exprs = _vec_exprs(vec)
    bound_expr = as_expr(bound)
    binaries = []
    for h, face in enumerate(approx.faces):
        b = model.add_binary(f"{name}_b{h}")
        f = dot((face.cx, face.cy, face.cz), exprs)
        m = model.relaxation_constant(bound_expr - f)
        # f >= bound - M*b
        model.add_ge(f - bound_expr + m * b, 0.0, f"{name}_f{h}")
        binaries.append(b)
    model.add_le(
        dot([1.0] * len(binaries), binaries),
        len(binaries) - 1,
        f"{name}_card",
    )
    return binaries


def encode_hull_inside(
    model: MilpModel,
    p: Sequence[ExprLike],
    region: ConvexRegion,
    delta: float = 0.0,
    name: str = "inside",
) -> None:
    """Keep point ``p`` inside ``region`` inflated (delta > 0) or deflated
    (delta < 0) by ``delta``."""
    exprs = _vec_exprs(p)
    for h, face in enumerate(region.faces):
        d = dot((face.cx, face.cy, face.cz), exprs) + face.c0
        model.add_le(d, float(delta), f"{name}_f{h}")


def encode_hull_outside(
    model: MilpModel,
    p: Sequence[ExprLike],
    region: ConvexRegion,
    delta: float = 0.0,
    name: str = "outside",
) -> list[VarHandle]:
    """Keep point ``p`` at signed distance >= ``delta`` from ``region``: at
    least one face plane must separate the point.  Returns per-face binaries
    (1 = that face's row is relaxed)."""
    exprs = _vec_exprs(p)
    binaries = []
    for h, face in enumerate(region.faces):
        b = model.add_binary(f"{name}_b{h}")
        d = dot((face.cx, face.cy, face.cz), exprs) + face.c0
        m = model.relaxation_constant(as_expr(delta) - d)
        model.add_ge(d - delta + m * b, 0.0, f"{name}_f{h}")
        binaries.append(b)
    model.add_le(
        dot([1.0] * len(binaries), binaries),
        len(binaries) - 1,
        f"{name}_card",
    )
    return binaries
