"""Solving MilpModel instances.

Two interchangeable backends sit behind :func:`solve`:

* ``fallback`` -- a built-in branch-and-bound search over binary variables
  (exact; LP relaxations solved with scipy's HiGHS linear programming).
* ``external`` -- scipy's HiGHS mixed-integer solver, the faster choice for
  larger models.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp

from .milp import (
    BINARY,
    GE,
    INTEGRALITY_TOL,
    LE,
    ExprLike,
    MilpModel,
    VarHandle,
    as_expr,
)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time_limit"

BACKENDS = ("fallback", "external")

# fallback search knob: incumbent must improve by this relative margin
_PRUNE_EPS = 1e-9


class SolverError(RuntimeError):
    """The backend failed in a way that is not plain infeasibility."""


@dataclass
class MilpSolution:
    """Solve outcome: a status, the variable values and the objective."""

    status: str
    objective: float | None = None
    values: np.ndarray | None = None
    nodes: int = 0
    wall_time: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def has_values(self) -> bool:
        return self.values is not None

    def value(self, var: VarHandle) -> float:
        if self.values is None:
            raise SolverError(f"no solution values available (status={self.status})")
        return float(self.values[var.index])

    def value_list(self, handles) -> list[float]:
        return [self.value(h) for h in handles]

    def eval(self, expr: ExprLike) -> float:
        expr = as_expr(expr)
        if self.values is None:
            raise SolverError(f"no solution values available (status={self.status})")
        total = expr.constant
        for idx, coef in expr.coefs.items():
            total += coef * float(self.values[idx])
        return total


@dataclass
class _Arrays:
    c: np.ndarray
    a_ub: sp.csr_matrix | None
    b_ub: np.ndarray | None
    a_eq: sp.csr_matrix | None
    b_eq: np.ndarray | None
    lb: np.ndarray
    ub: np.ndarray
    binary_idx: np.ndarray
    priority: np.ndarray     # per binary, branched high-to-low
    dive_up: np.ndarray      # per binary: 1.0/0.0 forced dive side, nan = round


def _to_arrays(model: MilpModel) -> _Arrays:
    n = len(model.variables)
    c = np.zeros(n)
    for idx, coef in model.objective.coefs.items():
        c[idx] = coef

    rows_ub: list[tuple[int, int, float]] = []
    rhs_ub: list[float] = []
    rows_eq: list[tuple[int, int, float]] = []
    rhs_eq: list[float] = []
    for con in model.constraints:
        if con.sense == LE:
            sign, rows, rhs = 1.0, rows_ub, rhs_ub
        elif con.sense == GE:
            sign, rows, rhs = -1.0, rows_ub, rhs_ub
        else:
            sign, rows, rhs = 1.0, rows_eq, rhs_eq
        r = len(rhs)
        for idx, coef in con.expr.coefs.items():
            rows.append((r, idx, sign * coef))
        rhs.append(sign * (con.rhs - con.expr.constant))

    def build(rows, rhs):
        if not rhs:
            return None, None
        data = np.array([t[2] for t in rows])
        ij = np.array([(t[0], t[1]) for t in rows]).T
        mat = sp.csr_matrix((data, ij), shape=(len(rhs), n))
        return mat, np.array(rhs)

    a_ub, b_ub = build(rows_ub, rhs_ub)
    a_eq, b_eq = build(rows_eq, rhs_eq)
    lb = np.array([v.lb for v in model.variables])
    ub = np.array([v.ub for v in model.variables])
    binaries = [v for v in model.variables if v.kind == BINARY]
    binary_idx = np.array([v.index for v in binaries], dtype=int)
    priority = np.array([v.branch_priority for v in binaries], dtype=float)
    dive_up = np.array(
        [math.nan if v.branch_up is None else float(v.branch_up) for v in binaries]
    )
    return _Arrays(c, a_ub, b_ub, a_eq, b_eq, lb, ub, binary_idx, priority, dive_up)


def solve(model: MilpModel, time_limit: float | None = None,
          backend: str = "fallback") -> MilpSolution:
    """Solve ``model`` (minimize) and return a :class:`MilpSolution`.

    An exceeded ``time_limit`` is reported through the status (with the best
    incumbent's values when one was found), never raised.
    """
    if backend not in BACKENDS:
        raise SolverError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    arrays = _to_arrays(model)
    start = time.perf_counter()
    if backend == "external":
        solution = _solve_external(arrays, time_limit)
    else:
        solution = _solve_fallback(arrays, time_limit)
    solution.wall_time = time.perf_counter() - start
    return solution


def constraint_violation(model: MilpModel, solution: MilpSolution) -> float:
    """Largest constraint/bounds violation of the solution (for checks)."""
    worst = 0.0
    for con in model.constraints:
        val = solution.eval(con.expr)
        if con.sense == LE:
            worst = max(worst, val - con.rhs)
        elif con.sense == GE:
            worst = max(worst, con.rhs - val)
        else:
            worst = max(worst, abs(val - con.rhs))
    for var in model.variables:
        v = float(solution.values[var.index])
        worst = max(worst, var.lb - v, v - var.ub)
    return worst


# ---------------------------------------------------------------------------
# external backend: HiGHS MILP through scipy
# ---------------------------------------------------------------------------


def _solve_external(arrays: _Arrays, time_limit: float | None) -> MilpSolution:
    n = arrays.c.size
    constraints = []
    if arrays.a_ub is not None:
        constraints.append(
            sopt.LinearConstraint(arrays.a_ub, -np.inf, arrays.b_ub)
        )
    if arrays.a_eq is not None:
        constraints.append(
            sopt.LinearConstraint(arrays.a_eq, arrays.b_eq, arrays.b_eq)
        )
    integrality = np.zeros(n)
    integrality[arrays.binary_idx] = 1
    options = {"presolve": True, "mip_rel_gap": 0.0}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = sopt.milp(
        c=arrays.c,
        constraints=constraints or None,
        bounds=sopt.Bounds(arrays.lb, arrays.ub),
        integrality=integrality,
        options=options,
    )
    if res.status == 0:
        return MilpSolution(OPTIMAL, float(res.fun), np.asarray(res.x))
    if res.status == 1:
        values = np.asarray(res.x) if res.x is not None else None
        objective = float(res.fun) if values is not None else None
        return MilpSolution(TIME_LIMIT, objective, values)
    if res.status == 2:
        return MilpSolution(INFEASIBLE)
    raise SolverError(f"external solver failed: {res.message}")


# ---------------------------------------------------------------------------
# fallback backend: branch and bound on binaries
# ---------------------------------------------------------------------------


def _lp(arrays: _Arrays, lb: np.ndarray, ub: np.ndarray):
    res = sopt.linprog(
        arrays.c,
        A_ub=arrays.a_ub,
        b_ub=arrays.b_ub,
        A_eq=arrays.a_eq,
        b_eq=arrays.b_eq,
        bounds=np.column_stack((lb, ub)),
        method="highs",
    )
    if res.status == 0:
        return float(res.fun), np.asarray(res.x)
    if res.status == 2:
        return None, None
    if res.status == 3:
        raise SolverError("linear relaxation is unbounded; add variable bounds")
    raise SolverError(f"linear relaxation failed: {res.message}")


def _branch_choice(x: np.ndarray, arrays: _Arrays) -> tuple[int, float]:
    """Branch variable (by priority, then fractionality) and its dive side;
    returns (-1, 0) when all binaries are integral."""
    if arrays.binary_idx.size == 0:
        return -1, 0.0
    vals = x[arrays.binary_idx]
    frac = np.abs(vals - np.round(vals))
    key = np.where(frac > INTEGRALITY_TOL, arrays.priority + frac, -1.0)
    k = int(np.argmax(key))
    if key[k] < 0.0:
        return -1, 0.0
    side = arrays.dive_up[k]
    if math.isnan(side):
        side = 1.0 if vals[k] >= 0.5 else 0.0
    return int(arrays.binary_idx[k]), side


def _solve_fallback(arrays: _Arrays, time_limit: float | None) -> MilpSolution:
    """Depth-first branch and bound with bound pruning.

    Nodes carry the parent's LP objective as a lazy bound and the search
    follows the rounding side of the branched binary first, so feasible
    incumbents appear early; the tree is exhausted for a proven optimum
    unless the clock runs out (then the best incumbent is returned with the
    time_limit status).
    """
    deadline = None if time_limit is None else time.perf_counter() + float(time_limit)
    incumbent_x = None
    incumbent_obj = math.inf
    nodes = 0

    def prune_level() -> float:
        return incumbent_obj - _PRUNE_EPS * max(1.0, abs(incumbent_obj))

    stack: list[tuple[float, tuple[tuple[int, float, float], ...]]] = [(-math.inf, ())]
    stopped = False

    while stack:
        if deadline is not None and time.perf_counter() > deadline:
            stopped = True
            break
        bound, fixings = stack.pop()
        if bound >= prune_level():
            continue
        lb, ub = arrays.lb.copy(), arrays.ub.copy()
        for idx, lo, hi in fixings:
            lb[idx], ub[idx] = lo, hi
        obj, x = _lp(arrays, lb, ub)
        nodes += 1
        if x is None or obj >= prune_level():
            continue
        branch_idx, first = _branch_choice(x, arrays)
        if branch_idx < 0:
            incumbent_obj, incumbent_x = obj, x
            continue
        other = 1.0 - first
        stack.append((obj, fixings + ((branch_idx, other, other),)))
        stack.append((obj, fixings + ((branch_idx, first, first),)))

    if stopped:
        if incumbent_x is not None:
            return MilpSolution(TIME_LIMIT, incumbent_obj, incumbent_x, nodes)
        return MilpSolution(TIME_LIMIT, nodes=nodes)
    if incumbent_x is None:
        return MilpSolution(INFEASIBLE, nodes=nodes)
    return MilpSolution(OPTIMAL, incumbent_obj, incumbent_x, nodes)


def enumerate_binaries(model: MilpModel, limit: int = 25) -> MilpSolution:
    """Exhaustive reference solve: try every assignment of the free binaries
    and keep the best LP over the continuous remainder.  Only for tiny models
    (guarded by ``limit``); used as an independent check of the backends."""
    arrays = _to_arrays(model)
    free = [int(i) for i in arrays.binary_idx if arrays.lb[i] != arrays.ub[i]]
    if len(free) > limit:
        raise SolverError(f"{len(free)} free binaries exceed the enumeration limit {limit}")
    best_obj, best_x = math.inf, None
    for bits in itertools.product((0.0, 1.0), repeat=len(free)):
        lb, ub = arrays.lb.copy(), arrays.ub.copy()
        for idx, bit in zip(free, bits):
            lb[idx] = ub[idx] = bit
        obj, x = _lp(arrays, lb, ub)
        if x is not None and obj < best_obj:
            best_obj, best_x = obj, x
    if best_x is None:
        return MilpSolution(INFEASIBLE)
    return MilpSolution(OPTIMAL, best_obj, best_x)
