"""A small contract for linear-matrix-variable SDP feasibility problems.

Problems are described declaratively (variables plus block-structured LMI
constraints) so that the same description can be handed to a backend and
re-evaluated independently by :func:`verify_assignment`. Only the cvxpy
backend is provided.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import MalformedProblemError, MissingVariableError, SolverError
from .qmi import min_eig, sym
from .tolerances import get_tolerances

log = logging.getLogger(__name__)

SYMMETRIC = "symmetric"
RECTANGULAR = "rectangular"
SCALAR = "scalar"

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INACCURATE = "inaccurate"
FAILED = "failed"


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    shape: Tuple[int, int]


def symmetric(name, k):
    return Variable(name, SYMMETRIC, (k, k))


def rectangular(name, k, l):
    return Variable(name, RECTANGULAR, (k, l))


def scalar(name):
    return Variable(name, SCALAR, (1, 1))


@dataclass(frozen=True, eq=False)
class Term:
    """``coeff * left @ V @ right`` (``V^T`` if `transpose`).

    For scalar variables the value is ``coeff * v * left`` and `right` must
    be ``None``.
    """
    var: str
    left: Optional[np.ndarray] = None
    right: Optional[np.ndarray] = None
    transpose: bool = False
    coeff: float = 1.0

    def shape(self, variable: Variable):
        if variable.kind == SCALAR:
            if self.left is None:
                return (1, 1)
            return np.shape(np.atleast_2d(self.left))
        rows, cols = variable.shape[::-1] if self.transpose else variable.shape
        if self.left is not None:
            if self.left.shape[1] != rows:
                raise MalformedProblemError(
                    f"left factor of {self.var} has {self.left.shape[1]} "
                    f"columns, expected {rows}")
            rows = self.left.shape[0]
        if self.right is not None:
            if self.right.shape[0] != cols:
                raise MalformedProblemError(
                    f"right factor of {self.var} has {self.right.shape[0]} "
                    f"rows, expected {cols}")
            cols = self.right.shape[1]
        return (rows, cols)

    def value(self, V, kind):
        if kind == SCALAR:
            left = np.ones((1, 1)) if self.left is None else np.atleast_2d(self.left)
            return self.coeff * V * left
        X = V.T if self.transpose else V
        if self.left is not None:
            X = self.left @ X
        if self.right is not None:
            X = X @ self.right
        return self.coeff * X


@dataclass(frozen=True, eq=False)
class Block:
    row: int
    col: int
    terms: Tuple[Term, ...]


@dataclass(frozen=True, eq=False)
class LmiConstraint:
    """``constant + sum of placed blocks >= 0``.

    A block at ``(i, j)`` with ``i != j`` also contributes its transpose at
    ``(j, i)``; a diagonal block contributes its symmetric part.
    """
    name: str
    sizes: Tuple[int, ...]
    constant: np.ndarray
    blocks: Tuple[Block, ...]

    @property
    def order(self):
        return int(sum(self.sizes))

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)


@dataclass(frozen=True, eq=False)
class SdpProblem:
    variables: Tuple[Variable, ...]
    constraints: Tuple[LmiConstraint, ...]
    objective: Optional[str] = None  # name of a scalar variable to maximize

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise MalformedProblemError("duplicate variable names")
        lookup = self.variable_map
        for c in self.constraints:
            if np.shape(c.constant) != (c.order, c.order):
                raise MalformedProblemError(
                    f"constraint {c.name}: constant has shape "
                    f"{np.shape(c.constant)}, expected order {c.order}")
            for b in c.blocks:
                if not (0 <= b.row < len(c.sizes) and 0 <= b.col < len(c.sizes)):
                    raise MalformedProblemError(
                        f"constraint {c.name}: block index ({b.row}, {b.col}) "
                        "out of range")
                want = (c.sizes[b.row], c.sizes[b.col])
                for t in b.terms:
                    if t.var not in lookup:
                        raise MalformedProblemError(f"unknown variable {t.var!r}")
                    if t.shape(lookup[t.var]) != want:
                        raise MalformedProblemError(
                            f"constraint {c.name}: term in {t.var} has shape "
                            f"{t.shape(lookup[t.var])}, block expects {want}")
        if self.objective is not None:
            v = lookup.get(self.objective)
            if v is None or v.kind != SCALAR:
                raise MalformedProblemError(
                    "objective must name a scalar variable")

    @property
    def variable_map(self) -> Dict[str, Variable]:
        return {v.name: v for v in self.variables}


@dataclass
class SdpSolution:
    status: str
    assignment: Dict[str, np.ndarray] = field(default_factory=dict)
    max_violation: float = np.inf
    objective_value: Optional[float] = None
    solver: Optional[str] = None
    attempts: list = field(default_factory=list)

    @property
    def feasible(self):
        return self.status == FEASIBLE


@dataclass(frozen=True)
class SolveOptions:
    solvers: Sequence[str] = ("CLARABEL", "CVXOPT", "SCS")
    feasibility_tol: Optional[float] = None
    verbose: bool = False


def _block_value(block, c, lookup, values):
    total = np.zeros((c.sizes[block.row], c.sizes[block.col]))
    for t in block.terms:
        V = np.atleast_2d(np.asarray(values[t.var], dtype=float))
        if lookup[t.var].kind == SCALAR:
            V = float(V.reshape(-1)[0])
        total = total + t.value(V, lookup[t.var].kind)
    return total


def evaluate_constraint(c: LmiConstraint, problem: SdpProblem, values):
    """Dense symmetric matrix of constraint `c` at the given assignment."""
    lookup = problem.variable_map
    F = np.array(c.constant, dtype=float)
    off = c.offsets
    for b in c.blocks:
        Vb = _block_value(b, c, lookup, values)
        ri = slice(off[b.row], off[b.row + 1])
        ci = slice(off[b.col], off[b.col + 1])
        if b.row == b.col:
            F[ri, ci] += sym(Vb)
        else:
            F[ri, ci] += Vb
            F[ci, ri] += Vb.T
    return sym(F)


def verify_assignment(problem: SdpProblem, assignment) -> float:
    """Worst ``lambda_min`` deficit over all constraints (0 when feasible).

    Evaluated with numpy only, independent of whichever backend produced
    `assignment`.
    """
    missing = [v.name for v in problem.variables if v.name not in assignment]
    if missing:
        raise MissingVariableError(f"assignment lacks {missing}")
    worst = 0.0
    for c in problem.constraints:
        worst = max(worst, -min_eig(evaluate_constraint(c, problem, assignment)))
    return worst


def constraint_margins(problem: SdpProblem, assignment):
    return {c.name: min_eig(evaluate_constraint(c, problem, assignment))
            for c in problem.constraints}


def _selector(c: LmiConstraint, i):
    S = np.zeros((c.order, c.sizes[i]))
    off = c.offsets
    S[off[i]:off[i + 1], :] = np.eye(c.sizes[i])
    return S


def _cvxpy_model(problem: SdpProblem):
    import cvxpy as cp

    cvars = {}
    for v in problem.variables:
        if v.kind == SCALAR:
            cvars[v.name] = cp.Variable(name=v.name)
        elif v.kind == SYMMETRIC:
            cvars[v.name] = cp.Variable(v.shape, symmetric=True, name=v.name)
        else:
            cvars[v.name] = cp.Variable(v.shape, name=v.name)
    lookup = problem.variable_map
    constraints = []
    for c in problem.constraints:
        expr = cp.Constant(np.asarray(c.constant, dtype=float))
        for b in c.blocks:
            Vb = sum(t.value(cvars[t.var], lookup[t.var].kind) for t in b.terms)
            Sr, Sc = _selector(c, b.row), _selector(c, b.col)
            if b.row == b.col:
                expr = expr + 0.5 * (Sr @ Vb @ Sr.T + Sr @ Vb.T @ Sr.T)
            else:
                expr = expr + Sr @ Vb @ Sc.T + Sc @ Vb.T @ Sr.T
        constraints.append(0.5 * (expr + expr.T) >> 0)
    return cvars, constraints


_SOLVER_SETTINGS = {
    "CLARABEL": dict(tol_gap_abs=1e-9, tol_gap_rel=1e-9, tol_feas=1e-9,
                     max_iter=500),
    "CVXOPT": dict(abstol=1e-9, reltol=1e-9, feastol=1e-9, max_iters=500),
    "SCS": dict(eps_abs=1e-9, eps_rel=1e-9, max_iters=200000),
}


def _values(problem, cvars):
    out = {}
    for v in problem.variables:
        val = cvars[v.name].value
        if val is None:
            return None
        out[v.name] = np.atleast_2d(np.asarray(val, dtype=float))
    return out


def _solve_once(problem, solver, cvars, constraints, with_objective, verbose):
    import cvxpy as cp

    if with_objective and problem.objective is not None:
        objective = cp.Maximize(cvars[problem.objective])
    else:
        objective = cp.Minimize(0)
    prob = cp.Problem(objective, constraints)
    prob.solve(solver=solver, verbose=verbose,
               **_SOLVER_SETTINGS.get(solver, {}))
    return prob.status


def solve(problem: SdpProblem, options: Optional[SolveOptions] = None) -> SdpSolution:
    """Solve with the first backend in the restart schedule that succeeds.

    ``infeasible`` is only reported on a backend infeasibility certificate.
    Backends that stop inaccurately are retried with the next solver; if
    the whole schedule is exhausted without a verified point or a
    certificate the status is ``inaccurate`` (or ``failed`` when no backend
    returned anything usable).
    """
    import cvxpy as cp

    options = options or SolveOptions()
    tol = options.feasibility_tol
    if tol is None:
        tol = get_tolerances().feasibility
    cvars, constraints = _cvxpy_model(problem)
    installed = set(cp.installed_solvers())
    best = SdpSolution(FAILED)
    for solver in options.solvers:
        if solver not in installed:
            continue
        try:
            status = _solve_once(problem, solver, cvars, constraints, True,
                                 options.verbose)
            if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
                # objective unbounded above: any feasible point will do
                status = _solve_once(problem, solver, cvars, constraints,
                                     False, options.verbose)
        except (KeyboardInterrupt, SystemExit):
            raise
        except BaseException as exc:    # Rust backends raise panics outside Exception
            log.debug("backend %s failed: %s", solver, exc)
            best.attempts.append((solver, f"error: {exc}"))
            continue
        best.attempts.append((solver, status))
        if status == cp.INFEASIBLE:
            return SdpSolution(INFEASIBLE, solver=solver, attempts=best.attempts)
        values = _values(problem, cvars)
        if values is None:
            if status == cp.INFEASIBLE_INACCURATE:
                best.status = INACCURATE
            continue
        violation = verify_assignment(problem, values)
        objective = (float(values[problem.objective][0, 0])
                     if problem.objective else None)
        if violation <= tol:
            return SdpSolution(FEASIBLE, values, violation, objective, solver,
                               best.attempts)
        if violation < best.max_violation:
            best = SdpSolution(INACCURATE, values, violation, objective, solver,
                               best.attempts)
        else:
            best.status = INACCURATE
    if best.status == FAILED and not best.attempts:
        raise SolverError("no usable SDP backend is installed")
    return best


def _arr(A):
    return None if A is None else np.asarray(A, dtype=float).tolist()


def problem_to_dict(problem: SdpProblem):
    """JSON-ready dump of a problem, for offline debugging."""
    return {
        "variables": [{"name": v.name, "kind": v.kind, "shape": list(v.shape)}
                      for v in problem.variables],
        "constraints": [{
            "name": c.name,
            "sizes": list(c.sizes),
            "constant": _arr(c.constant),
            "blocks": [{
                "row": b.row, "col": b.col,
                "terms": [{"var": t.var, "left": _arr(t.left),
                           "right": _arr(t.right), "transpose": t.transpose,
                           "coeff": t.coeff} for t in b.terms],
            } for b in c.blocks],
        } for c in problem.constraints],
        "objective": problem.objective,
    }


def problem_from_dict(d) -> SdpProblem:
    def opt(a):
        return None if a is None else np.atleast_2d(np.asarray(a, dtype=float))

    variables = tuple(Variable(v["name"], v["kind"], tuple(v["shape"]))
                      for v in d["variables"])
    constraints = tuple(LmiConstraint(
        c["name"], tuple(c["sizes"]), np.asarray(c["constant"], dtype=float),
        tuple(Block(b["row"], b["col"], tuple(
            Term(t["var"], opt(t["left"]), opt(t["right"]), t["transpose"],
                 t["coeff"]) for t in b["terms"])) for b in c["blocks"]))
        for c in d["constraints"])
    return SdpProblem(variables, constraints, d.get("objective"))
