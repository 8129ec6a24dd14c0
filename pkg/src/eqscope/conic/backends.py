"""Lowering to the ``Ax + s = b, s in K`` standard form and solver adapters."""

from __future__ import annotations

import copy
import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
import scipy.sparse as sp

from .ir import (Affine, ConicProgram, Objective, Relation, Sense, SocConstraint,
                 ValidationError, VariableHandle, validate)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
CONST_TOL = 1e-9


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_TROUBLE = "numerical_trouble"


@dataclass
class Solution:
    status: Status
    x: Optional[np.ndarray] = None
    primal_values: dict = field(default_factory=dict)
    objective_value: float = math.nan
    dual_objective_value: Optional[float] = None
    max_violation: float = math.nan
    diagnostic: str = ""
    solve_time: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, expr):
        """Evaluate an expression, or an array of them, at the primal point."""
        if isinstance(expr, np.ndarray):
            return np.vectorize(lambda e: _eval(e, self.x), otypes=[float])(expr)
        if isinstance(expr, VariableHandle):
            return self.primal_values[expr]
        return _eval(expr, self.x)


def _eval(e, x) -> float:
    if isinstance(e, Affine):
        return e.evaluate(x)
    return float(e)


class SolverBackend(Protocol):
    name: str

    def solve_standard(self, sf: "StandardForm") -> "RawResult": ...


@dataclass
class RawResult:
    status: Status
    x: Optional[np.ndarray]
    primal_obj: float = math.nan
    dual_obj: Optional[float] = None
    diagnostic: str = ""


# ---------------------------------------------------------------------------
# lowering

def lower_quadratic_objective(p: ConicProgram) -> tuple[ConicProgram, str]:
    """Rewrite a sum-of-squares objective as a linear one over a cone epigraph.

    A pure sum of squares becomes ``min s, ||sqrt(w) r|| <= s`` (same
    minimiser, optimum squared). With a linear part, the rotated cone
    ``||(2 sqrt(w) r, u - 1)|| <= u + 1`` encodes ``u >= sum w r^2``.
    Returns the new program and ``"none" | "norm" | "rotated"``.
    """
    obj = p.objective
    if not obj.squares:
        return p, "none"
    q = copy.copy(p)
    q.variables = list(p.variables)
    q.soc = list(p.soc)
    stack = [r * math.sqrt(w) for w, r in obj.squares if w > 0]
    if obj.linear.is_constant:
        s = q.scalar("_sos_norm")
        q.soc.append(SocConstraint(s, stack, tag="epigraph"))
        q.objective = Objective(Sense.MIN, s, [])
        return q, "norm"
    u = q.scalar("_sos_epi")
    q.soc.append(SocConstraint(u + 1.0, [2.0 * r for r in stack] + [u - 1.0], tag="epigraph"))
    q.objective = Objective(Sense.MIN, obj.linear + u, [])
    return q, "rotated"


@dataclass
class StandardForm:
    """``min 1/2 x'Px + q'x + const`` s.t. ``b - Ax`` in zero^z x R+^l x SOC x PSD."""

    n: int
    A: sp.csc_matrix
    b: np.ndarray
    q: np.ndarray
    P: Optional[sp.csc_matrix]
    const: float
    zero: int
    nonneg: int
    soc: list[int]
    psd: list[int]
    sign: float          # -1 when the original objective was maximised


class _Rows:
    def __init__(self):
        self.ri: list[int] = []
        self.ci: list[int] = []
        self.vals: list[float] = []
        self.b: list[float] = []

    def add(self, coefs: dict, rhs: float, scale: float = 1.0):
        r = len(self.b)
        for k, v in coefs.items():
            if v != 0.0:
                self.ri.append(r)
                self.ci.append(k)
                self.vals.append(scale * v)
        self.b.append(rhs)

    def add_cone_entry(self, e: Affine, scale: float = 1.0):
        # s = b - A x = const + a.x  ->  A = -a, b = const
        self.add(e.terms, scale * e.const, -scale)


def _constant_violation(p: ConicProgram) -> tuple[ConicProgram, Optional[str]]:
    """Drop constraints without variables; report the first violated one."""
    q = copy.copy(p)
    q.linear, q.soc, q.psd = [], [], []
    for c in p.linear:
        if c.expr.is_constant:
            lhs = c.expr.const
            bad = ((c.relation is Relation.EQ and abs(lhs - c.rhs) > CONST_TOL)
                   or (c.relation is Relation.LE and lhs - c.rhs > CONST_TOL)
                   or (c.relation is Relation.GE and c.rhs - lhs > CONST_TOL))
            if bad:
                return q, f"constant linear constraint violated ({lhs} {c.relation.value} {c.rhs})"
        else:
            q.linear.append(c)
    for c in p.soc:
        if c.t.is_constant and all(v.is_constant for v in c.x):
            if math.hypot(*[v.const for v in c.x]) - c.t.const > CONST_TOL:
                return q, "constant second-order cone constraint violated"
        else:
            q.soc.append(c)
    for c in p.psd:
        if all(e.is_constant for row in c.matrix for e in row):
            m = np.array([[e.const for e in row] for row in c.matrix])
            lam = np.linalg.eigvalsh((m + m.T) / 2).min() if m.size else 0.0
            if lam < -CONST_TOL:
                return q, f"constant matrix is not PSD (min eigenvalue {lam:.6g})"
        else:
            q.psd.append(c)
    return q, None


def to_standard_form(p: ConicProgram, psd_triangle: str = "upper",
                     native_quadratic: bool = True) -> StandardForm:
    n = p.n
    rows = _Rows()
    zero = 0
    for c in p.linear:
        if c.relation is Relation.EQ:
            rows.add(c.expr.terms, c.rhs)
            zero += 1
    nonneg = 0
    for c in p.linear:
        if c.relation is Relation.LE:
            rows.add(c.expr.terms, c.rhs)
            nonneg += 1
        elif c.relation is Relation.GE:
            rows.add(c.expr.terms, -c.rhs, -1.0)
            nonneg += 1
    soc_dims = []
    for c in p.soc:
        rows.add_cone_entry(c.t)
        for e in c.x:
            rows.add_cone_entry(e)
        soc_dims.append(1 + len(c.x))
    psd_dims = []
    r2 = math.sqrt(2.0)
    for c in p.psd:
        s = c.size
        if psd_triangle == "upper":
            order = [(i, j) for j in range(s) for i in range(j + 1)]
        else:
            order = [(i, j) for j in range(s) for i in range(j, s)]
        for i, j in order:
            rows.add_cone_entry(c.matrix[i][j], 1.0 if i == j else r2)
        psd_dims.append(s)
    m = len(rows.b)
    A = sp.csc_matrix((rows.vals, (rows.ri, rows.ci)), shape=(m, n))
    A.sum_duplicates()
    b = np.array(rows.b, dtype=float)

    obj = p.objective
    sign = -1.0 if obj.sense is Sense.MAX else 1.0
    qv = np.zeros(n)
    for k, v in obj.linear.terms.items():
        qv[k] += sign * v
    const = sign * obj.linear.const
    P = None
    if obj.squares:
        if not native_quadratic:
            raise ValueError("quadratic objective must be lowered first")
        ri, ci, vals, cs, ws = [], [], [], [], []
        for r, (w, e) in enumerate(obj.squares):
            for k, v in e.terms.items():
                ri.append(r)
                ci.append(k)
                vals.append(v)
            cs.append(e.const)
            ws.append(w)
        R = sp.csr_matrix((vals, (ri, ci)), shape=(len(obj.squares), n))
        W = sp.diags(ws)
        c0 = np.array(cs)
        P = sp.triu(2.0 * (R.T @ W @ R)).tocsc()
        qv += 2.0 * (R.T @ (np.array(ws) * c0))
        const += float(np.sum(np.array(ws) * c0 ** 2))
    return StandardForm(n, A, b, qv, P, const, zero, nonneg, soc_dims, psd_dims, sign)


# ---------------------------------------------------------------------------
# backends

class ClarabelBackend:
    """In-process interior-point backend; quadratic objectives passed natively."""

    name = "clarabel"
    psd_triangle = "upper"
    native_quadratic = True

    def __init__(self, tol: float = 1e-10, max_iter: int = 400, **settings):
        self.tol = tol
        self.max_iter = max_iter
        self.settings = settings

    def solve_standard(self, sf: StandardForm) -> RawResult:
        import clarabel

        cones = []
        if sf.zero:
            cones.append(clarabel.ZeroConeT(sf.zero))
        if sf.nonneg:
            cones.append(clarabel.NonnegativeConeT(sf.nonneg))
        for d in sf.soc:
            cones.append(clarabel.SecondOrderConeT(d))
        for d in sf.psd:
            cones.append(clarabel.PSDTriangleConeT(d))
        st = clarabel.DefaultSettings()
        st.verbose = False
        st.max_iter = self.max_iter
        st.tol_gap_abs = self.tol
        st.tol_gap_rel = self.tol
        st.tol_feas = self.tol
        st.tol_ktratio = 1e-8
        for k, v in self.settings.items():
            setattr(st, k, v)
        P = sf.P if sf.P is not None else sp.csc_matrix((sf.n, sf.n))
        solver = clarabel.DefaultSolver(P, sf.q, sf.A, sf.b, cones, st)
        sol = solver.solve()
        status = str(sol.status)
        x = np.array(sol.x)
        if status in ("Solved", "AlmostSolved"):
            return RawResult(Status.OPTIMAL, x, sol.obj_val, sol.obj_val_dual, status)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return RawResult(Status.INFEASIBLE, None, diagnostic=status)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            return RawResult(Status.UNBOUNDED, None, diagnostic=status)
        return RawResult(Status.NUMERICAL_TROUBLE, x, diagnostic=f"clarabel: {status}")


class ScsBackend:
    """Operator-splitting backend; lowers quadratic objectives to cones first."""

    name = "scs"
    psd_triangle = "lower"
    native_quadratic = False

    def __init__(self, eps: float = 1e-10, max_iters: int = 200_000, **settings):
        self.eps = eps
        self.max_iters = max_iters
        self.settings = settings

    def solve_standard(self, sf: StandardForm) -> RawResult:
        import scs

        A, b, zero = sf.A, sf.b, sf.zero
        if A.shape[0] == 0:
            # scs needs at least one row; add the vacuous 0 = 0
            A, b, zero = sp.csc_matrix((1, A.shape[1])), np.zeros(1), 1
        data = {"A": A, "b": b, "c": sf.q}
        if sf.P is not None:
            data["P"] = sf.P
        cone = {"z": zero, "l": sf.nonneg, "q": sf.soc, "s": sf.psd}
        solver = scs.SCS(data, cone, verbose=False, eps_abs=self.eps, eps_rel=self.eps,
                         max_iters=self.max_iters, **self.settings)
        out = solver.solve()
        info = out["info"]
        status = info["status"]
        if status in ("solved", "solved_inaccurate"):
            return RawResult(Status.OPTIMAL, np.array(out["x"]), info["pobj"], info["dobj"], status)
        if status.startswith("infeasible"):
            return RawResult(Status.INFEASIBLE, None, diagnostic=status)
        if status.startswith("unbounded"):
            return RawResult(Status.UNBOUNDED, None, diagnostic=status)
        return RawResult(Status.NUMERICAL_TROUBLE, None, diagnostic=f"scs: {status}")


DEFAULT_BACKEND = ClarabelBackend()


def get_backend(name: str = "clarabel"):
    if name == "clarabel":
        return ClarabelBackend()
    if name == "scs":
        return ScsBackend()
    raise ValueError(f"unknown backend {name!r}")


# ---------------------------------------------------------------------------

def constraint_violation(p: ConicProgram, x: np.ndarray) -> float:
    """Largest absolute violation of any constraint at ``x``."""
    worst = 0.0
    for c in p.linear:
        lhs = c.expr.evaluate(x)
        if c.relation is Relation.EQ:
            v = abs(lhs - c.rhs)
        elif c.relation is Relation.LE:
            v = lhs - c.rhs
        else:
            v = c.rhs - lhs
        worst = max(worst, v)
    for c in p.soc:
        norm = math.sqrt(sum(e.evaluate(x) ** 2 for e in c.x))
        worst = max(worst, norm - c.t.evaluate(x))
    for c in p.psd:
        m = np.array([[e.evaluate(x) for e in row] for row in c.matrix])
        worst = max(worst, -np.linalg.eigvalsh((m + m.T) / 2).min())
    return float(worst)


def solve(p: ConicProgram, backend=None, feas_tol: float = FEAS_TOL) -> Solution:
    """Validate, lower, solve and re-check a program."""
    backend = backend or DEFAULT_BACKEND
    diags = validate(p)
    if diags:
        raise ValidationError(diags)
    t0 = time.perf_counter()
    reduced, bad = _constant_violation(p)
    if bad:
        return Solution(Status.INFEASIBLE, diagnostic=bad, solve_time=time.perf_counter() - t0)
    lowered, mode = reduced, "none"
    if reduced.objective.squares and not backend.native_quadratic:
        lowered, mode = lower_quadratic_objective(reduced)
    if lowered.n == 0:
        x = np.zeros(0)
        raw = RawResult(Status.OPTIMAL, x)
    else:
        sf = to_standard_form(lowered, backend.psd_triangle, backend.native_quadratic)
        try:
            raw = backend.solve_standard(sf)
        except Exception as exc:  # solver crash -> reported, not raised
            log.warning("backend %s failed: %s", backend.name, exc)
            return Solution(Status.NUMERICAL_TROUBLE, diagnostic=f"{backend.name}: {exc}",
                            solve_time=time.perf_counter() - t0)
        if raw.dual_obj is not None:
            raw.dual_obj = sf.sign * (raw.dual_obj + sf.const)
            if mode == "norm":
                raw.dual_obj = raw.dual_obj ** 2
    elapsed = time.perf_counter() - t0
    if raw.status is not Status.OPTIMAL:
        return Solution(raw.status, diagnostic=raw.diagnostic, solve_time=elapsed)
    x = raw.x[: p.n]
    viol = constraint_violation(p, x)
    values = {h: h.shape_values(x) for h in p.variables}
    obj = p.objective.evaluate(x)
    if not math.isfinite(obj):
        return Solution(Status.NUMERICAL_TROUBLE, x, values, obj, raw.dual_obj, viol,
                        "non-finite objective", elapsed)
    if viol > feas_tol:
        return Solution(Status.NUMERICAL_TROUBLE, x, values, obj, raw.dual_obj, viol,
                        f"{backend.name}: constraint violation {viol:.3g} exceeds {feas_tol:g}", elapsed)
    return Solution(Status.OPTIMAL, x, values, obj, raw.dual_obj, viol, raw.diagnostic, elapsed)
