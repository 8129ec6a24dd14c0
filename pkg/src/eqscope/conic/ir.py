"""Solver-agnostic conic program representation.

Scalars live in one flat index space; every variable handle owns a contiguous
slice of it. Expressions are sparse affine maps over those indices.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from numbers import Real
from typing import Iterable, Optional, Sequence, Union

import numpy as np


class ValidationError(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


class Affine:
    """Sparse affine expression ``sum(coef * x[idx]) + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Optional[dict] = None, const: float = 0.0):
        self.terms: dict[int, float] = terms if terms is not None else {}
        self.const = float(const)

    @staticmethod
    def lift(v) -> "Affine":
        if isinstance(v, Affine):
            return v
        return Affine({}, float(v))

    @property
    def is_constant(self) -> bool:
        return not any(self.terms.values())

    def copy(self) -> "Affine":
        return Affine(dict(self.terms), self.const)

    def _combine(self, other, sign: float) -> "Affine":
        if isinstance(other, Affine):
            terms = dict(self.terms)
            for k, v in other.terms.items():
                terms[k] = terms.get(k, 0.0) + sign * v
            return Affine(terms, self.const + sign * other.const)
        if isinstance(other, Real):
            return Affine(dict(self.terms), self.const + sign * float(other))
        return NotImplemented

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __radd__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        out = self._combine(other, -1.0)
        if out is NotImplemented:
            return out
        return -out

    def __neg__(self):
        return Affine({k: -v for k, v in self.terms.items()}, -self.const)

    def __mul__(self, other):
        if isinstance(other, Real):
            c = float(other)
            return Affine({k: c * v for k, v in self.terms.items()}, c * self.const)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Real):
            return self * (1.0 / float(other))
        return NotImplemented

    def evaluate(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[k] for k, v in self.terms.items())

    def pruned(self) -> "Affine":
        return Affine({k: v for k, v in sorted(self.terms.items()) if v != 0.0}, self.const)

    def __eq__(self, other):
        if not isinstance(other, Affine):
            return NotImplemented
        a, b = self.pruned(), other.pruned()
        return a.terms == b.terms and a.const == b.const

    def __repr__(self):
        return f"Affine({self.pruned().terms!r}, {self.const!r})"


Expr = Union[Affine, float, int]


def as_affine(v) -> Affine:
    return Affine.lift(v)


def linear_sum(coeffs: Iterable[float], exprs: Iterable) -> Affine:
    """``sum(c * e)`` without building intermediate expressions."""
    terms: dict[int, float] = {}
    const = 0.0
    for c, e in zip(coeffs, exprs):
        c = float(c)
        if c == 0.0:
            continue
        if isinstance(e, Affine):
            for k, v in e.terms.items():
                terms[k] = terms.get(k, 0.0) + c * v
            const += c * e.const
        else:
            const += c * float(e)
    return Affine(terms, const)


class VarKind(enum.Enum):
    SCALAR = "scalar"
    MATRIX = "matrix"
    SYMMETRIC = "symmetric"


@dataclass(frozen=True)
class VariableHandle:
    id: int
    name: str
    kind: VarKind
    rows: int
    cols: int
    offset: int

    @property
    def size(self) -> int:
        if self.kind is VarKind.SYMMETRIC:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def slot(self, i: int = 0, j: int = 0) -> int:
        if self.kind is VarKind.SYMMETRIC:
            a, b = min(i, j), max(i, j)
            # upper triangle, column by column
            return self.offset + b * (b + 1) // 2 + a
        return self.offset + i * self.cols + j

    def shape_values(self, x: np.ndarray):
        if self.kind is VarKind.SCALAR:
            return float(x[self.offset])
        out = np.empty((self.rows, self.cols))
        for i in range(self.rows):
            for j in range(self.cols):
                out[i, j] = x[self.slot(i, j)]
        return out


class Relation(enum.Enum):
    LE = "<="
    EQ = "=="
    GE = ">="


@dataclass
class LinearConstraint:
    expr: Affine          # constant already folded into rhs
    relation: Relation
    rhs: float
    tag: str = ""

    def __eq__(self, other):
        return (isinstance(other, LinearConstraint) and self.expr == other.expr
                and self.relation is other.relation and self.rhs == other.rhs
                and self.tag == other.tag)


@dataclass
class SocConstraint:
    """``||x||_2 <= t``."""

    t: Affine
    x: list[Affine]
    tag: str = ""


@dataclass
class PsdConstraint:
    """Symmetric affine matrix required positive semidefinite."""

    matrix: list[list[Affine]]
    tag: str = ""

    @property
    def size(self) -> int:
        return len(self.matrix)


class Sense(enum.Enum):
    MIN = "min"
    MAX = "max"


@dataclass
class Objective:
    """``linear + sum(w * r**2)`` with every weight expected nonnegative."""

    sense: Sense = Sense.MIN
    linear: Affine = field(default_factory=Affine)
    squares: list[tuple[float, Affine]] = field(default_factory=list)

    @property
    def is_quadratic(self) -> bool:
        return bool(self.squares)

    def evaluate(self, x: np.ndarray) -> float:
        return self.linear.evaluate(x) + sum(w * r.evaluate(x) ** 2 for w, r in self.squares)


class ConicProgram:
    """Variables plus linear, second-order-cone and PSD constraints."""

    def __init__(self, name: str = "program"):
        self.name = name
        self.variables: list[VariableHandle] = []
        self.n = 0
        self.linear: list[LinearConstraint] = []
        self.soc: list[SocConstraint] = []
        self.psd: list[PsdConstraint] = []
        self.objective = Objective()

    # -- variables -------------------------------------------------------
    def _declare(self, name: str, kind: VarKind, rows: int, cols: int) -> VariableHandle:
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid variable name {name!r}")
        h = VariableHandle(len(self.variables), name, kind, rows, cols, self.n)
        self.variables.append(h)
        self.n += h.size
        return h

    def scalar(self, name: str) -> Affine:
        h = self._declare(name, VarKind.SCALAR, 1, 1)
        return Affine({h.offset: 1.0})

    def matrix(self, name: str, rows: int, cols: int) -> np.ndarray:
        h = self._declare(name, VarKind.MATRIX, rows, cols)
        return self.handle_exprs(h)

    def symmetric(self, name: str, size: int) -> np.ndarray:
        h = self._declare(name, VarKind.SYMMETRIC, size, size)
        return self.handle_exprs(h)

    def vector(self, name: str, size: int) -> np.ndarray:
        return self.matrix(name, 1, size)[0]

    @staticmethod
    def handle_exprs(h: VariableHandle) -> np.ndarray:
        out = np.empty((h.rows, h.cols), dtype=object)
        for i in range(h.rows):
            for j in range(h.cols):
                out[i, j] = Affine({h.slot(i, j): 1.0})
        return out

    def handle(self, name: str) -> VariableHandle:
        for h in self.variables:
            if h.name == name:
                return h
        raise KeyError(name)

    # -- constraints -----------------------------------------------------
    def add_constraint(self, expr: Expr, relation: Relation, rhs: float = 0.0, tag: str = "") -> None:
        e = as_affine(expr)
        self.linear.append(LinearConstraint(Affine(dict(e.terms)), relation,
                                            float(rhs) - e.const, tag))

    def add_le(self, expr: Expr, rhs: float = 0.0, tag: str = "") -> None:
        self.add_constraint(expr, Relation.LE, rhs, tag)

    def add_ge(self, expr: Expr, rhs: float = 0.0, tag: str = "") -> None:
        self.add_constraint(expr, Relation.GE, rhs, tag)

    def add_eq(self, expr: Expr, rhs: float = 0.0, tag: str = "") -> None:
        self.add_constraint(expr, Relation.EQ, rhs, tag)

    def add_soc(self, t: Expr, x: Sequence[Expr], tag: str = "") -> None:
        self.soc.append(SocConstraint(as_affine(t), [as_affine(v) for v in x], tag))

    def add_psd(self, matrix, tag: str = "") -> None:
        rows = [[as_affine(v) for v in row] for row in matrix]
        self.psd.append(PsdConstraint(rows, tag))

    # -- objective -------------------------------------------------------
    def minimize(self, linear: Expr = 0.0, squares: Sequence = ()) -> None:
        self.objective = Objective(Sense.MIN, as_affine(linear), _squares(squares))

    def maximize(self, linear: Expr = 0.0, squares: Sequence = ()) -> None:
        self.objective = Objective(Sense.MAX, as_affine(linear), _squares(squares))

    def count(self, relation: Optional[Relation] = None, tag: Optional[str] = None) -> int:
        return sum(1 for c in self.linear
                   if (relation is None or c.relation is relation)
                   and (tag is None or c.tag == tag))

    def __eq__(self, other):
        if not isinstance(other, ConicProgram):
            return NotImplemented
        from .textio import dumps
        return dumps(self) == dumps(other)


def _squares(squares) -> list[tuple[float, Affine]]:
    out = []
    for item in squares:
        if isinstance(item, tuple):
            w, r = item
        else:
            w, r = 1.0, item
        out.append((float(w), as_affine(r)))
    return out


def _refs(expr: Affine) -> Iterable[int]:
    return expr.terms.keys()


def validate(p: ConicProgram) -> list[str]:
    """Return diagnostics; an empty list means the program is well formed."""
    diags: list[str] = []
    declared = p.n

    def check_expr(expr: Affine, where: str):
        bad = [k for k in _refs(expr) if not (0 <= k < declared)]
        if bad:
            diags.append(f"{where}: references undeclared variable slot(s) {sorted(bad)}")
        if not all(math.isfinite(v) for v in expr.terms.values()) or not math.isfinite(expr.const):
            diags.append(f"{where}: non-finite coefficient")

    for n, c in enumerate(p.linear):
        check_expr(c.expr, f"linear[{n}]")
        if not math.isfinite(c.rhs):
            diags.append(f"linear[{n}]: non-finite rhs")
    for n, c in enumerate(p.soc):
        check_expr(c.t, f"soc[{n}].t")
        for m, v in enumerate(c.x):
            check_expr(v, f"soc[{n}].x[{m}]")
    for n, c in enumerate(p.psd):
        s = c.size
        if any(len(row) != s for row in c.matrix):
            diags.append(f"psd[{n}]: matrix is not square")
            continue
        for i in range(s):
            for j in range(s):
                check_expr(c.matrix[i][j], f"psd[{n}][{i},{j}]")
            for j in range(i + 1, s):
                if c.matrix[i][j] != c.matrix[j][i]:
                    diags.append(f"psd[{n}]: matrix is not symmetric at ({i},{j})")
    obj = p.objective
    check_expr(obj.linear, "objective.linear")
    for n, (w, r) in enumerate(obj.squares):
        check_expr(r, f"objective.squares[{n}]")
        if not (w >= 0.0):
            diags.append(f"objective.squares[{n}]: negative weight {w}; quadratic objective is not a sum of squares")
    if obj.squares and obj.sense is Sense.MAX:
        diags.append("objective: maximizing a sum of squares is not convex")
    return diags
