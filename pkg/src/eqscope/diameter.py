"""Diameter of the consistent set via per-coordinate pairwise maximisation.

For every coordinate c (a payoff entry of one player) two independent copies
of the consistency constraints are built and ``x~[c] - x^[c]`` is maximised.
The largest of these values is the entrywise sup-norm diameter.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .conic import ConicProgram, Solution, Status, solve
from .consistency import ConsistencyInstance, build_consistency_program
from .game import Game, Metric, ObservationSet

log = logging.getLogger(__name__)

UNBOUNDED_CAP = 1e6


def default_jobs() -> int:
    return os.cpu_count() or 1


@dataclass
class PairwiseTemplate:
    """Constraints of two independent copies and their coordinate expressions."""

    program: ConicProgram
    left: np.ndarray       # object array of coordinate expressions, copy one
    right: np.ndarray      # same shape, copy two
    extract: Callable[[Solution, str], object] = None  # witness extractor per side


@dataclass
class CoordinateResult:
    index: tuple
    status: Status
    value: float
    capped: bool = False
    witnesses: Optional[tuple] = None
    diagnostic: str = ""

    @property
    def unbounded(self) -> bool:
        return self.status is Status.UNBOUNDED or self.capped


def _with_objective(template: ConicProgram, expr, name: str) -> ConicProgram:
    p = ConicProgram(name)
    p.variables, p.n = template.variables, template.n
    p.linear, p.soc, p.psd = template.linear, template.soc, template.psd
    p.maximize(expr)
    return p


def solve_coordinate(tpl: PairwiseTemplate, index: tuple, backend=None,
                     cap: float = UNBOUNDED_CAP, swap: bool = False) -> CoordinateResult:
    a, b = tpl.left[index], tpl.right[index]
    if swap:
        a, b = b, a
    prog = _with_objective(tpl.program, a - b, f"pairwise{index}")
    sol = solve(prog, backend)
    if sol.status is Status.OPTIMAL:
        val = float(sol.objective_value)
        wit = None
        if tpl.extract is not None:
            wit = (tpl.extract(sol, "left"), tpl.extract(sol, "right"))
            if swap:
                wit = wit[::-1]
        if val > cap:
            return CoordinateResult(index, sol.status, math.inf, True, wit,
                                    f"objective {val:.3g} exceeds cap {cap:g}")
        return CoordinateResult(index, sol.status, max(val, 0.0), False, wit)
    if sol.status is Status.UNBOUNDED:
        return CoordinateResult(index, sol.status, math.inf)
    return CoordinateResult(index, sol.status, math.nan, diagnostic=sol.diagnostic)


def pairwise_maximize(tpl: PairwiseTemplate, backend=None, jobs: Optional[int] = None,
                      cap: float = UNBOUNDED_CAP) -> list[CoordinateResult]:
    """Solve every coordinate program; results come back in index order."""
    indices = list(np.ndindex(*tpl.left.shape))
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    run = lambda idx: solve_coordinate(tpl, idx, backend, cap)
    if jobs == 1 or len(indices) == 1:
        return [run(i) for i in indices]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, indices))


@dataclass
class DiameterReport:
    """``value`` is ``inf`` when some coordinate program is unbounded or capped."""

    value: float
    argmax: Optional[tuple]
    witnesses: Optional[tuple]
    per_entry: np.ndarray
    capped: bool = False
    diagnostics: list = field(default_factory=list)

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.value)

    @property
    def complete(self) -> bool:
        return not self.diagnostics

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, np.ndarray):
                return [enc(x) for x in v]
            v = float(v)
            if math.isinf(v):
                return "inf"
            return None if math.isnan(v) else v
        out = {
            "value": enc(self.value),
            "argmax": [int(k) for k in self.argmax] if self.argmax is not None else None,
            "per_entry": enc(self.per_entry),
            "capped": self.capped,
            "diagnostics": list(self.diagnostics),
        }
        if self.witnesses is not None and all(isinstance(w, Game) for w in self.witnesses):
            out["witnesses"] = [w.to_dict() for w in self.witnesses]
        return out


def reduce_results(results: Sequence[CoordinateResult], shape: tuple) -> DiameterReport:
    """Deterministic max over coordinates (first index wins ties)."""
    per = np.full(shape, np.nan)
    best, best_r, diags, capped = -math.inf, None, [], False
    for r in results:
        per[r.index] = r.value
        capped |= r.capped
        if r.diagnostic and not r.capped:
            diags.append(f"{r.index}: {r.diagnostic}")
        if not math.isnan(r.value) and r.value > best:
            best, best_r = r.value, r
    if best_r is None:
        return DiameterReport(math.nan, None, None, per, capped, diags)
    return DiameterReport(best, best_r.index, best_r.witnesses, per, capped, diags)


def consistency_template(obs: ObservationSet, delta: float, metric: Metric,
                         instance: Optional[ConsistencyInstance] = None) -> PairwiseTemplate:
    inst = instance.with_delta(delta) if instance is not None else ConsistencyInstance(obs, metric, delta)
    program = ConicProgram("diameter")
    left = build_consistency_program(inst, program=program, prefix="A")
    right = build_consistency_program(inst, program=program, prefix="B")
    lhs = np.stack([left.G.p1, left.G.p2])
    rhs = np.stack([right.G.p1, right.G.p2])

    def extract(sol: Solution, side: str) -> Game:
        return (left if side == "left" else right).G.evaluate(sol)

    return PairwiseTemplate(program, lhs, rhs, extract)


def diameter(obs: ObservationSet, delta: float, metric: Metric = Metric.D2, backend=None,
             jobs: Optional[int] = None, cap: float = UNBOUNDED_CAP,
             instance: Optional[ConsistencyInstance] = None) -> DiameterReport:
    """Entrywise sup-norm diameter of the consistent set at budget ``delta``.

    ``per_entry[p-1, i, j]`` is the largest gap in player p's payoff (i, j)
    between two consistent games; ``argmax`` is ``(p, i, j)`` with p in {1, 2}.
    ``instance`` may carry a property or perturbation hook to respect.
    """
    if not delta >= 0:
        raise ValueError("delta must be nonnegative")
    tpl = consistency_template(obs, delta, metric, instance)
    results = pairwise_maximize(tpl, backend, jobs, cap)
    rep = reduce_results(results, tpl.left.shape)
    if rep.argmax is not None:
        p, i, j = rep.argmax
        rep.argmax = (p + 1, i, j)
    return rep


def diameter_values_are_monotone(values: Sequence[float], tol: float = 1e-5) -> bool:
    return all(b >= a - tol for a, b in zip(values, values[1:]))


def diameter_monotonicity_check(obs: ObservationSet, deltas: Sequence[float], metric: Metric = Metric.D2,
                                backend=None, jobs: Optional[int] = None) -> bool:
    deltas = list(deltas)
    if deltas != sorted(deltas):
        raise ValueError("deltas must be sorted ascending")
    values = [diameter(obs, d, metric, backend, jobs).value for d in deltas]
    return diameter_values_are_monotone(values)
