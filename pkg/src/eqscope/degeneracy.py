"""Strictness-controlled recovery without payoff information.

With only equilibria observed, the constant game explains everything. Forcing a
total amount ``epsilon`` of strict deviation slack rules that out; ``P(epsilon)``
is the smallest d2 perturbation still compatible with it. Everything here is
written for player 1 (row deviations); player 2 is handled by transposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .conic import ConicProgram, Solution, Status, linear_sum, solve
from .consistency import NumericalTroubleError
from .game import CorrelatedEquilibrium, ModelError, Observation, ObservationModel, ObservationSet

RANK_TOL = 1e-10
ZERO_TOL = 1e-9      # P values below this are solver noise around zero


class PreconditionError(ValueError):
    pass


@dataclass
class StrictnessInstance:
    """``n_active`` rows are real actions; rows beyond it are padding and are
    never considered as deviation targets. Payoffs of G are normalised to [0, 1]."""

    obs: ObservationSet
    epsilon: float = 0.0
    n_active: Optional[int] = None

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        if self.obs.model is not ObservationModel.NONE:
            raise ModelError("strictness analysis uses equilibrium observations only")
        if self.n_active is None:
            self.n_active = self.obs.m1

    def with_epsilon(self, epsilon: float) -> "StrictnessInstance":
        return StrictnessInstance(self.obs, epsilon, self.n_active)


def equilibria_only(obs: ObservationSet) -> ObservationSet:
    return obs.with_model(ObservationModel.NONE)


def for_player(obs: ObservationSet, player: int) -> ObservationSet:
    """Observations seen from ``player``'s side (player 2 becomes the row player)."""
    if player == 1:
        return equilibria_only(obs)
    return ObservationSet(ObservationModel.NONE,
                          [Observation(CorrelatedEquilibrium(o.equilibrium.probs.T)) for o in obs])


def build_tilde_vectors(e: CorrelatedEquilibrium, n_active: Optional[int] = None) -> dict:
    """``{(i, i2): v}`` with ``<v, G> <= 0`` the row-player condition for deviating i -> i2.

    ``v[i, :] = -e[i, :]`` and ``v[i2, :] = e[i, :]``; deviations towards padded
    rows (index >= n_active) are left out.
    """
    m1, m2 = e.shape
    n_active = m1 if n_active is None else n_active
    out = {}
    for i in range(m1):
        for i2 in range(n_active):
            if i2 == i:
                continue
            v = np.zeros((m1, m2))
            v[i] = -e.probs[i]
            v[i2] = e.probs[i]
            out[(i, i2)] = v
    return out


def _tilde_family(inst: StrictnessInstance) -> list[dict]:
    return [build_tilde_vectors(o.equilibrium, inst.n_active) for o in inst.obs]


@dataclass
class StrictRecovery:
    value: float
    status: Status
    G: Optional[np.ndarray] = None
    Gk: list = field(default_factory=list)
    slacks: dict = field(default_factory=dict)   # (k, i, i2) -> slack
    solution: Optional[Solution] = None

    @property
    def dual_value(self) -> float:
        return self.solution.dual_objective_value if self.solution is not None else math.nan


def build_P(inst: StrictnessInstance):
    obs = inst.obs
    m1, m2 = obs.shape
    prog = ConicProgram("strict_recovery")
    G = prog.matrix("G", m1, m2)
    for g in G.ravel():
        prog.add_ge(g, 0.0, tag="box")
        prog.add_le(g, 1.0, tag="box")
    Gks, slack_exprs, res = [], {}, []
    coeffs, exprs = [], []
    for k, fam in enumerate(_tilde_family(inst)):
        Gk = prog.matrix(f"G{k + 1}", m1, m2)
        Gks.append(Gk)
        for (i, i2), v in fam.items():
            if not v.any():
                continue
            dot = linear_sum(v.ravel(), Gk.ravel())
            prog.add_le(dot, 0.0, tag="strict")
            slack_exprs[(k, i, i2)] = -dot
            coeffs.extend(v.ravel())
            exprs.extend(Gk.ravel())
        res.extend((Gk - G).ravel())
    prog.add_eq(linear_sum(coeffs, exprs), -inst.epsilon, tag="total_slack")
    prog.minimize(squares=res)
    return prog, G, Gks, slack_exprs


def solve_P(inst: StrictnessInstance, backend=None) -> StrictRecovery:
    """``P(epsilon)``: least d2 perturbation with total strict slack exactly epsilon."""
    prog, G, Gks, slack_exprs = build_P(inst)
    sol = solve(prog, backend)
    if sol.status is Status.INFEASIBLE:
        return StrictRecovery(math.inf, sol.status, solution=sol)
    if sol.status is not Status.OPTIMAL:
        raise NumericalTroubleError(f"strict recovery: {sol.status.value} {sol.diagnostic}")
    return StrictRecovery(max(sol.objective_value, 0.0), sol.status, sol.value(G),
                          [sol.value(g) for g in Gks],
                          {key: sol.value(e) for key, e in slack_exprs.items()}, sol)


def degeneracy_threshold(obs: ObservationSet, backend=None, n_active: Optional[int] = None) -> float:
    """Largest total slack achievable by a single game in [0, 1]: the supremum of
    epsilons with ``P(epsilon) = 0``."""
    inst = StrictnessInstance(equilibria_only(obs), 0.0, n_active)
    m1, m2 = obs.shape
    prog = ConicProgram("degeneracy_threshold")
    G = prog.matrix("G", m1, m2)
    for g in G.ravel():
        prog.add_ge(g, 0.0, tag="box")
        prog.add_le(g, 1.0, tag="box")
    total = np.zeros((m1, m2))
    for fam in _tilde_family(inst):
        for v in fam.values():
            if v.any():
                prog.add_le(linear_sum(v.ravel(), G.ravel()), 0.0, tag="strict")
                total += v
    prog.maximize(linear_sum(-total.ravel(), G.ravel()))
    sol = solve(prog, backend)
    if sol.status is not Status.OPTIMAL:
        raise NumericalTroubleError(f"threshold LP: {sol.status.value} {sol.diagnostic}")
    return max(float(sol.objective_value), 0.0)


def check_slater(obs: ObservationSet, tol: float = RANK_TOL) -> list[bool]:
    """Per observation: are the nonzero rows of the equilibrium linearly independent?"""
    out = []
    for o in obs:
        rows = o.equilibrium.probs[o.equilibrium.probs.any(axis=1)]
        out.append(bool(np.linalg.matrix_rank(rows, tol=tol) == len(rows)) if len(rows) else True)
    return out


def pad_square(obs: ObservationSet) -> tuple[ObservationSet, int]:
    """Append zero-probability dummy actions until both players have m actions.

    Returns the padded set and the number of real row actions.
    """
    m1, m2 = obs.shape
    m = max(m1, m2)
    padded = []
    for o in obs:
        p = np.zeros((m, m))
        p[:m1, :m2] = o.equilibrium.probs
        padded.append(Observation(CorrelatedEquilibrium(p)))
    return ObservationSet(ObservationModel.NONE, padded), m1


def envelope_bounds(P0: float, eps0: float, eps: float, l: int, m: int) -> tuple[float, float]:
    """Lower and upper envelopes ``f(eps)``, ``g(eps)`` anchored at ``P(eps0) = P0``."""
    f = float(P0 * eps ** 2 / eps0 ** 2)
    c = math.sqrt(l) * m / 2.0
    g = float(((math.sqrt(P0) + c) * eps / eps0 - c) ** 2)
    return f, g


@dataclass
class EnvelopeResult:
    ok: bool
    epsilon0: float
    P0: float
    rows: list    # (epsilon, f, P, g)

    def curve(self) -> list:
        return [[r[0], r[2]] for r in self.rows]


def envelope_check(obs: ObservationSet, epsilon0: float, grid: Sequence[float], backend=None,
                   tol: float = 1e-6) -> EnvelopeResult:
    """Solve P on ``grid`` and test ``f - tol <= P <= g + tol`` at every point.

    Non-square games are padded first; the envelope constant uses the padded size.
    """
    padded, n_active = pad_square(equilibria_only(obs))
    base = StrictnessInstance(padded, epsilon0, n_active)
    P0 = solve_P(base, backend).value
    if not P0 > ZERO_TOL:
        raise PreconditionError(f"P(epsilon0) = {P0} must be positive; choose epsilon0 above the threshold")
    if any(e < epsilon0 for e in grid):
        raise PreconditionError("grid points must be at least epsilon0")
    l, m = len(padded), padded.m1
    rows, ok = [], True
    for eps in grid:
        P = solve_P(base.with_epsilon(eps), backend).value
        f, g = envelope_bounds(P0, epsilon0, eps, l, m)
        ok &= (f - tol <= P <= g + tol)
        rows.append((float(eps), f, float(P), g))
    return EnvelopeResult(bool(ok), epsilon0, P0, rows)


def P_curve(obs: ObservationSet, grid: Sequence[float], backend=None) -> list[tuple[float, float]]:
    inst = StrictnessInstance(equilibria_only(obs))
    return [(float(e), solve_P(inst.with_epsilon(e), backend).value) for e in grid]


def midpoint_convex(curve: Sequence[tuple[float, float]], tol: float = 1e-6) -> bool:
    """Discrete convexity on an evenly spaced curve: each interior value is at most
    the mean of its neighbours."""
    ys = [p for _, p in curve]
    return all(ys[k] <= 0.5 * (ys[k - 1] + ys[k + 1]) + tol for k in range(1, len(ys) - 1))
