"""Consistent-set constraint systems, membership and perturbation-minimising recovery."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .conic import Affine, ConicProgram, Solution, Status, linear_sum, solve
from .game import (CorrelatedEquilibrium, Game, Metric, ModelError, ObservationModel,
                   ObservationSet, ShapeError)

log = logging.getLogger(__name__)

DeltaLike = Union[float, Affine]


class NumericalTroubleError(RuntimeError):
    pass


class InfeasibleError(RuntimeError):
    pass


class BracketError(RuntimeError):
    pass


@dataclass
class GameVars:
    """Payoff expressions for both players: variables, constants or a mix."""

    p1: np.ndarray
    p2: np.ndarray

    def player(self, p: int) -> np.ndarray:
        return self.p1 if p == 1 else self.p2

    @property
    def shape(self) -> tuple[int, int]:
        return self.p1.shape

    def evaluate(self, sol: Solution) -> Game:
        return Game(sol.value(self.p1), sol.value(self.p2))


def game_variables(program: ConicProgram, name: str, m1: int, m2: int) -> GameVars:
    return GameVars(program.matrix(f"{name}_1", m1, m2), program.matrix(f"{name}_2", m1, m2))


def fixed_game(g: Game) -> GameVars:
    return GameVars(np.array(g.payoff1, dtype=object), np.array(g.payoff2, dtype=object))


class PropertyKind(enum.Enum):
    ZERO_SUM = "zero_sum"
    EPS_ZERO_SUM = "eps_zero_sum"
    EXACT_POTENTIAL = "exact_potential"
    LINEAR_PARAM = "linear_param"


@dataclass
class PropertySpec:
    """A linear structural hypothesis on the recovered game.

    For ``LINEAR_PARAM`` each player's payoff is ``coef[i, j, :] @ theta + offset[i, j]``;
    ``fixed_theta`` pins individual parameters.
    """

    kind: PropertyKind
    epsilon: float = 0.0
    coef1: Optional[np.ndarray] = None
    offset1: Optional[np.ndarray] = None
    coef2: Optional[np.ndarray] = None
    offset2: Optional[np.ndarray] = None
    fixed_theta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind is PropertyKind.EPS_ZERO_SUM and not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        if self.kind is PropertyKind.LINEAR_PARAM:
            if self.coef1 is None or self.coef2 is None:
                raise ValueError("linear parametrisation needs coefficient tensors")
            self.coef1 = np.asarray(self.coef1, dtype=float)
            self.coef2 = np.asarray(self.coef2, dtype=float)
            if self.coef1.shape != self.coef2.shape or self.coef1.ndim != 3:
                raise ShapeError("coefficient tensors must share shape (m1, m2, t)")
            base = self.coef1.shape[:2]
            self.offset1 = np.zeros(base) if self.offset1 is None else np.asarray(self.offset1, float)
            self.offset2 = np.zeros(base) if self.offset2 is None else np.asarray(self.offset2, float)

    @property
    def n_params(self) -> int:
        return self.coef1.shape[2] if self.coef1 is not None else 0

    @classmethod
    def zero_sum(cls) -> "PropertySpec":
        return cls(PropertyKind.ZERO_SUM)

    @classmethod
    def eps_zero_sum(cls, epsilon: float) -> "PropertySpec":
        return cls(PropertyKind.EPS_ZERO_SUM, epsilon=epsilon)

    @classmethod
    def exact_potential(cls) -> "PropertySpec":
        return cls(PropertyKind.EXACT_POTENTIAL)

    @classmethod
    def linear_param(cls, coef1, coef2, offset1=None, offset2=None, fixed_theta=None) -> "PropertySpec":
        return cls(PropertyKind.LINEAR_PARAM, coef1=coef1, coef2=coef2, offset1=offset1,
                   offset2=offset2, fixed_theta=dict(fixed_theta or {}))


PerturbationHook = Callable[[ConicProgram, GameVars, Sequence[GameVars]], None]


@dataclass
class ConsistencyInstance:
    """Observations plus the metric, budget and optional hypothesis.

    ``delta=None`` marks the budget as a free variable (recovery mode).
    ``perturbation_hook`` may append extra constraints on the perturbations
    ``G^k - G`` (any convex, tractable uncertainty set).
    """

    obs: ObservationSet
    metric: Metric = Metric.D2
    delta: Optional[float] = None
    property: Optional[PropertySpec] = None
    perturbation_hook: Optional[PerturbationHook] = None
    drop_vacuous: bool = False

    def __post_init__(self):
        if self.delta is not None and not self.delta >= 0:
            raise ValueError("delta must be nonnegative")

    def with_delta(self, delta: Optional[float]) -> "ConsistencyInstance":
        return ConsistencyInstance(self.obs, self.metric, delta, self.property,
                                   self.perturbation_hook, self.drop_vacuous)

    def with_property(self, prop: Optional[PropertySpec]) -> "ConsistencyInstance":
        return ConsistencyInstance(self.obs, self.metric, self.delta, prop,
                                   self.perturbation_hook, self.drop_vacuous)


# ---------------------------------------------------------------------------
# constraint builders

def build_equilibrium_constraints(program: ConicProgram, gk: GameVars, e: CorrelatedEquilibrium,
                                  drop_vacuous: bool = False, tag: str = "ce") -> int:
    """Append the correlated-equilibrium deviation inequalities for ``gk`` at fixed ``e``.

    Rows with all-zero coefficients (deviations from never-recommended actions)
    are kept unless ``drop_vacuous`` so that dumps stay comparable.
    """
    if gk.shape != e.shape:
        raise ShapeError(f"game shape {gk.shape} != equilibrium shape {e.shape}")
    m1, m2 = e.shape
    p = e.probs
    added = 0
    for i in range(m1):
        if drop_vacuous and not p[i].any():
            continue
        for i2 in range(m1):
            if i2 == i:
                continue
            expr = linear_sum(np.concatenate([p[i], -p[i]]),
                              np.concatenate([gk.p1[i], gk.p1[i2]]))
            program.add_ge(expr, 0.0, tag=tag)
            added += 1
    for j in range(m2):
        if drop_vacuous and not p[:, j].any():
            continue
        for j2 in range(m2):
            if j2 == j:
                continue
            expr = linear_sum(np.concatenate([p[:, j], -p[:, j]]),
                              np.concatenate([gk.p2[:, j], gk.p2[:, j2]]))
            program.add_ge(expr, 0.0, tag=tag)
            added += 1
    return added


def perturbation_residuals(G: GameVars, Gks: Sequence[GameVars],
                           shifters: Optional[Sequence[Game]] = None) -> list:
    """``G^k - beta^k - G`` entrywise, ordered by (k, player, i, j)."""
    out = []
    for k, gk in enumerate(Gks):
        for p in (1, 2):
            diff = gk.player(p) - G.player(p)
            if shifters is not None:
                diff = diff - shifters[k].payoff(p)
            out.extend(Affine.lift(v) for v in diff.ravel())
    return out


def build_metric_constraint(program: ConicProgram, G: GameVars, Gks: Sequence[GameVars],
                            metric: Metric, delta: DeltaLike,
                            shifters: Optional[Sequence[Game]] = None) -> None:
    """Bound the perturbation size by ``delta`` (a number or an expression).

    d2 adds a single cone (rotated when ``delta`` is an expression); d-inf adds
    two box inequalities per perturbed payoff. A fixed ``delta`` of exactly 0
    is written as equalities, which interior-point solvers handle far better
    than a cone with empty interior.
    """
    res = perturbation_residuals(G, Gks, shifters)
    fixed = not isinstance(delta, Affine)
    if fixed and float(delta) == 0.0:
        for r in res:
            program.add_eq(r, 0.0, tag="metric")
        return
    if metric is Metric.D2:
        if fixed:
            program.add_soc(math.sqrt(float(delta)), res, tag="metric")
        else:
            program.add_soc(delta + 1.0, [2.0 * r for r in res] + [delta - 1.0], tag="metric")
        return
    for r in res:
        program.add_le(r - delta, 0.0, tag="metric")
        program.add_ge(r + delta, 0.0, tag="metric")


def build_payoff_info_constraints(program: ConicProgram, Gks: Sequence[GameVars],
                                  obs: ObservationSet) -> None:
    if obs.model is not ObservationModel.PARTIAL_PAYOFF:
        raise ModelError("payoff constraints need the partial payoff information model")
    for gk, o in zip(Gks, obs):
        if o.payoff_info is None:
            raise ModelError("observation lacks payoff information")
        w = o.equilibrium.probs.ravel()
        for p in (1, 2):
            program.add_eq(linear_sum(w, gk.player(p).ravel()), o.payoff_info[p - 1], tag="payoff")


def attach_property(program: ConicProgram, spec: PropertySpec, G: GameVars) -> None:
    m1, m2 = G.shape
    if spec.kind is PropertyKind.ZERO_SUM:
        for i in range(m1):
            for j in range(m2):
                program.add_eq(Affine.lift(G.p1[i, j]) + G.p2[i, j], 0.0, tag="zero_sum")
    elif spec.kind is PropertyKind.EPS_ZERO_SUM:
        s = program.matrix("abs_sum", m1, m2)
        for i in range(m1):
            for j in range(m2):
                tot = Affine.lift(G.p1[i, j]) + G.p2[i, j]
                program.add_ge(s[i, j] - tot, 0.0, tag="eps_zero_sum")
                program.add_ge(s[i, j] + tot, 0.0, tag="eps_zero_sum")
        program.add_le(linear_sum(np.ones(m1 * m2), s.ravel()), spec.epsilon, tag="eps_zero_sum")
    elif spec.kind is PropertyKind.EXACT_POTENTIAL:
        phi = program.matrix("potential", m1, m2)
        for j in range(m2):
            for i in range(m1):
                for i2 in range(m1):
                    if i != i2:
                        program.add_eq(phi[i, j] - phi[i2, j] - G.p1[i, j] + G.p1[i2, j],
                                       0.0, tag="potential")
        for i in range(m1):
            for j in range(m2):
                for j2 in range(m2):
                    if j != j2:
                        program.add_eq(phi[i, j] - phi[i, j2] - G.p2[i, j] + G.p2[i, j2],
                                       0.0, tag="potential")
    elif spec.kind is PropertyKind.LINEAR_PARAM:
        if spec.coef1.shape[:2] != (m1, m2):
            raise ShapeError("parametrisation shape does not match the game")
        theta = program.vector("theta", spec.n_params)
        for coef, off, gp in ((spec.coef1, spec.offset1, G.p1), (spec.coef2, spec.offset2, G.p2)):
            for i in range(m1):
                for j in range(m2):
                    program.add_eq(linear_sum(coef[i, j], theta) + off[i, j] - gp[i, j],
                                   0.0, tag="param")
        for t, val in sorted(spec.fixed_theta.items()):
            program.add_eq(theta[t], float(val), tag="param_fixed")
    else:
        raise ValueError(f"unknown property {spec.kind}")


# ---------------------------------------------------------------------------
# programs

@dataclass
class BuiltProgram:
    program: ConicProgram
    G: GameVars
    Gks: list[GameVars]
    delta: Optional[Affine] = None


def build_consistency_program(inst: ConsistencyInstance, G: Optional[GameVars] = None,
                              program: Optional[ConicProgram] = None, prefix: str = "",
                              delta: Optional[DeltaLike] = None) -> BuiltProgram:
    """Constraints describing membership of ``G`` in the consistent set.

    ``G`` defaults to fresh variables; ``delta`` defaults to ``inst.delta``.
    """
    obs = inst.obs
    m1, m2 = obs.shape
    program = program or ConicProgram("consistency")
    if G is None:
        G = game_variables(program, f"{prefix}G", m1, m2)
    Gks = [game_variables(program, f"{prefix}G{k + 1}", m1, m2) for k in range(len(obs))]
    for gk, o in zip(Gks, obs):
        build_equilibrium_constraints(program, gk, o.equilibrium, inst.drop_vacuous)
    if obs.model is ObservationModel.PARTIAL_PAYOFF:
        build_payoff_info_constraints(program, Gks, obs)
    shifters = [o.shifter for o in obs] if obs.model is ObservationModel.SHIFTER else None
    if delta is None:
        delta = inst.delta
    if delta is None:
        raise ValueError("delta must be fixed or supplied as an expression")
    build_metric_constraint(program, G, Gks, inst.metric, delta, shifters)
    if inst.property is not None:
        attach_property(program, inst.property, G)
    if inst.perturbation_hook is not None:
        inst.perturbation_hook(program, G, Gks)
    return BuiltProgram(program, G, Gks, delta if isinstance(delta, Affine) else None)


def _status_to_bool(sol: Solution, what: str) -> bool:
    if sol.status is Status.OPTIMAL:
        return True
    if sol.status is Status.INFEASIBLE:
        return False
    raise NumericalTroubleError(f"{what}: {sol.status.value} {sol.diagnostic}")


def membership(g: Game, inst: ConsistencyInstance, backend=None) -> bool:
    """Whether ``g`` lies in the consistent set at the instance's fixed budget."""
    if inst.delta is None:
        raise ValueError("membership needs a fixed delta")
    if g.shape != inst.obs.shape:
        raise ShapeError(f"game shape {g.shape} != observation shape {inst.obs.shape}")
    built = build_consistency_program(inst, G=fixed_game(g))
    built.program.name = "membership"
    return _status_to_bool(solve(built.program, backend), "membership")


@dataclass
class Recovery:
    status: Status
    delta_star: float
    game: Optional[Game]
    perturbed: list[Game]
    solution: Solution

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "delta_star": self.delta_star,
            "game": self.game.to_dict() if self.game is not None else None,
            "perturbed_games": [g.to_dict() for g in self.perturbed],
        }


def build_min_perturbation(inst: ConsistencyInstance) -> BuiltProgram:
    program = ConicProgram("min_perturbation")
    obs = inst.obs
    m1, m2 = obs.shape
    G = game_variables(program, "G", m1, m2)
    if inst.metric is Metric.D2:
        # the budget is the objective itself; no metric constraint needed
        built = _build_without_metric(inst, G, program)
        shifters = [o.shifter for o in obs] if obs.model is ObservationModel.SHIFTER else None
        res = perturbation_residuals(G, built.Gks, shifters)
        program.minimize(squares=res)
        return built
    delta = program.scalar("delta")
    built = build_consistency_program(inst, G=G, program=program, delta=delta)
    program.minimize(delta)
    return built


def _build_without_metric(inst: ConsistencyInstance, G: GameVars, program: ConicProgram) -> BuiltProgram:
    obs = inst.obs
    m1, m2 = obs.shape
    Gks = [game_variables(program, f"G{k + 1}", m1, m2) for k in range(len(obs))]
    for gk, o in zip(Gks, obs):
        build_equilibrium_constraints(program, gk, o.equilibrium, inst.drop_vacuous)
    if obs.model is ObservationModel.PARTIAL_PAYOFF:
        build_payoff_info_constraints(program, Gks, obs)
    if inst.property is not None:
        attach_property(program, inst.property, G)
    if inst.perturbation_hook is not None:
        inst.perturbation_hook(program, G, Gks)
    return BuiltProgram(program, G, Gks)


def min_perturbation(inst: ConsistencyInstance, backend=None) -> Recovery:
    """Smallest budget for which some game explains every observation, with a witness."""
    built = build_min_perturbation(inst)
    sol = solve(built.program, backend)
    if sol.status is not Status.OPTIMAL:
        return Recovery(sol.status, math.nan, None, [], sol)
    delta_star = max(sol.objective_value, 0.0)
    return Recovery(sol.status, delta_star, built.G.evaluate(sol),
                    [gk.evaluate(sol) for gk in built.Gks], sol)


def one_norm_of_sum(g: Game) -> float:
    return float(np.abs(g.payoff1 + g.payoff2).sum())


def property_threshold(inst: ConsistencyInstance, delta_budget: float, backend=None,
                       family: Callable[[float], PropertySpec] = PropertySpec.eps_zero_sum,
                       tol: float = 1e-4) -> float:
    """Least epsilon for which the hypothesis ``family(epsilon)`` fits within the budget.

    Bisection on epsilon; the upper bracket is the hypothesis value of the
    unconstrained recovery, which must itself fit within the budget.
    """
    slack = 1e-9 * max(1.0, delta_budget)

    def fits(eps: float) -> bool:
        rec = min_perturbation(inst.with_property(family(eps)), backend)
        if rec.status is Status.INFEASIBLE:
            return False
        if rec.status is not Status.OPTIMAL:
            raise NumericalTroubleError(f"recovery at epsilon={eps}: {rec.solution.diagnostic}")
        return rec.delta_star <= delta_budget + slack

    base = min_perturbation(inst.with_property(None), backend)
    if base.status is not Status.OPTIMAL or base.delta_star > delta_budget + slack:
        raise BracketError(f"no game fits within budget {delta_budget} "
                           f"(unconstrained optimum {base.delta_star})")
    hi = one_norm_of_sum(base.game)
    if not fits(hi):
        hi = hi * (1 + 1e-6) + tol
        if not fits(hi):
            raise BracketError("upper bracket is not feasible")
    lo = 0.0
    if fits(lo):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fits(mid):
            hi = mid
        else:
            lo = mid
    return hi
