"""Finite two-player games, correlated equilibria and observation sets."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

PROB_NEG_TOL = 1e-12
PROB_SUM_TOL = 1e-9
VERTEX_CAP = 16


class ShapeError(ValueError):
    pass


class ModelError(ValueError):
    pass


class CapacityError(ValueError):
    pass


def _frozen(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Game:
    """Payoff matrices indexed ``[i, j]`` with i the row player's action."""

    payoff1: np.ndarray
    payoff2: np.ndarray

    def __post_init__(self):
        p1 = _frozen(self.payoff1, "payoff1")
        p2 = _frozen(self.payoff2, "payoff2")
        if p1.shape != p2.shape:
            raise ShapeError(f"payoff shapes differ: {p1.shape} vs {p2.shape}")
        object.__setattr__(self, "payoff1", p1)
        object.__setattr__(self, "payoff2", p2)

    @property
    def m1(self) -> int:
        return self.payoff1.shape[0]

    @property
    def m2(self) -> int:
        return self.payoff1.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.payoff1.shape

    def payoff(self, player: int) -> np.ndarray:
        return self.payoff1 if player == 1 else self.payoff2

    def __eq__(self, other):
        if not isinstance(other, Game):
            return NotImplemented
        return (np.array_equal(self.payoff1, other.payoff1)
                and np.array_equal(self.payoff2, other.payoff2))

    def allclose(self, other: "Game", atol: float = 1e-8) -> bool:
        return (self.shape == other.shape
                and np.allclose(self.payoff1, other.payoff1, atol=atol)
                and np.allclose(self.payoff2, other.payoff2, atol=atol))

    @classmethod
    def constant(cls, m1: int, m2: int, c: float = 0.0) -> "Game":
        return cls(np.full((m1, m2), c), np.full((m1, m2), c))

    def to_dict(self) -> dict:
        return {"m1": self.m1, "m2": self.m2,
                "payoff1": self.payoff1.tolist(), "payoff2": self.payoff2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Game":
        g = cls(d["payoff1"], d["payoff2"])
        if "m1" in d and (d["m1"], d["m2"]) != g.shape:
            raise ShapeError(f"declared shape ({d['m1']}, {d['m2']}) != {g.shape}")
        return g


@dataclass(frozen=True, eq=False)
class CorrelatedEquilibrium:
    """A joint distribution over action profiles.

    Entries down to ``-1e-12`` are clamped to zero and a total within ``1e-9``
    of one is renormalised; anything worse is rejected.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise ShapeError("equilibrium must be a matrix")
        if not np.all(np.isfinite(p)):
            raise ValueError("equilibrium has non-finite entries")
        if p.min() < -PROB_NEG_TOL:
            raise ValueError(f"negative probability {p.min():.3g}")
        p = np.clip(p, 0.0, None)
        total = p.sum()
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def __eq__(self, other):
        if not isinstance(other, CorrelatedEquilibrium):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    @classmethod
    def point_mass(cls, m1: int, m2: int, i: int, j: int) -> "CorrelatedEquilibrium":
        p = np.zeros((m1, m2))
        p[i, j] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, m1: int, m2: int) -> "CorrelatedEquilibrium":
        return cls(np.full((m1, m2), 1.0 / (m1 * m2)))


class ObservationModel(enum.Enum):
    PARTIAL_PAYOFF = "partial_payoff"
    SHIFTER = "shifter"
    NONE = "none"


class Metric(enum.Enum):
    D2 = "d2"
    DINF = "dinf"


@dataclass(frozen=True)
class Observation:
    equilibrium: CorrelatedEquilibrium
    payoff_info: Optional[tuple[float, float]] = None
    shifter: Optional[Game] = None


@dataclass(frozen=True)
class ObservationSet:
    model: ObservationModel
    observations: tuple[Observation, ...]

    def __post_init__(self):
        obs = tuple(self.observations)
        object.__setattr__(self, "observations", obs)
        if not obs:
            raise ValueError("need at least one observation")
        shape = obs[0].equilibrium.shape
        for k, o in enumerate(obs):
            if o.equilibrium.shape != shape:
                raise ShapeError(f"observation {k} has shape {o.equilibrium.shape}, expected {shape}")
            if o.shifter is not None and o.shifter.shape != shape:
                raise ShapeError(f"shifter {k} has shape {o.shifter.shape}, expected {shape}")
            if self.model is ObservationModel.PARTIAL_PAYOFF and o.payoff_info is None:
                raise ModelError(f"observation {k} lacks payoff information")
            if self.model is ObservationModel.SHIFTER and o.shifter is None:
                raise ModelError(f"observation {k} lacks a payoff shifter")

    @property
    def m1(self) -> int:
        return self.observations[0].equilibrium.shape[0]

    @property
    def m2(self) -> int:
        return self.observations[0].equilibrium.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m1, self.m2)

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def __getitem__(self, k):
        return self.observations[k]

    @property
    def equilibria(self) -> list[CorrelatedEquilibrium]:
        return [o.equilibrium for o in self.observations]

    def subset(self, idx: Sequence[int]) -> "ObservationSet":
        return ObservationSet(self.model, tuple(self.observations[k] for k in idx))

    def with_model(self, model: ObservationModel) -> "ObservationSet":
        return ObservationSet(model, self.observations)

    def to_dict(self) -> dict:
        out = []
        for o in self.observations:
            d = {"e": o.equilibrium.probs.tolist()}
            if o.payoff_info is not None:
                d["v"] = [float(o.payoff_info[0]), float(o.payoff_info[1])]
            if o.shifter is not None:
                d["beta"] = [o.shifter.payoff1.tolist(), o.shifter.payoff2.tolist()]
            out.append(d)
        return {"model": self.model.value, "observations": out}

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationSet":
        model = ObservationModel(d["model"])
        obs = []
        for item in d["observations"]:
            v = item.get("v")
            beta = item.get("beta")
            obs.append(Observation(
                CorrelatedEquilibrium(item["e"]),
                payoff_info=None if v is None else (float(v[0]), float(v[1])),
                shifter=None if beta is None else Game(beta[0], beta[1]),
            ))
        return cls(model, tuple(obs))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "ObservationSet":
        return cls.from_dict(json.loads(s))


def _check_shape(g: Game, e: CorrelatedEquilibrium):
    if g.shape != e.shape:
        raise ShapeError(f"game shape {g.shape} != equilibrium shape {e.shape}")


def deviation_gains(g: Game, e: CorrelatedEquilibrium) -> tuple[np.ndarray, np.ndarray]:
    """Expected gains from every deviation.

    ``row[i, i2]`` is player 1's gain from playing ``i2`` when told ``i``;
    ``col[j, j2]`` likewise for player 2. Diagonals are zero.
    """
    _check_shape(g, e)
    p = e.probs
    # row[i, i2] = sum_j e(i,j) * (G1(i2,j) - G1(i,j))
    row = p @ g.payoff1.T - np.sum(p * g.payoff1, axis=1)[:, None]
    col = p.T @ g.payoff2 - np.sum(p * g.payoff2, axis=0)[:, None]
    return row, col


def is_correlated_equilibrium(g: Game, e: CorrelatedEquilibrium, tol: float = 0.0) -> bool:
    row, col = deviation_gains(g, e)
    return bool(row.max() <= tol and col.max() <= tol)


def expected_payoffs(g: Game, e: CorrelatedEquilibrium) -> tuple[float, float]:
    _check_shape(g, e)
    return float(np.sum(e.probs * g.payoff1)), float(np.sum(e.probs * g.payoff2))


def metric_distance(metric: Metric, g: Game, perturbed: Sequence[Game],
                    shifters: Optional[Sequence[Game]] = None) -> float:
    """Distance between ``g`` and the perturbed games (shifted back first if given)."""
    diffs = []
    for k, gk in enumerate(perturbed):
        if gk.shape != g.shape:
            raise ShapeError(f"perturbed game {k} has shape {gk.shape}, expected {g.shape}")
        d1 = gk.payoff1 - g.payoff1
        d2 = gk.payoff2 - g.payoff2
        if shifters is not None:
            d1 = d1 - shifters[k].payoff1
            d2 = d2 - shifters[k].payoff2
        diffs.append(d1)
        diffs.append(d2)
    if not diffs:
        return 0.0
    stack = np.stack(diffs)
    if metric is Metric.D2:
        return float(np.sum(stack ** 2))
    return float(np.max(np.abs(stack)))


def ce_constraint_matrix(g: Game) -> np.ndarray:
    """Rows ``a`` with ``a @ vec(e) >= 0`` for each CE deviation inequality."""
    m1, m2 = g.shape
    rows = []
    for i in range(m1):
        for i2 in range(m1):
            if i == i2:
                continue
            a = np.zeros((m1, m2))
            a[i, :] = g.payoff1[i, :] - g.payoff1[i2, :]
            rows.append(a.ravel())
    for j in range(m2):
        for j2 in range(m2):
            if j == j2:
                continue
            a = np.zeros((m1, m2))
            a[:, j] = g.payoff2[:, j] - g.payoff2[:, j2]
            rows.append(a.ravel())
    return np.array(rows).reshape(len(rows), m1 * m2)


def enumerate_ce_vertices(g: Game, tol: float = 1e-8) -> list[CorrelatedEquilibrium]:
    """Vertices of the correlated-equilibrium polytope (desk-sized games only)."""
    import cdd

    m1, m2 = g.shape
    n = m1 * m2
    if n > VERTEX_CAP:
        raise CapacityError(f"m1*m2 = {n} exceeds vertex enumeration cap {VERTEX_CAP}")
    A = ce_constraint_matrix(g)
    # cdd rows are [b, a] meaning b + a.x >= 0; last row is the equality sum(x) = 1
    rows = [[0.0] + list(r) for r in A]
    rows += [[0.0] + list(np.eye(n)[t]) for t in range(n)]
    rows.append([-1.0] + [1.0] * n)
    mat = cdd.matrix_from_array(rows, rep_type=cdd.RepType.INEQUALITY, lin_set={len(rows) - 1})
    gens = cdd.copy_generators(cdd.polyhedron_from_matrix(mat))
    out: list[CorrelatedEquilibrium] = []
    seen: list[np.ndarray] = []
    for row in gens.array:
        if abs(row[0] - 1.0) > 1e-9:
            continue  # rays cannot occur in a bounded polytope
        x = np.array(row[1:]).reshape(m1, m2)
        x[np.abs(x) < 1e-12] = 0.0
        x = np.clip(x, 0.0, None)
        x = x / x.sum()
        if any(np.allclose(x, s, atol=1e-10) for s in seen):
            continue
        e = CorrelatedEquilibrium(x)
        if not is_correlated_equilibrium(g, e, tol):
            continue
        seen.append(x)
        out.append(e)
    return out


def pure_nash_profiles(g: Game) -> list[tuple[int, int]]:
    br1 = g.payoff1 >= g.payoff1.max(axis=0, keepdims=True)
    br2 = g.payoff2 >= g.payoff2.max(axis=1, keepdims=True)
    return [tuple(int(t) for t in ij) for ij in zip(*np.nonzero(br1 & br2))]


def nash_equilibria_2x2(g: Game) -> list[CorrelatedEquilibrium]:
    """Pure Nash equilibria plus the fully mixed one when it exists."""
    if g.shape != (2, 2):
        raise ShapeError("closed-form Nash list needs a 2x2 game")
    eqs = [CorrelatedEquilibrium.point_mass(2, 2, i, j) for i, j in pure_nash_profiles(g)]
    A, B = g.payoff1, g.payoff2
    # p = P(row 0) makes player 2 indifferent; q = P(col 0) makes player 1 indifferent
    den_p = (B[0, 0] - B[0, 1]) - (B[1, 0] - B[1, 1])
    den_q = (A[0, 0] - A[1, 0]) - (A[0, 1] - A[1, 1])
    if abs(den_p) > 1e-12 and abs(den_q) > 1e-12:
        p = (B[1, 1] - B[1, 0]) / den_p
        q = (A[1, 1] - A[0, 1]) / den_q
        if 0.0 < p < 1.0 and 0.0 < q < 1.0:
            eqs.append(CorrelatedEquilibrium(np.outer([p, 1 - p], [q, 1 - q])))
    return eqs
