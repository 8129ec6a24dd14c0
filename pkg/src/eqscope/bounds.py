"""Identification from payoff observations: observation matrix, inverse norms,
recovery-error bounds and a near-singular construction showing they are tight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .consistency import ConsistencyInstance, Recovery, min_perturbation
from .game import (CorrelatedEquilibrium, Game, Metric, ModelError, Observation, ObservationModel,
                   ObservationSet, enumerate_ce_vertices, expected_payoffs, metric_distance)

RANK_TOL = 1e-10
COND_LIMIT = 1e12


class NotIdentifiable(ValueError):
    def __init__(self, rank: int, needed: int):
        super().__init__(f"observations span rank {rank}, need {needed}")
        self.rank = rank
        self.needed = needed


@dataclass
class ObservationMatrix:
    """Rows are vectorised (row-major) equilibria of the selected observations."""

    E: np.ndarray
    indices: tuple
    condition: float

    @property
    def singular(self) -> bool:
        return not self.condition <= COND_LIMIT

    @property
    def size(self) -> int:
        return self.E.shape[0]


def select_independent_subset(obs: ObservationSet, tol: float = RANK_TOL) -> ObservationMatrix:
    """Greedy pivoted elimination: repeatedly take the observation with the largest
    component orthogonal to those already chosen (a heuristic, not optimal conditioning)."""
    n = obs.shape[0] * obs.shape[1]
    M = np.array([o.equilibrium.probs.ravel() for o in obs])
    if len(M) == 0:
        raise NotIdentifiable(0, n)
    _, R, piv = scipy.linalg.qr(M.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol))
    if rank < n:
        raise NotIdentifiable(rank, n)
    idx = tuple(int(k) for k in piv[:n])
    E = M[list(idx)]
    return ObservationMatrix(E, idx, float(np.linalg.cond(E)))


def _as_matrix(E) -> np.ndarray:
    return E.E if isinstance(E, ObservationMatrix) else np.asarray(E, dtype=float)


def induced_norm_inverse(E, which: str = "two", rtol: float = 1e-8, max_iter: int = 100000) -> float:
    """``||E^-1||_2`` by power iteration on ``E^-T E^-1``, or ``||E^-1||_inf`` by row sums."""
    A = _as_matrix(E)
    if A.shape[0] != A.shape[1]:
        raise ValueError("observation matrix must be square")
    if not np.linalg.cond(A) <= COND_LIMIT:
        raise np.linalg.LinAlgError("observation matrix is singular")
    if which in ("inf", "infinity"):
        return float(np.abs(np.linalg.inv(A)).sum(axis=1).max())
    if which not in ("two", "2"):
        raise ValueError(f"unknown norm {which!r}")
    lu = scipy.linalg.lu_factor(A)
    x = np.random.default_rng(0).normal(size=A.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = scipy.linalg.lu_solve(lu, x)
        z = scipy.linalg.lu_solve(lu, y, trans=1)
        new = float(np.linalg.norm(z))
        x = z / new
        if abs(new - lam) <= rtol * new:
            lam = new
            break
        lam = new
    return math.sqrt(lam)


@dataclass
class BoundCheck:
    lhs: tuple
    rhs: float
    ok: bool
    provable_rhs: float

    def to_dict(self) -> dict:
        return {"lhs": list(self.lhs), "rhs": self.rhs, "ok": self.ok,
                "provable_rhs": self.provable_rhs}


def recovery_bound(E, delta: float, metric: Metric) -> float:
    """Guaranteed per-player recovery error as stated for each metric:
    ``sqrt(2 ||E^-1||_2 delta)`` for d2 and ``2 ||E^-1||_inf delta`` for d-inf."""
    if metric is Metric.D2:
        return math.sqrt(2.0 * induced_norm_inverse(E, "two") * delta)
    return 2.0 * induced_norm_inverse(E, "inf") * delta


def provable_recovery_bound(E, delta: float, metric: Metric) -> float:
    """Bound that follows from ``||E dG|| <= ||x||`` with ``sum ||x_k||^2 <= 4 delta``;
    for d2 that is ``2 ||E^-1||_2 sqrt(delta)``, for d-inf it equals the stated one."""
    if metric is Metric.D2:
        return 2.0 * induced_norm_inverse(E, "two") * math.sqrt(delta)
    return recovery_bound(E, delta, metric)


def verify_recovery_bound(true_game: Game, recovered: Game, E, delta: float, metric: Metric,
                          tol: float = 1e-6) -> BoundCheck:
    lhs = []
    for p in (1, 2):
        d = (true_game.payoff(p) - recovered.payoff(p)).ravel()
        lhs.append(float(np.linalg.norm(d)) if metric is Metric.D2 else float(np.abs(d).max()))
    rhs = recovery_bound(E, delta, metric)
    return BoundCheck(tuple(lhs), rhs, all(v <= rhs + tol for v in lhs),
                      provable_recovery_bound(E, delta, metric))


@dataclass
class RecoveryFixture:
    game: Game
    perturbed: list
    obs: ObservationSet
    delta: float


def recovery_fixture(seed: int, metric: Metric, delta: float = 0.1, m1: int = 2, m2: int = 2,
                     max_tries: int = 100) -> RecoveryFixture:
    """Random game, perturbations scaled to exactly ``delta`` in ``metric``, and
    ``m1*m2`` observed equilibria (random mixtures of correlated-equilibrium vertices)
    with linearly independent vectorisations."""
    rng = np.random.default_rng(seed)
    n = m1 * m2
    for _ in range(max_tries):
        g = Game(rng.normal(size=(m1, m2)), rng.normal(size=(m1, m2)))
        Z = rng.normal(size=(n, 2, m1, m2))
        if metric is Metric.D2:
            Z *= math.sqrt(delta) / np.linalg.norm(Z)
        else:
            Z *= delta / np.abs(Z).max()
        games, obs = [], []
        for k in range(n):
            gk = Game(g.payoff1 + Z[k, 0], g.payoff2 + Z[k, 1])
            verts = enumerate_ce_vertices(gk)
            w = rng.dirichlet(np.ones(len(verts)))
            e = CorrelatedEquilibrium(sum(wi * v.probs for wi, v in zip(w, verts)))
            games.append(gk)
            obs.append(Observation(e, payoff_info=expected_payoffs(gk, e)))
        E = np.array([o.equilibrium.probs.ravel() for o in obs])
        if np.linalg.matrix_rank(E, tol=1e-8) == n:
            return RecoveryFixture(g, games, ObservationSet(ObservationModel.PARTIAL_PAYOFF, obs), delta)
    raise RuntimeError("could not draw independent equilibria")


# ---------------------------------------------------------------------------
# tightness construction

@dataclass
class Example2:
    """Four near-uniform equilibria with payoffs (d, -d, d, -d) and two far-apart
    explanations. Player 2's payoffs are zero throughout; player-1 payoffs are
    constant within each column so every distribution is an equilibrium."""

    epsilon: float
    delta: float
    obs: ObservationSet
    G: Game
    Gk: list
    Ghat: Game
    Ghatk: list

    @property
    def dinf_G(self) -> float:
        return self.delta / (0.5 + 2 * self.epsilon / 3)

    @property
    def dinf_Ghat(self) -> float:
        return 2 * self.delta / (3 - 4 * self.epsilon)

    @property
    def stated_gap(self) -> float:
        """Lower bound on ``||G - Ghat||_inf`` in closed form."""
        return self.delta / self.epsilon - self.dinf_G

    @property
    def gap(self) -> float:
        return float(np.abs(self.G.payoff1 - self.Ghat.payoff1).max())

    def E(self) -> np.ndarray:
        return np.array([o.equilibrium.probs.ravel() for o in self.obs])


def _columns(a: float, b: float) -> Game:
    return Game(np.array([[a, b], [a, b]]), np.zeros((2, 2)))


def example2_instance(epsilon: float, delta: float) -> Example2:
    if not 0 < epsilon < 0.25:
        raise ValueError("epsilon must lie in (0, 0.25)")
    if not delta > 0:
        raise ValueError("delta must be positive")
    hi, lo = 0.25 + epsilon, (0.75 - epsilon) / 3
    v = [delta, -delta, delta, -delta]
    obs = []
    for k in range(4):
        p = np.full(4, lo)
        p[k] = hi
        obs.append(Observation(CorrelatedEquilibrium(p.reshape(2, 2)), payoff_info=(v[k], 0.0)))
    c = delta / (0.5 + 2 * epsilon / 3)
    up, down = _columns(c, 0.0), _columns(0.0, -c)
    r = delta / epsilon
    s = r * (3 - 2 * epsilon) / (3 - 4 * epsilon)
    hat_up, hat_down = _columns(r, -s), _columns(s, -r)
    return Example2(epsilon, delta, ObservationSet(ObservationModel.PARTIAL_PAYOFF, obs),
                    Game.constant(2, 2, 0.0), [up, down, up, down],
                    _columns(r, -r), [hat_up, hat_down, hat_up, hat_down])


def example2_dinf(ex: Example2) -> tuple[float, float]:
    """Realised d-inf of the two explanations."""
    return (metric_distance(Metric.DINF, ex.G, ex.Gk), metric_distance(Metric.DINF, ex.Ghat, ex.Ghatk))


# ---------------------------------------------------------------------------
# sparse games

@dataclass
class SparseRecovery:
    recovery: Recovery
    rows: tuple
    cols: tuple
    game: Optional[Game]


def recover_sparse(obs: ObservationSet, metric: Metric = Metric.D2, backend=None) -> SparseRecovery:
    """Recover only the subgame of actions ever played, then give every
    never-played action a payoff one below the subgame minimum so that it is
    never a profitable deviation."""
    if obs.model is not ObservationModel.PARTIAL_PAYOFF:
        raise ModelError("sparse recovery needs payoff observations")
    support = sum(o.equilibrium.probs for o in obs) > 0
    rows = tuple(int(i) for i in np.flatnonzero(support.any(axis=1)))
    cols = tuple(int(j) for j in np.flatnonzero(support.any(axis=0)))
    sub = []
    for o in obs:
        e = CorrelatedEquilibrium(o.equilibrium.probs[np.ix_(rows, cols)])
        sub.append(Observation(e, payoff_info=o.payoff_info))
    rec = min_perturbation(ConsistencyInstance(ObservationSet(obs.model, sub), metric), backend)
    if rec.game is None:
        return SparseRecovery(rec, rows, cols, None)
    full = []
    for p in (1, 2):
        sg = rec.game.payoff(p)
        out = np.full(obs.shape, float(sg.min()) - 1.0)
        out[np.ix_(rows, cols)] = sg
        full.append(out)
    return SparseRecovery(rec, rows, cols, Game(*full))
