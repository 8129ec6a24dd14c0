"""Cournot competition with known price and unknown convex polynomial costs.

Equilibrium quantities enter only through first-order conditions, which are
linear in the cost coefficients; convexity of each cost is certified by a
sum-of-squares Gram matrix for its second derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .conic import Affine, ConicProgram, Solution, Status, linear_sum, solve
from .diameter import DiameterReport, PairwiseTemplate, pairwise_maximize, reduce_results, UNBOUNDED_CAP
from .game import Metric

# price(q) -> (P(q), dP/dq_i for every i)
PriceFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


class SimulationError(RuntimeError):
    pass


def affine_price(alpha: float) -> PriceFn:
    """``P(q) = 1 - alpha * sum(q)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")

    def price(q: np.ndarray):
        q = np.asarray(q, dtype=float)
        return 1.0 - alpha * float(q.sum()), np.full(q.shape, -alpha)

    return price


@dataclass
class CournotModel:
    """``coeffs[i, ex - 1]`` multiplies ``q_i ** ex``; the constant term is zero."""

    alpha: float
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1]

    def cost(self, i: int, x):
        x = np.asarray(x, dtype=float)
        return sum(a * x ** (ex + 1) for ex, a in enumerate(self.coeffs[i]))

    def marginal_cost(self, i: int, x):
        x = np.asarray(x, dtype=float)
        return sum((ex + 1) * a * x ** ex for ex, a in enumerate(self.coeffs[i]))

    def curvature(self, i: int, x):
        """Second derivative of player i's cost."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for ex, a in enumerate(self.coeffs[i]):
            k = ex + 1
            if k >= 2:
                out = out + k * (k - 1) * a * x ** (k - 2)
        return out

    def is_convex_on(self, lo: float, hi: float, points: int = 2001, tol: float = 1e-6) -> bool:
        xs = np.linspace(lo, hi, points)
        return all(bool(np.all(self.curvature(i, xs) >= -tol)) for i in range(self.n))

    def equilibrium(self) -> np.ndarray:
        """Closed-form equilibrium for linear costs and affine price:
        ``alpha * (q_i + sum(q)) = 1 - a_i``."""
        if self.degree != 1 and np.any(self.coeffs[:, 1:] != 0):
            raise ValueError("closed form needs linear costs")
        A = self.alpha * (np.eye(self.n) + np.ones((self.n, self.n)))
        return np.linalg.solve(A, 1.0 - self.coeffs[:, 0])

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CournotModel":
        return cls(float(d["alpha"]), np.array(d["coeffs"], dtype=float))


@dataclass
class CournotObservation:
    quantities: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quantities, dtype=float).ravel()
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise ValueError("quantities must be finite and nonnegative")
        self.quantities = q


def _as_obs(obs) -> list[CournotObservation]:
    return [o if isinstance(o, CournotObservation) else CournotObservation(o) for o in obs]


# ---------------------------------------------------------------------------
# constraint builders

def build_foc_constraints(program: ConicProgram, coeff_vars: np.ndarray, q: CournotObservation,
                          price: PriceFn) -> None:
    """``q_i dP/dq_i + P = sum_k k a_i(k) q_i^(k-1)`` for every player."""
    P, grad = price(q.quantities)
    n, d = coeff_vars.shape
    for i in range(n):
        qi = q.quantities[i]
        lhs = qi * grad[i] + P
        coefs = [(k + 1) * qi ** k for k in range(d)]
        program.add_eq(linear_sum(coefs, coeff_vars[i]), lhs, tag="foc")


def build_sos_convexity(program: ConicProgram, coeff_row: Sequence, degree: int, name: str = "gram") -> None:
    """Certify ``c''(x) >= 0`` on the real line with a PSD Gram matrix.

    ``c''(x) = sum_{k>=2} k (k-1) a(k) x^(k-2)``; monomials up to ``x^s`` with
    ``s = ceil((degree - 2) / 2)``. Degrees absent from ``c''`` (the top one
    when ``degree - 2`` is odd) are matched to zero.
    """
    if degree <= 1:
        return
    s = math.ceil((degree - 2) / 2)
    Q = program.symmetric(name, s + 1)
    for t in range(2 * s + 1):
        terms = [Q[a, t - a] for a in range(s + 1) if 0 <= t - a <= s]
        gram = linear_sum([1.0] * len(terms), terms)
        k = t + 2
        target = k * (k - 1) * Affine.lift(coeff_row[k - 1]) if k <= degree else Affine()
        program.add_eq(gram - target, 0.0, tag="sos")
    program.add_psd(Q, tag="sos")


def _coef_metric(program: ConicProgram, base: np.ndarray, perturbed: Sequence[np.ndarray],
                 metric: Metric, delta) -> list:
    res = [Affine.lift(a) - b for ak in perturbed for a, b in zip(ak.ravel(), base.ravel())]
    if delta is None:
        return res
    if isinstance(delta, Affine):
        for r in res:
            program.add_le(r - delta, 0.0, tag="metric")
            program.add_ge(r + delta, 0.0, tag="metric")
        return res
    delta = float(delta)
    if delta == 0.0:
        for r in res:
            program.add_eq(r, 0.0, tag="metric")
    elif metric is Metric.D2:
        program.add_soc(math.sqrt(delta), res, tag="metric")
    else:
        for r in res:
            program.add_le(r, delta, tag="metric")
            program.add_ge(r, -delta, tag="metric")
    return res


@dataclass
class CournotCopy:
    base: np.ndarray
    perturbed: list
    residuals: list


def build_cournot_copy(program: ConicProgram, obs: Sequence[CournotObservation], degree: int,
                       price: PriceFn, metric: Metric, delta, prefix: str = "") -> CournotCopy:
    """One consistent model: FOCs per observation on perturbed coefficients,
    convexity of base and perturbed costs, and the budget on their distance."""
    n = len(obs[0].quantities)
    base = program.matrix(f"{prefix}a", n, degree)
    for i in range(n):
        build_sos_convexity(program, base[i], degree, f"{prefix}gram_{i}")
    perturbed = []
    for k, q in enumerate(obs):
        if len(q.quantities) != n:
            raise ValueError("observations disagree on the number of players")
        ak = program.matrix(f"{prefix}a{k + 1}", n, degree)
        build_foc_constraints(program, ak, q, price)
        for i in range(n):
            build_sos_convexity(program, ak[i], degree, f"{prefix}gram{k + 1}_{i}")
        perturbed.append(ak)
    res = _coef_metric(program, base, perturbed, metric, delta)
    return CournotCopy(base, perturbed, res)


# ---------------------------------------------------------------------------
# queries

@dataclass
class CournotRecovery:
    status: Status
    delta_star: float
    model: Optional[CournotModel]
    perturbed: list = field(default_factory=list)
    solution: Optional[Solution] = None

    def to_dict(self) -> dict:
        return {"status": self.status.value, "delta_star": self.delta_star,
                "model": self.model.to_dict() if self.model else None,
                "perturbed": [m.to_dict() for m in self.perturbed]}


def cournot_min_perturbation(obs, degree: int = 1, metric: Metric = Metric.D2, alpha: float = 0.05,
                             price: Optional[PriceFn] = None, backend=None) -> CournotRecovery:
    obs = _as_obs(obs)
    price = price or affine_price(alpha)
    prog = ConicProgram("cournot_recovery")
    if metric is Metric.D2:
        copy = build_cournot_copy(prog, obs, degree, price, metric, None)
        prog.minimize(squares=copy.residuals)
    else:
        t = prog.scalar("delta")
        copy = build_cournot_copy(prog, obs, degree, price, metric, t)
        prog.minimize(t)
    sol = solve(prog, backend)
    if sol.status is not Status.OPTIMAL:
        return CournotRecovery(sol.status, math.nan, None, [], sol)
    model = CournotModel(alpha, sol.value(copy.base))
    pert = [CournotModel(alpha, sol.value(a)) for a in copy.perturbed]
    return CournotRecovery(sol.status, max(sol.objective_value, 0.0), model, pert, sol)


def cournot_template(obs, delta: float, degree: int, metric: Metric, alpha: float,
                     price: Optional[PriceFn] = None) -> PairwiseTemplate:
    obs = _as_obs(obs)
    price = price or affine_price(alpha)
    prog = ConicProgram("cournot_diameter")
    left = build_cournot_copy(prog, obs, degree, price, metric, delta, "A")
    right = build_cournot_copy(prog, obs, degree, price, metric, delta, "B")

    def extract(sol: Solution, side: str) -> CournotModel:
        return CournotModel(alpha, sol.value((left if side == "left" else right).base))

    return PairwiseTemplate(prog, left.base, right.base, extract)


def cournot_diameter(obs, delta: float, degree: int = 1, metric: Metric = Metric.D2, alpha: float = 0.05,
                     price: Optional[PriceFn] = None, backend=None, jobs: Optional[int] = None,
                     cap: float = UNBOUNDED_CAP) -> DiameterReport:
    """Largest gap in any single cost coefficient between two consistent models.

    The pairwise program is symmetric under swapping the two copies, so one
    direction per coefficient suffices. ``argmax`` is ``(player, exponent)``.
    """
    if not delta >= 0:
        raise ValueError("delta must be nonnegative")
    tpl = cournot_template(obs, delta, degree, metric, alpha, price)
    rep = reduce_results(pairwise_maximize(tpl, backend, jobs, cap), tpl.left.shape)
    if rep.argmax is not None:
        rep.argmax = (rep.argmax[0], rep.argmax[1] + 1)
    return rep


# ---------------------------------------------------------------------------
# simulation

@dataclass
class CournotInstance:
    model: CournotModel
    perturbed: list
    observations: list

    def subset(self, l: int) -> list:
        return self.observations[:l]


def _truncated(rng: np.random.Generator, base: np.ndarray, sigma: float) -> np.ndarray:
    """``base + max(Z, -base)``: Gaussian noise truncated to keep values nonnegative."""
    return base + np.maximum(rng.normal(0.0, sigma, size=base.shape), -base)


def simulate_cournot(n: int = 10, alpha: float = 0.05, a_hat: float = 0.01, sigma_game: float = 0.01,
                     sigma_obs: float = 0.001, l: int = 10, n_g: int = 10, seed: int = 0,
                     max_redraws: int = 100) -> list[CournotInstance]:
    """Draw ``n_g`` linear-cost games around ``a_hat`` and ``l`` perturbed equilibria each.

    Streams: game g uses child g of the root seed; its base costs use that
    child's first grandchild and observation k its (k + 1)-th, so the first l
    observations do not depend on how many are drawn in total.
    """
    if n < 1 or l < 0 or n_g < 1 or alpha <= 0 or a_hat < 0 or sigma_game < 0 or sigma_obs < 0:
        raise ValueError("invalid simulation parameters")
    out = []
    for gss in np.random.SeedSequence(seed).spawn(n_g):
        base_ss, *obs_ss = gss.spawn(l + 1)
        rng = np.random.default_rng(base_ss)
        for _ in range(max_redraws):
            a = _truncated(rng, np.full(n, a_hat), sigma_game)
            if np.all(CournotModel(alpha, a[:, None]).equilibrium() > 0):
                break
        else:
            raise SimulationError("no game with positive equilibrium quantities")
        pert, obs = [], []
        for ss in obs_ss:
            r = np.random.default_rng(ss)
            for _ in range(max_redraws):
                ak = CournotModel(alpha, _truncated(r, a, sigma_obs)[:, None])
                q = ak.equilibrium()
                if np.all(q > 0):
                    break
            else:
                raise SimulationError("no perturbed game with positive equilibrium quantities")
            pert.append(ak)
            obs.append(CournotObservation(q))
        out.append(CournotInstance(CournotModel(alpha, a[:, None]), pert, obs))
    return out
