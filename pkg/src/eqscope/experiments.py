"""Simulation harness: entry games, chi-square budgets, region scans and file output."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammainc

from .conic import ConicProgram, Status
from .consistency import ConsistencyInstance, GameVars, PropertySpec, min_perturbation
from .game import (CorrelatedEquilibrium, Game, Metric, Observation, ObservationModel, ObservationSet,
                   enumerate_ce_vertices, expected_payoffs, nash_equilibria_2x2)

QUANTILE_TOL = 1e-8


# ---------------------------------------------------------------------------
# chi-square budget

def chi_square_quantile(dof: int, level: float, tol: float = QUANTILE_TOL) -> float:
    """Inverse CDF by bisection on the regularised lower incomplete gamma."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    a = dof / 2.0
    cdf = lambda x: gammainc(a, x / 2.0)
    lo, hi = 0.0, max(1.0, float(dof))
    while cdf(hi) < level:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if cdf(mid) < level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi_square_delta(dof: int, level: float, sigma: float) -> float:
    """``sigma**2`` times the chi-square quantile: a budget the sum of ``dof``
    squared N(0, sigma^2) perturbations stays under with probability ``level``."""
    return sigma ** 2 * chi_square_quantile(dof, level)


def entry_delta(l: int, sigma: float, mode: str = "asym", level: float = 0.99) -> float:
    """Budget for entry-game data: independent noise on all four entry payoffs
    (4l terms), or one shared draw per player and observation counted twice (2 * 2l)."""
    if mode == "asym":
        return chi_square_delta(4 * l, level, sigma)
    if mode == "sym":
        return 2.0 * chi_square_delta(2 * l, level, sigma)
    raise ValueError(f"unknown dof mode {mode!r}")


# ---------------------------------------------------------------------------
# entry games

# payoff entries where the player enters; everything else is zero by construction
ENTRY_CELLS = {1: ((1, 0), (1, 1)), 2: ((0, 1), (1, 1))}
ZERO_CELLS = {1: ((0, 0), (0, 1)), 2: ((0, 0), (1, 0))}


@dataclass
class EntryGameParams:
    gamma1: float = 5.0
    gamma2: float = 5.0
    theta1: float = -10.0
    theta2: float = -10.0
    sigma: float = 0.5
    sigma_s: float = 0.0
    l: int = 500
    seed: int = 0
    noise: str = "asym"   # "sym": one draw per player shared by both entry payoffs

    def __post_init__(self):
        if self.theta1 > self.gamma1 or self.theta2 > self.gamma2:
            raise ValueError("duopoly payoff must not exceed monopoly payoff")
        if self.sigma < 0 or self.sigma_s < 0:
            raise ValueError("standard deviations must be nonnegative")
        if self.noise not in ("sym", "asym"):
            raise ValueError("noise must be 'sym' or 'asym'")


def entry_game(gamma1: float, theta1: float, gamma2: float, theta2: float) -> Game:
    """Action 1 is entering: ``G_p(a_p, a_-p) = a_p ((1 - a_-p) gamma_p + a_-p theta_p)``."""
    g1 = np.array([[0.0, 0.0], [gamma1, theta1]])
    g2 = np.array([[0.0, gamma2], [0.0, theta2]])
    return Game(g1, g2)


def _entry_noise(rng: np.random.Generator, sd: float, mode: str) -> Game:
    out = {1: np.zeros((2, 2)), 2: np.zeros((2, 2))}
    for p in (1, 2):
        z = rng.normal(0.0, sd, size=2)
        if mode == "sym":
            z[1] = z[0]
        for c, v in zip(ENTRY_CELLS[p], z):
            out[p][c] = v
    return Game(out[1], out[2])


def equilibrium_pool(g: Game, include_ce_vertices: bool = False) -> list[CorrelatedEquilibrium]:
    pool = nash_equilibria_2x2(g)
    if include_ce_vertices:
        for v in enumerate_ce_vertices(g):
            if not any(np.allclose(v.probs, e.probs, atol=1e-9) for e in pool):
                pool.append(v)
    return pool


@dataclass
class EntryData:
    params: EntryGameParams
    model: ObservationModel
    obs: ObservationSet
    game: Game
    perturbed: list
    shifters: list

    def true_delta(self, metric: Metric = Metric.D2) -> float:
        from .game import metric_distance
        sh = self.shifters if self.model is ObservationModel.SHIFTER else None
        return metric_distance(metric, self.game, self.perturbed, sh)


def generate_entry_observations(p: EntryGameParams, model: ObservationModel = ObservationModel.PARTIAL_PAYOFF,
                                include_ce_vertices: bool = False) -> EntryData:
    """Perturb the entry payoffs, pick an equilibrium of each perturbed game
    uniformly at random, and record what ``model`` lets the observer see.

    Observation k draws from child k of ``SeedSequence(seed)``: four shifter
    values, four noise values, then the equilibrium index. Shifters are drawn
    in every model (and ignored outside the shifter model) so the noise stream
    does not depend on the model.
    """
    g = entry_game(p.gamma1, p.theta1, p.gamma2, p.theta2)
    perturbed, shifters, obs = [], [], []
    for ss in np.random.SeedSequence(p.seed).spawn(p.l):
        rng = np.random.default_rng(ss)
        beta = _entry_noise(rng, p.sigma_s, "asym")
        noise = _entry_noise(rng, p.sigma, p.noise)
        if model is not ObservationModel.SHIFTER:
            beta = Game.constant(2, 2, 0.0)
        gk = Game(g.payoff1 + beta.payoff1 + noise.payoff1, g.payoff2 + beta.payoff2 + noise.payoff2)
        pool = equilibrium_pool(gk, include_ce_vertices)
        e = pool[int(rng.integers(len(pool)))]
        perturbed.append(gk)
        shifters.append(beta)
        if model is ObservationModel.PARTIAL_PAYOFF:
            obs.append(Observation(e, payoff_info=expected_payoffs(gk, e)))
        elif model is ObservationModel.SHIFTER:
            obs.append(Observation(e, shifter=beta))
        else:
            obs.append(Observation(e))
    return EntryData(p, model, ObservationSet(model, obs), g, perturbed, shifters)


def entry_parametrization(fixed: Optional[dict] = None) -> PropertySpec:
    """Payoffs as linear functions of ``theta = (gamma1, theta1, gamma2, theta2)``
    with the non-entry payoffs fixed at zero."""
    c1 = np.zeros((2, 2, 4))
    c2 = np.zeros((2, 2, 4))
    c1[1, 0, 0] = c1[1, 1, 1] = 1.0
    c2[0, 1, 2] = c2[1, 1, 3] = 1.0
    return PropertySpec.linear_param(c1, c2, fixed_theta=fixed)


def entry_perturbation_hook(symmetric: bool = False):
    """Perturbations never touch the non-entry payoffs; with ``symmetric`` the
    perturbation of a player's entry payoff does not depend on the opponent."""

    def hook(program: ConicProgram, G: GameVars, Gks: Sequence[GameVars]) -> None:
        for gk in Gks:
            for p in (1, 2):
                for c in ZERO_CELLS[p]:
                    program.add_eq(gk.player(p)[c], 0.0, tag="structure")
                if symmetric:
                    a, b = ENTRY_CELLS[p]
                    d = (gk.player(p)[a] - G.player(p)[a]) - (gk.player(p)[b] - G.player(p)[b])
                    program.add_eq(d, 0.0, tag="symmetric_noise")

    return hook


def entry_instance(data: EntryData, metric: Metric = Metric.D2, fixed: Optional[dict] = None,
                   symmetric: bool = False) -> ConsistencyInstance:
    return ConsistencyInstance(data.obs, metric, None, entry_parametrization(fixed),
                               entry_perturbation_hook(symmetric))


# ---------------------------------------------------------------------------
# region scans

@dataclass
class RegionScan:
    """``values[a, b]`` is the least budget explaining the data with
    ``axis1 = values1[a]`` and ``axis2 = values2[b]`` (nan if the solve failed)."""

    axis_names: tuple
    axis_values: tuple
    values: np.ndarray
    budget: float
    timings: np.ndarray
    seed: Optional[int] = None
    diagnostics: list = field(default_factory=list)

    @property
    def inside(self) -> np.ndarray:
        return np.where(np.isnan(self.values), False, self.values <= self.budget)

    def with_budget(self, budget: float) -> "RegionScan":
        return RegionScan(self.axis_names, self.axis_values, self.values, budget, self.timings,
                          self.seed, self.diagnostics)

    def argmin(self) -> tuple:
        v = np.where(np.isnan(self.values), np.inf, self.values)
        a, b = np.unravel_index(int(np.argmin(v)), v.shape)
        return self.axis_values[0][a], self.axis_values[1][b]


PARAM_INDEX = {"gamma1": 0, "theta1": 1, "gamma2": 2, "theta2": 3}


def grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 12)


def scan_region(data: EntryData, axis1: Sequence[float], axis2: Sequence[float], budget: float,
                names: tuple = ("gamma1", "theta1"), metric: Metric = Metric.D2, symmetric: bool = False,
                backend=None, jobs: int = 1) -> RegionScan:
    """Least perturbation budget at each grid point with the named parameters pinned
    and the remaining ones free; cells above ``budget`` are outside the region."""
    a1, a2 = np.asarray(axis1, float), np.asarray(axis2, float)
    if a1.size == 0 or a2.size == 0:
        raise ValueError("grid must be nonempty")
    k1, k2 = PARAM_INDEX[names[0]], PARAM_INDEX[names[1]]
    cells = [(a, b) for a in range(a1.size) for b in range(a2.size)]

    def run(cell):
        a, b = cell
        inst = entry_instance(data, metric, {k1: float(a1[a]), k2: float(a2[b])}, symmetric)
        t0 = time.perf_counter()
        try:
            rec = min_perturbation(inst, backend)
            val = rec.delta_star if rec.status is Status.OPTIMAL else math.nan
            diag = "" if rec.status is Status.OPTIMAL else f"{cell}: {rec.status.value}"
        except Exception as exc:   # a failing cell must not stop the scan
            val, diag = math.nan, f"{cell}: {exc}"
        return val, time.perf_counter() - t0, diag

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(run, cells))
    else:
        out = [run(c) for c in cells]
    values = np.full((a1.size, a2.size), np.nan)
    timings = np.zeros_like(values)
    diags = []
    for (a, b), (v, t, d) in zip(cells, out):
        values[a, b], timings[a, b] = v, t
        if d:
            diags.append(d)
    return RegionScan(tuple(names), (a1, a2), values, float(budget), timings, data.params.seed, diags)


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.10g}"


def scan_csv(scan: RegionScan) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([scan.axis_names[0], scan.axis_names[1], "delta_star", "inside"])
    inside = scan.inside
    for a, x in enumerate(scan.axis_values[0]):
        for b, y in enumerate(scan.axis_values[1]):
            w.writerow([_fmt(x), _fmt(y), _fmt(scan.values[a, b]), int(inside[a, b])])
    return buf.getvalue()


def emit_outputs(scan: RegionScan, path, extra: Optional[dict] = None) -> tuple[Path, Path]:
    """Write ``scan.csv`` and ``manifest.json`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, man_path = out / "scan.csv", out / "manifest.json"
    csv_path.write_text(scan_csv(scan))
    manifest = {
        "axes": {n: [float(v) for v in vals] for n, vals in zip(scan.axis_names, scan.axis_values)},
        "budget": scan.budget,
        "seed": scan.seed,
        "cells": int(scan.values.size),
        "inside": int(scan.inside.sum()),
        "timings": scan.timings.tolist(),
        "diagnostics": list(scan.diagnostics),
    }
    if extra:
        manifest.update(extra)
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path, man_path


def params_dict(p: EntryGameParams) -> dict:
    return asdict(p)
