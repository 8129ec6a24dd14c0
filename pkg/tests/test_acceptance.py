"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every check runs at its stated tolerance. Criteria that do not hold for this
implementation are left failing; see the project notes for the analysis.
"""

import math
import time

import mpmath
import numpy as np

from eqscope.bounds import recovery_fixture, select_independent_subset, verify_recovery_bound, \
    example2_instance, example2_dinf
from eqscope.conic import ConicProgram, Status, solve
from eqscope.consistency import ConsistencyInstance, PropertySpec, build_consistency_program, \
    membership, min_perturbation, property_threshold
from eqscope.cournot import build_sos_convexity, cournot_diameter, cournot_min_perturbation, simulate_cournot
from eqscope.degeneracy import P_curve, StrictnessInstance, degeneracy_threshold, envelope_check, \
    midpoint_convex, solve_P
from eqscope.diameter import diameter, diameter_values_are_monotone
from eqscope.experiments import EntryGameParams, chi_square_delta, chi_square_quantile, entry_delta, \
    generate_entry_observations
from eqscope.game import CorrelatedEquilibrium, Game, Metric, Observation, ObservationModel, ObservationSet, \
    enumerate_ce_vertices, expected_payoffs

# ---------------------------------------------------------------------------
# 1. membership vs brute-force grid oracle

GRID = np.round(np.arange(-20, 21) / 10.0, 10)     # 41 values, step 0.1 on [-2, 2]
ORACLE_TOL = 1e-9
BOUNDARY = 1e-3


def _player_grid() -> np.ndarray:
    """All 41**4 player payoff matrices on the grid, flattened row-major."""
    mesh = np.meshgrid(GRID, GRID, GRID, GRID, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _player_rows(e: np.ndarray, player: int, v: float):
    """(A, b) with ``A @ vec(G_p) >= 0`` the deviation conditions and
    ``b @ vec(G_p) = v`` the payoff observation, for one observation."""
    A = []
    if player == 1:
        for i in range(2):
            for i2 in range(2):
                if i != i2:
                    row = np.zeros((2, 2))
                    row[i] += e[i]
                    row[i2] -= e[i]
                    A.append(row.ravel())
    else:
        for j in range(2):
            for j2 in range(2):
                if j != j2:
                    row = np.zeros((2, 2))
                    row[:, j] += e[:, j]
                    row[:, j2] -= e[:, j]
                    A.append(row.ravel())
    return np.array(A), e.ravel(), v


def _oracle(points: np.ndarray, rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feasibility, worst violation and smallest inequality slack on grid points."""
    viol = np.zeros(len(points))
    slack = np.full(len(points), np.inf)
    for A, b, v in rows:
        s = points @ A.T
        viol = np.maximum(viol, np.maximum(-s, 0).max(axis=1))
        slack = np.minimum(slack, np.abs(s).min(axis=1))
        viol = np.maximum(viol, np.abs(points @ b - v))
    return viol <= ORACLE_TOL, viol, slack


def _grid_fixture(seed: int):
    """Grid game with two of its correlated-equilibrium vertices observed exactly."""
    rng = np.random.default_rng(seed)
    g = Game(rng.integers(-20, 21, (2, 2)) / 10.0, rng.integers(-20, 21, (2, 2)) / 10.0)
    verts = enumerate_ce_vertices(g)
    picks = rng.choice(len(verts), size=min(2, len(verts)), replace=False)
    obs = [Observation(verts[k], payoff_info=expected_payoffs(g, verts[k])) for k in picks]
    return g, ObservationSet(ObservationModel.PARTIAL_PAYOFF, obs)


def test_criterion_1_membership_matches_grid_oracle(backend, record_criterion):
    t0 = time.perf_counter()
    pts = _player_grid()
    agree = total = 0
    bad = []
    for seed in range(20):
        g, obs = _grid_fixture(seed)
        inst = ConsistencyInstance(obs, Metric.D2, 0.0)
        rng = np.random.default_rng(1000 + seed)
        feas, viol, slack = {}, {}, {}
        for p in (1, 2):
            rows = [_player_rows(o.equilibrium.probs, p, o.payoff_info[p - 1]) for o in obs]
            feas[p], viol[p], slack[p] = _oracle(pts, rows)
        # sample: both sides feasible, one side feasible, uniform, and one-step neighbours
        cand = []
        idx_f = {p: np.flatnonzero(feas[p]) for p in (1, 2)}
        true_idx = {p: int(np.flatnonzero((pts == g.payoff(p).ravel()).all(axis=1))[0]) for p in (1, 2)}
        for _ in range(40):
            cand.append((rng.choice(idx_f[1]), rng.choice(idx_f[2])))
            cand.append((rng.choice(idx_f[1]), rng.integers(len(pts))))
            cand.append((rng.integers(len(pts)), rng.integers(len(pts))))
            cand.append((_neighbour(true_idx[1], rng), _neighbour(true_idx[2], rng)))
        for a, b in cand:
            want = bool(feas[1][a] and feas[2][b])
            game = Game(pts[a].reshape(2, 2), pts[b].reshape(2, 2))
            got = membership(game, inst, backend)
            total += 1
            if got == want:
                agree += 1
                continue
            # distance to the boundary: worst violation if the oracle rejects,
            # smallest inequality slack if it accepts
            d = max(viol[1][a], viol[2][b]) if not want else min(slack[1][a], slack[2][b])
            bad.append(d)
    rate = agree / total
    elapsed = time.perf_counter() - t0
    ok = rate >= 0.99 and all(d <= BOUNDARY for d in bad) and elapsed < 300
    record_criterion(1, ok, f"agreement {rate:.4f} on {total} grid games, mismatches {len(bad)}, {elapsed:.1f}s")
    assert ok


def _neighbour(idx: int, rng) -> int:
    """Index of a grid matrix one step away in one coordinate."""
    digits = list(np.unravel_index(idx, (41,) * 4))
    c = rng.integers(4)
    digits[c] = int(np.clip(digits[c] + rng.choice([-1, 1]), 0, 40))
    return int(np.ravel_multi_index(digits, (41,) * 4))


# ---------------------------------------------------------------------------
# 2. recovery bounds on Monte Carlo fixtures

def _bound_suite(metric, backend):
    worst, viol = 0.0, 0
    for seed in range(100):
        fx = recovery_fixture(seed, metric, delta=0.1)
        rec = min_perturbation(ConsistencyInstance(fx.obs, metric), backend)
        assert rec.status is Status.OPTIMAL
        assert rec.delta_star <= fx.delta + 1e-6
        E = select_independent_subset(fx.obs)
        chk = verify_recovery_bound(fx.game, rec.game, E, fx.delta, metric, tol=1e-6)
        worst = max(worst, max(chk.lhs) / chk.rhs)
        viol += not chk.ok
    return viol, worst


def test_criterion_2_recovery_bounds(backend, record_criterion):
    t0 = time.perf_counter()
    v2, w2 = _bound_suite(Metric.D2, backend)
    vi, wi = _bound_suite(Metric.DINF, backend)
    elapsed = time.perf_counter() - t0
    ok = v2 == 0 and vi == 0 and elapsed < 120
    record_criterion(2, ok, f"d2 violations {v2}/100 (max lhs/rhs {w2:.3f}), "
                            f"dinf violations {vi}/100 (max lhs/rhs {wi:.3f}), {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. tightness construction

def test_criterion_3_example2_tightness(backend, record_criterion):
    delta = 0.1
    details, ok = [], True
    for eps in (0.1, 0.05, 0.02):
        ex = example2_instance(eps, delta)
        dG, dH = example2_dinf(ex)
        closed = abs(dG - delta / (0.5 + 2 * eps / 3)) <= 1e-9 and abs(dH - 2 * delta / (3 - 4 * eps)) <= 1e-9
        feas = (membership(ex.G, ConsistencyInstance(ex.obs, Metric.DINF, dG), backend)
                and membership(ex.Ghat, ConsistencyInstance(ex.obs, Metric.DINF, dH), backend))
        rep = diameter(ex.obs, delta, Metric.DINF, backend, jobs=1)
        big = rep.value >= delta * (1 / eps - 2) - 1e-6
        ok &= closed and feas and big
        details.append(f"eps={eps}: diam {rep.value:.4f} >= {delta * (1 / eps - 2):.4f}")
    record_criterion(3, ok, "; ".join(details))
    assert ok


# ---------------------------------------------------------------------------
# 4. diameter against sampled consistent pairs

def _consistent_samples(obs, delta, metric, backend, rng, n_extreme=24, n_pairs=10_000):
    """Consistent games from random linear objectives, then random convex mixtures."""
    ext = []
    for _ in range(n_extreme):
        prog = ConicProgram("sample")
        built = build_consistency_program(ConsistencyInstance(obs, metric, delta), program=prog)
        w = rng.normal(size=8)
        coords = list(built.G.p1.ravel()) + list(built.G.p2.ravel())
        prog.maximize(sum((wi * c for wi, c in zip(w, coords)), 0.0))
        sol = solve(prog, backend)
        assert sol.status is Status.OPTIMAL
        g = built.G.evaluate(sol)
        ext.append(np.concatenate([g.payoff1.ravel(), g.payoff2.ravel()]))
    ext = np.array(ext)
    W1 = rng.dirichlet(np.full(len(ext), 0.3), size=n_pairs)
    W2 = rng.dirichlet(np.full(len(ext), 0.3), size=n_pairs)
    A, B = W1 @ ext, W2 @ ext
    # add pure extreme-point pairs too
    i, j = np.triu_indices(len(ext), 1)
    gaps = np.concatenate([np.abs(A - B).max(axis=1), np.abs(ext[i] - ext[j]).max(axis=1)])
    return float(gaps.max()), n_pairs + len(i)


def test_criterion_4_diameter_upper_envelope(backend, record_criterion):
    rng = np.random.default_rng(4)
    ok, worst, mono = True, -math.inf, True
    for f in range(10):
        metric = Metric.D2 if f % 2 == 0 else Metric.DINF
        fx = recovery_fixture(100 + f, metric, delta=0.0)
        rep = diameter(fx.obs, 0.5, metric, backend)
        sampled, n = _consistent_samples(fx.obs, 0.5, metric, backend, rng)
        worst = max(worst, sampled - rep.value)
        ok &= sampled <= rep.value + 1e-4
        vals = [diameter(fx.obs, d, metric, backend).value for d in (0.0, 0.1, 0.5, 1.0)]
        mono &= diameter_values_are_monotone(vals)
    ok &= mono
    record_criterion(4, ok, f"max(sampled - diameter) = {worst:.2e} over >= 1e4 pairs per fixture; "
                            f"monotone over delta: {mono}")
    assert ok


# ---------------------------------------------------------------------------
# 5. degeneracy threshold and envelope

def test_criterion_5_degeneracy(backend, record_criterion):
    obs = ObservationSet(ObservationModel.NONE, [Observation(CorrelatedEquilibrium.point_mass(2, 2, 0, 0))])
    eps_star = degeneracy_threshold(obs, backend)
    inst = StrictnessInstance(obs)
    below = solve_P(inst.with_epsilon(0.999 * eps_star), backend).value
    above = solve_P(inst.with_epsilon(1.01 * eps_star), backend).value
    eps0 = 1.5 * eps_star
    grid = [eps0 * (1 + 0.25 * k) for k in range(5)]
    env = envelope_check(obs, eps0, grid, backend, tol=1e-6)
    convex = midpoint_convex(P_curve(obs, grid, backend), tol=1e-6)
    ok = abs(eps_star - 1) <= 1e-6 and below <= 1e-8 and above > 0 and env.ok and convex
    record_criterion(5, ok, f"eps*={eps_star:.8f}, P(0.999eps*)={below:.1e}, P(1.01eps*)={above:.2e}, "
                            f"envelope {env.ok}, convex {convex}")
    assert ok


# ---------------------------------------------------------------------------
# 6. Cournot diameter decay and timing

COURNOT = dict(n=10, alpha=0.05, a_hat=0.01, sigma_game=0.01, sigma_obs=0.001)
BANDS = {1: (1.6e-3, 6.6e-3), 10: (1.6e-4, 6.6e-4), 100: (3.3e-5, 1.3e-4)}


def _cournot_delta(n: int, l: int) -> float:
    # one noisy linear coefficient per player and observation
    return chi_square_delta(n * l, 0.99, COURNOT["sigma_obs"])


def test_criterion_6_cournot_decay(backend, record_criterion):
    games = simulate_cournot(l=100, n_g=10, seed=0, **COURNOT)
    means = {}
    for l in (1, 10, 100):
        vals = [cournot_diameter(g.subset(l), _cournot_delta(10, l), 1, Metric.D2, COURNOT["alpha"],
                                 backend=backend).value for g in games]
        means[l] = float(np.mean(vals))
    in_band = all(BANDS[l][0] <= means[l] <= BANDS[l][1] for l in BANDS)
    decreasing = means[1] > means[10] > means[100]

    big = simulate_cournot(n=50, alpha=0.05, a_hat=0.01, sigma_game=0.01, sigma_obs=0.001, l=50, n_g=1, seed=1)[0]
    t0 = time.perf_counter()
    rec = cournot_min_perturbation(big.observations, 1, Metric.D2, 0.05, backend=backend)
    t_rec = time.perf_counter() - t0

    g = games[0]
    times = {}
    for l in (50, 100):
        runs = []
        for _ in range(3):
            t0 = time.perf_counter()
            cournot_diameter(g.subset(l), _cournot_delta(10, l), 1, Metric.D2, COURNOT["alpha"],
                             backend=backend, jobs=1)
            runs.append(time.perf_counter() - t0)
        times[l] = min(runs)
    ratio = times[100] / times[50]
    ok = (in_band and decreasing and rec.status is Status.OPTIMAL and t_rec < 60 and 1.2 <= ratio <= 3)
    record_criterion(6, ok, f"means l=1 {means[1]:.2e}, l=10 {means[10]:.2e}, l=100 {means[100]:.2e} "
                            f"(bands {in_band}, decreasing {decreasing}); n=50 recovery {t_rec:.1f}s; "
                            f"timing ratio {ratio:.2f}")
    assert ok


# ---------------------------------------------------------------------------
# 7. convexity certificates

def test_criterion_7_sos_convexity(backend, record_criterion):
    failures, runs = 0, 0
    for d in (1, 2, 3, 4):
        for seed in range(50):
            inst = simulate_cournot(l=5, n_g=1, seed=seed, **COURNOT)[0]
            rec = cournot_min_perturbation(inst.observations, d, Metric.D2, COURNOT["alpha"], backend=backend)
            hi = 2 * max(float(o.quantities.max()) for o in inst.observations)
            runs += 1
            models = [rec.model, *rec.perturbed] if rec.status is Status.OPTIMAL else []
            if not models or not all(m.is_convex_on(0.0, hi, tol=1e-6) for m in models):
                failures += 1
    prog = ConicProgram("concave")
    a = prog.vector("a", 2)
    prog.add_eq(a[1], -0.5)       # c'' = 2 * a(2) = -1
    build_sos_convexity(prog, a, 2)
    infeasible = solve(prog, backend).status is Status.INFEASIBLE
    ok = failures == 0 and infeasible
    record_criterion(7, ok, f"{runs - failures}/{runs} recoveries convex on the grid; "
                            f"c''=-1 reported infeasible: {infeasible}")
    assert ok


# ---------------------------------------------------------------------------
# 8. chi-square calibration

def _series_cdf(a: mpmath.mpf, x: mpmath.mpf) -> mpmath.mpf:
    """Regularised lower incomplete gamma by its power series."""
    term = mpmath.mpf(1) / a
    total = term
    n = 1
    while True:
        term *= x / (a + n)
        total += term
        if term < total * mpmath.mpf(10) ** (-40):
            break
        n += 1
    return total * mpmath.exp(a * mpmath.log(x) - x - mpmath.loggamma(a))


def _series_quantile(dof: int, level: float) -> float:
    with mpmath.workdps(50):
        a = mpmath.mpf(dof) / 2
        lo, hi = mpmath.mpf(dof) / 2, mpmath.mpf(dof) * 2
        for _ in range(120):
            mid = (lo + hi) / 2
            if _series_cdf(a, mid / 2) < level:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)


def test_criterion_8_chi_square(record_criterion):
    q2 = chi_square_quantile(2, 0.99)
    exact2 = -2 * math.log(0.01)
    q2000 = chi_square_delta(2000, 0.99, 1.0)
    oracle = _series_quantile(2000, 0.99)
    rel = abs(q2000 - oracle) / oracle
    ok = abs(q2 - exact2) <= 1e-6 and rel <= 1e-4
    record_criterion(8, ok, f"dof=2 error {abs(q2 - exact2):.1e}; dof=2000 {q2000:.4f} vs series {oracle:.4f} "
                            f"(rel {rel:.1e})")
    assert ok


# ---------------------------------------------------------------------------
# 9. property tests

def test_criterion_9_property_thresholds(backend, record_criterion):
    rng = np.random.default_rng(9)
    A = rng.normal(size=(2, 2))
    g = Game(A, -A)
    obs = ObservationSet(ObservationModel.PARTIAL_PAYOFF,
                         [Observation(e, payoff_info=expected_payoffs(g, e)) for e in enumerate_ce_vertices(g)])
    inst = ConsistencyInstance(obs, Metric.D2)
    eps = property_threshold(inst, 1e-3, backend)
    zs = min_perturbation(inst.with_property(PropertySpec.zero_sum()), backend)

    thresholds = []
    for seed in (0, 1):
        data = generate_entry_observations(EntryGameParams(l=50, seed=seed))
        budget = entry_delta(50, 0.5)
        thresholds.append(property_threshold(ConsistencyInstance(data.obs, Metric.D2), budget, backend))
    ok = eps <= 1e-3 and zs.status is Status.OPTIMAL and zs.delta_star <= 1e-6 and min(thresholds) > 0
    record_criterion(9, ok, f"zero-sum threshold {eps:.1e}, zero-sum delta* {zs.delta_star:.1e}, "
                            f"entry thresholds {', '.join(f'{t:.2f}' for t in thresholds)}")
    assert ok
