import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from eqscope.game import (CapacityError, CorrelatedEquilibrium, Game, Metric, ModelError, Observation,
                          ObservationModel, ObservationSet, ShapeError, ce_constraint_matrix, deviation_gains,
                          enumerate_ce_vertices, expected_payoffs, is_correlated_equilibrium, metric_distance,
                          nash_equilibria_2x2, pure_nash_profiles)

PENNIES = Game([[1, -1], [-1, 1]], [[-1, 1], [1, -1]])
COORD = Game([[1, 0], [0, 1]], [[1, 0], [0, 1]])


def test_constant_game_every_distribution_is_equilibrium(rng):
    g = Game.constant(3, 2, 4.0)
    for _ in range(5):
        e = CorrelatedEquilibrium(rng.dirichlet(np.ones(6)).reshape(3, 2))
        assert is_correlated_equilibrium(g, e)


def test_matching_pennies_uniform():
    assert is_correlated_equilibrium(PENNIES, CorrelatedEquilibrium.uniform(2, 2))


def test_profitable_row_deviation():
    g = Game([[0, 0], [5, 5]], np.zeros((2, 2)))
    assert not is_correlated_equilibrium(g, CorrelatedEquilibrium.point_mass(2, 2, 0, 0))
    gains1, _ = deviation_gains(g, CorrelatedEquilibrium.point_mass(2, 2, 0, 0))
    assert gains1.max() == pytest.approx(5.0)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        is_correlated_equilibrium(PENNIES, CorrelatedEquilibrium.uniform(3, 2))
    with pytest.raises(ShapeError):
        Game(np.zeros((2, 2)), np.zeros((2, 3)))


def test_probability_tolerances():
    e = CorrelatedEquilibrium([[0.5 + 5e-10, -1e-13], [0.25, 0.25]])
    assert e.probs.min() == 0.0 and e.probs.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        CorrelatedEquilibrium([[0.6, -1e-6], [0.2, 0.2]])
    with pytest.raises(ValueError):
        CorrelatedEquilibrium([[0.5, 0.5], [0.5, 0.5]])


def test_metric_distance_examples():
    g = Game.constant(2, 2, 0.0)
    ones = Game.constant(2, 2, 1.0)
    assert metric_distance(Metric.D2, g, [g, g]) == 0.0
    assert metric_distance(Metric.DINF, g, [g]) == 0.0
    assert metric_distance(Metric.D2, g, [ones]) == pytest.approx(8.0)
    assert metric_distance(Metric.DINF, g, [ones]) == pytest.approx(1.0)


def test_metric_distance_subtracts_shifters():
    g = Game.constant(2, 2, 0.0)
    ones = Game.constant(2, 2, 1.0)
    assert metric_distance(Metric.D2, g, [ones], shifters=[ones]) == 0.0


def test_vertices_of_constant_game_include_point_masses():
    verts = enumerate_ce_vertices(Game.constant(2, 2))
    assert len(verts) == 4
    for i in range(2):
        for j in range(2):
            assert any(np.allclose(v.probs, CorrelatedEquilibrium.point_mass(2, 2, i, j).probs) for v in verts)


def test_matching_pennies_single_vertex():
    verts = enumerate_ce_vertices(PENNIES)
    assert len(verts) == 1
    assert np.allclose(verts[0].probs, 0.25)


def test_coordination_vertices():
    verts = enumerate_ce_vertices(COORD)
    for cell in ((0, 0), (1, 1)):
        assert any(np.allclose(v.probs, CorrelatedEquilibrium.point_mass(2, 2, *cell).probs) for v in verts)
    for v in verts:
        assert is_correlated_equilibrium(COORD, v, 1e-8)


def test_vertex_enumeration_cap():
    with pytest.raises(CapacityError):
        enumerate_ce_vertices(Game.constant(5, 4))


def test_nash_lists():
    assert sorted(pure_nash_profiles(COORD)) == [(0, 0), (1, 1)]
    eqs = nash_equilibria_2x2(COORD)
    assert len(eqs) == 3
    mixed = [e for e in eqs if e.probs.min() > 0]
    assert np.allclose(mixed[0].probs, 0.25)
    assert len(nash_equilibria_2x2(PENNIES)) == 1


def test_expected_payoffs_and_constraint_matrix():
    e = CorrelatedEquilibrium.uniform(2, 2)
    assert expected_payoffs(PENNIES, e) == pytest.approx((0.0, 0.0))
    A = ce_constraint_matrix(COORD)
    assert A.shape[1] == 4


def test_observation_set_invariants():
    e = CorrelatedEquilibrium.uniform(2, 2)
    with pytest.raises(ModelError):
        ObservationSet(ObservationModel.PARTIAL_PAYOFF, [Observation(e)])
    with pytest.raises(ModelError):
        ObservationSet(ObservationModel.SHIFTER, [Observation(e)])
    with pytest.raises(ShapeError):
        ObservationSet(ObservationModel.NONE, [Observation(e), Observation(CorrelatedEquilibrium.uniform(3, 2))])


def test_json_round_trip():
    e = CorrelatedEquilibrium.uniform(2, 2)
    obs = ObservationSet(ObservationModel.SHIFTER, [Observation(e, shifter=PENNIES)])
    back = ObservationSet.loads(obs.dumps())
    assert back.model is ObservationModel.SHIFTER
    assert back[0].shifter == PENNIES and back[0].equilibrium == e
    assert Game.from_dict(PENNIES.to_dict()) == PENNIES
    with pytest.raises(ShapeError):
        Game.from_dict({"m1": 3, "m2": 2, "payoff1": [[0, 0], [0, 0]], "payoff2": [[0, 0], [0, 0]]})


small = arrays(np.float64, (2, 2), elements=st.floats(-5, 5))


@settings(max_examples=60, deadline=None)
@given(small, small, st.floats(-10, 10))
def test_ce_invariant_under_constant_shift(p1, p2, c):
    g = Game(p1, p2)
    for e in enumerate_ce_vertices(g):
        assert is_correlated_equilibrium(g, e, 1e-8)
        shifted = Game(p1 + c, p2)
        assert is_correlated_equilibrium(shifted, e, 1e-7)


@settings(max_examples=60, deadline=None)
@given(small, st.integers(0, 1), st.integers(0, 1),
       st.one_of(st.just(0.0), st.floats(1e-3, 3), st.floats(-3, -1e-3)))
def test_single_entry_d2_dominates_dinf_squared(p1, i, j, delta):
    g = Game(p1, p1)
    q = p1.copy()
    q[i, j] += delta
    pert = Game(q, p1)
    d2 = metric_distance(Metric.D2, g, [pert])
    dinf = metric_distance(Metric.DINF, g, [pert])
    assert d2 >= dinf ** 2 - 1e-12
    assert d2 >= 0 and (d2 == 0) == (delta == 0)
