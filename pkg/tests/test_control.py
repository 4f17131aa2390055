import math

import numpy as np
import pytest

from prefixlqg.control import (PlantModel, dare_residual, filter_prior_sequence, is_stabilizable,
                               solve_control_dare, spectral_radius)
from prefixlqg.errors import NonStabilizable

from conftest import ref1_plant


def test_scalar_dare_matches_quadratic_root():
    cs = solve_control_dare(ref1_plant())
    assert cs.S[0, 0] == pytest.approx(2 + math.sqrt(5), abs=1e-9)
    assert cs.K[0, 0] == pytest.approx(-(1 + math.sqrt(5)) / 2, abs=1e-9)
    assert cs.Theta[0, 0] == pytest.approx(13.7082039, abs=1e-7)
    assert cs.minCost == pytest.approx(2 + math.sqrt(5), abs=1e-9)


def test_zero_dynamics_gives_trivial_solution():
    cs = solve_control_dare(PlantModel.scalar(0.0, 3.0, 1.0, 1.0, 1.0, 10.0))
    assert cs.S[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert cs.K[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_random_two_state_residual(rng):
    for _ in range(10):
        A = rng.normal(size=(2, 2))
        A *= 0.9 / spectral_radius(A)
        plant = PlantModel(A=A, B=np.eye(2), W=np.eye(2), X0=np.eye(2), Q=np.eye(2),
                           Rcost=np.eye(2), gamma=100.0)
        cs = solve_control_dare(plant)
        assert dare_residual(plant, cs.S) <= 1e-9 * (1 + np.linalg.norm(cs.S))
        assert spectral_radius(A + cs.K) < 1
        assert np.allclose(cs.Theta, cs.Theta.T)
        assert np.min(np.linalg.eigvalsh(cs.Theta)) >= -1e-12


def test_unstable_uncontrollable_mode_is_rejected():
    A = np.diag([2.0, 0.5])
    B = np.array([[0.0], [1.0]])
    assert not is_stabilizable(A, B)
    plant = PlantModel(A=A, B=B, W=np.eye(2), X0=np.eye(2), Q=np.eye(2), Rcost=[[1.0]], gamma=10.0)
    with pytest.raises(NonStabilizable):
        solve_control_dare(plant)


def test_plant_validation():
    with pytest.raises(ValueError):
        PlantModel.scalar(2.0, 1.0, 0.0, 1.0, 1.0, 5.0)      # W must be positive definite
    with pytest.raises(ValueError):
        PlantModel(A=[[1, 2]], B=[[1]], W=[[1]], X0=[[1]], Q=[[1]], Rcost=[[1]], gamma=1.0)
    with pytest.raises(ValueError):
        PlantModel(A=np.eye(2), B=np.eye(2), W=[[1, 0.5], [0.4, 1]], X0=np.eye(2), Q=np.eye(2),
                   Rcost=np.eye(2), gamma=1.0)


def test_prior_sequence_converges_to_fixed_point(ref1):
    plant, sol = ref1
    seq = filter_prior_sequence(plant, sol.gains, 50)
    assert len(seq) == 51
    assert seq[0][0, 0] == 1.0
    assert seq[50][0, 0] == pytest.approx(1.4, abs=1e-7)
    assert abs(seq[50][0, 0] - sol.PhatPlus[0, 0]) <= 1e-9


def test_prior_sequence_fixed_point_is_constant(ref1):
    plant, sol = ref1
    start = PlantModel(plant.A, plant.B, plant.W, sol.PhatPlus, plant.Q, plant.Rcost, plant.gamma)
    for P in filter_prior_sequence(start, sol.gains, 20):
        assert abs(P[0, 0] - sol.PhatPlus[0, 0]) <= 1e-12


def test_prior_sequence_from_zero(ref1):
    plant, sol = ref1
    start = PlantModel(plant.A, plant.B, plant.W, [[0.0]], plant.Q, plant.Rcost, plant.gamma)
    seq = filter_prior_sequence(start, sol.gains, 3)
    assert seq[0][0, 0] == 0.0
    assert seq[1][0, 0] == pytest.approx(1.0, abs=1e-15)


def test_prior_sequence_monotone_and_fixed_gain_agrees(ref1):
    plant, sol = ref1
    seq = [P[0, 0] for P in filter_prior_sequence(plant, sol.gains, 40)]
    diffs = np.diff(seq)
    assert np.all(diffs >= -1e-15)
    fixed = filter_prior_sequence(plant, sol.gains, 200, gain="fixed")
    assert abs(fixed[-1][0, 0] - 1.4) <= 1e-7
    with pytest.raises(ValueError):
        filter_prior_sequence(plant, sol.gains, 2, gain="bogus")


def test_dare_matches_scipy(rng):
    from scipy.linalg import solve_discrete_are

    for _ in range(5):
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 2))
        G = rng.normal(size=(3, 3))
        Q = G @ G.T + np.eye(3)
        R = np.diag(rng.uniform(0.5, 2.0, size=2))
        plant = PlantModel(A=A, B=B, W=np.eye(3), X0=np.eye(3), Q=Q, Rcost=R, gamma=1e6)
        S = solve_control_dare(plant).S
        ref = solve_discrete_are(A, B, Q, R)
        assert np.max(np.abs(S - ref)) <= 1e-7 * np.max(np.abs(ref))
