import numpy as np
import numpy.testing as npt
import pytest

import green
from errors import CapacityError, ConditionFailure, InvalidInputError, PreconditionError
from geometry import minimum_image, pair_distance, reduce
from green import green_pairs
from hamiltonian import FunctionField, VortexSystem, grad_norm, kirchhoff_routh, log_k, psi_zero
from schemas import FlowOptions, SearchOptions
from search import (Termination, barrier_configurations, cluster_radius, collision_bound_check, colliding_cluster,
                    gradient_flow, linking_family, linking_minimax, multistart, newton_refine, pair_extremum,
                    winding_degree)


# =============================================================================
# Gradient flow and collisions
# =============================================================================

@pytest.fixture(scope="module")
def collapsing_pair(torus):
    sys = VortexSystem(torus, [[0.5, 0.5], [0.8, 0.7]], [1.0, 1.0], kirchhoff_routh())
    return sys, gradient_flow(sys, opts=FlowOptions(collision_dist=1e-9, max_steps=2000))


def test_ascent_flow_reaches_collision(collapsing_pair):
    _, trace = collapsing_pair
    assert trace.termination == Termination.COLLISION
    assert np.all(np.diff(trace.h_values) > 0)
    assert trace.h_values[-1] - trace.h_values[0] > 5.0
    assert trace.min_pair_dist[-1] < 1e-9
    summary = trace.summary()
    assert summary.termination == "CollisionApproach"
    assert summary.steps == len(trace.times) - 1


def test_collision_gradient_grows_like_inverse_radius(collapsing_pair):
    sys, trace = collapsing_pair
    report = collision_bound_check(sys, trace)
    assert report.cluster == [1, 2]
    assert report.condition_holds
    assert report.bound_satisfied
    assert report.slope == pytest.approx(-1.0, abs=0.05)
    assert report.flags == []


def test_collision_check_needs_a_collision(torus):
    sys = VortexSystem(torus, [[0.0, 0.0], [0.5, 0.5]], [1.0, -1.0])
    trace = gradient_flow(sys, opts=FlowOptions(max_steps=5))
    assert trace.termination == Termination.CONVERGED
    with pytest.raises(PreconditionError):
        collision_bound_check(sys, trace)


def test_descent_flow_decreases_energy(sphere):
    sys = VortexSystem(sphere, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [1.0, 1.0, 1.0], psi_zero())
    trace = gradient_flow(sys, opts=FlowOptions(max_steps=50), sign=-1.0)
    assert np.all(np.diff(trace.h_values) < 0)


def test_flow_rejects_wrong_start(torus):
    sys = VortexSystem(torus, [[0.0, 0.0], [0.5, 0.5]], [1.0, -1.0])
    with pytest.raises(InvalidInputError):
        gradient_flow(sys, p0=[[0.1, 0.1]])
    with pytest.raises(InvalidInputError):
        gradient_flow(sys, p0=[[0.1, 0.1], [0.1, 0.1]])


def test_colliding_cluster_and_radius(torus):
    config = np.array([[0.1, 0.1], [0.1 + 1e-6, 0.1], [0.6, 0.6]])
    assert colliding_cluster(torus, config) == [0, 1]
    assert cluster_radius(torus, config, [0, 1]) == pytest.approx(1e-6 / np.sqrt(2), rel=1e-6)
    wrapped = np.array([[0.0, 0.5], [0.999, 0.5]])
    assert cluster_radius(torus, wrapped, [0, 1]) == pytest.approx(1e-3 / np.sqrt(2), rel=1e-6)


# =============================================================================
# Newton refinement and pair extrema
# =============================================================================

def test_newton_refines_dipole(torus):
    sys = VortexSystem(torus, [[0.0, 0.0], [0.501, 0.4995]], [1.0, -1.0], kirchhoff_routh())
    report = newton_refine(sys)
    assert report.status == "Converged"
    assert report.grad_norm < 1e-9
    assert report.morse_index == 2
    p = np.asarray(report.point)
    npt.assert_allclose(np.abs(minimum_image(torus, p[1] - p[0])), [0.5, 0.5], atol=1e-8)


def test_newton_needs_a_good_start(torus):
    sys = VortexSystem(torus, [[0.1, 0.1], [0.3, 0.2]], [1.0, -1.0])
    with pytest.raises(PreconditionError):
        newton_refine(sys)


def test_pair_extremum_torus(torus):
    report = pair_extremum(VortexSystem(torus, [[0.2, 0.3], [0.4, 0.4]], [1.0, -1.0]))
    p = np.asarray(report.point)
    assert pair_distance(torus, p[0], p[1]) == pytest.approx(np.sqrt(0.5), abs=1e-8)
    assert report.status == "Converged"


def test_pair_extremum_sphere(sphere):
    report = pair_extremum(VortexSystem(sphere, [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], [1.0, 1.0], psi_zero()))
    p = np.asarray(report.point)
    assert pair_distance(sphere, p[0], p[1]) == pytest.approx(np.pi, abs=1e-8)
    assert report.h_value == pytest.approx(-1.0 / (2.0 * np.pi))


def test_pair_extremum_needs_two_vortices(torus, wavy_torus):
    with pytest.raises(InvalidInputError):
        pair_extremum(VortexSystem(torus, [[0.0, 0.0], [0.5, 0.5], [0.2, 0.7]], [1.0, -1.0, 1.0]))
    with pytest.raises(InvalidInputError):
        pair_extremum(VortexSystem(wavy_torus, [[0.0, 0.0], [0.5, 0.5]], [1.0, -1.0]))


def test_multistart_finds_antipodal_pair(sphere):
    sys = VortexSystem(sphere, [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], [1.0, 1.0], psi_zero())
    found = multistart(sys, n_starts=3, seed=5, threads=2)
    assert len(found) == 1
    assert found[0].h_value == pytest.approx(-1.0 / (2.0 * np.pi))
    p = np.asarray(found[0].point)
    assert pair_distance(sphere, p[0], p[1]) == pytest.approx(np.pi, abs=1e-6)


# =============================================================================
# Linking family and minimax
# =============================================================================

def test_linking_family_has_degree_one(torus):
    P = linking_family(torus, 4, [0.25, 0.75])
    assert P.shape == (16, 2, 2)
    npt.assert_allclose(P[5], [[0.25, 0.25], [0.25, 0.75]])
    assert winding_degree(torus, P, 4) == 1
    assert winding_degree(torus, P[:, ::-1], 4) == -1


def test_barrier_configurations(torus):
    B = barrier_configurations(torus, 3, 10, seed=0)
    assert B.shape == (10, 3, 2)
    npt.assert_allclose(B[:, :, 0], np.broadcast_to([1 / 6, 0.5, 5 / 6], (10, 3)))


@pytest.fixture(scope="module")
def dipole_minimax(torus):
    opts = SearchOptions(grid=8, latitudes=[0.25, 0.75], sweeps=3, steps_per_sweep=5, barrier_samples=64)
    seen = []
    result = linking_minimax(torus, [1.0, -1.0], kirchhoff_routh(), opts, threads=2, on_sweep=seen.append)
    return result, seen


def test_minimax_two_vortices(torus, dipole_minimax):
    result, seen = dipole_minimax
    g, _ = green_pairs(torus, np.array([0.0, 0.25]), np.array([0.0, 0.75]))
    # the members with s_1 = s_2 sit at a saddle and keep the family minimum fixed
    assert result.c_star_lower == pytest.approx(-2.0 * float(g), abs=1e-10)
    assert result.termination == "Converged"
    assert result.witness.grad_norm < 1e-8
    assert all(d == 1 for d in result.degree_history)
    assert np.all(np.diff(result.c_star_history) >= 0)
    assert result.c_star_lower <= result.barrier_max
    assert len(seen) == result.sweeps
    assert seen[-1]["c_star_lower"] == result.c_star_lower


def test_minimax_witness_survives_tighter_truncation(torus, dipole_minimax, monkeypatch):
    result, _ = dipole_minimax
    monkeypatch.setattr(green, "EWALD_CUTOFF", 80.0)
    sys = VortexSystem(torus, result.witness.point, [1.0, -1.0], kirchhoff_routh())
    assert grad_norm(sys) < 1e-8


def test_minimax_witness_is_stable_under_small_potentials(torus, dipole_minimax):
    result, _ = dipole_minimax
    w = np.asarray(result.witness.point)
    start = reduce(torus, w - w[0] + np.array([0.0, 0.25]))
    npt.assert_allclose(minimum_image(torus, start[1] - [0.0, 0.75]), 0.0, atol=1e-6)

    # log K = a cos(2 pi x) cos(2 pi y) has C^1 norm below 1e-3
    a = 1e-4

    def value(x):
        return np.exp(a * np.cos(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1]))

    def gradient(x):
        cx, cy = np.cos(2 * np.pi * x[..., 0]), np.cos(2 * np.pi * x[..., 1])
        sx, sy = np.sin(2 * np.pi * x[..., 0]), np.sin(2 * np.pi * x[..., 1])
        return (-2 * np.pi * a * value(x))[..., None] * np.stack([sx * cy, cx * sy], axis=-1)

    sys = VortexSystem(torus, start, [1.0, -1.0], log_k(FunctionField(value, gradient)))
    report = newton_refine(sys)
    assert report.status == "Converged"
    moved = np.linalg.norm(minimum_image(torus, np.asarray(report.point) - start), axis=1)
    assert np.max(moved) < 0.05
    assert np.max(moved) > 0.0


def test_minimax_refuses_resonant_strengths(torus):
    with pytest.raises(ConditionFailure) as info:
        linking_minimax(torus, [-2.0, 1.0, -2.0], kirchhoff_routh(), SearchOptions(grid=4))
    assert info.value.subset == (1, 2, 3)


def test_minimax_input_errors(torus, sphere):
    with pytest.raises(InvalidInputError):
        linking_minimax(sphere, [1.0, -1.0], kirchhoff_routh())
    with pytest.raises(CapacityError):
        linking_minimax(torus, [1.0, 2.0, 4.0, 8.0, 16.0], kirchhoff_routh())
    with pytest.raises(InvalidInputError):
        linking_minimax(torus, [1.0, -1.0], kirchhoff_routh(), SearchOptions(grid=4, latitudes=[0.75, 0.25]))


@pytest.mark.slow
def test_minimax_three_vortices(torus):
    result = linking_minimax(torus, [1.0, 1.0, -1.0], kirchhoff_routh(), SearchOptions(grid=24), threads=4)
    assert result.grid == 24
    assert result.termination == "Converged"
    assert result.witness.grad_norm < 1e-8
    assert np.all(np.diff(result.c_star_history) >= 0)
    assert all(d == 1 for d in result.degree_history)
    # members well above the family minimum are held back instead of flowing into collisions
    assert result.collided < result.grid ** 3 // 2
