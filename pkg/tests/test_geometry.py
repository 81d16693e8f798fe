import numpy as np
import numpy.testing as npt
import pytest

from errors import InvalidInputError
from geometry import (PeriodicField, as_point, conformal_torus, distance, flat_torus, min_pair_distance,
                      minimum_image, pair_distance, random_configuration, random_point, random_points,
                      random_rotation, reduce, retract, retract_many, round_sphere, tangent_basis)
from utils import loglog_fit


# =============================================================================
# Surfaces
# =============================================================================

def test_volumes():
    assert flat_torus([[2.0, 0.0], [0.5, 3.0]]).volume == pytest.approx(6.0)
    assert round_sphere(2.0).volume == pytest.approx(16 * np.pi)
    assert conformal_torus(np.full((8, 8), 0.25)).volume == pytest.approx(np.exp(0.5))


def test_degenerate_lattice_rejected():
    with pytest.raises(InvalidInputError):
        flat_torus([[1.0, 2.0], [2.0, 4.0]])


def test_sphere_radius_must_be_positive():
    with pytest.raises(InvalidInputError):
        round_sphere(0.0)


# =============================================================================
# Points and distances
# =============================================================================

def test_reduce_and_minimum_image(torus):
    npt.assert_allclose(reduce(torus, [1.25, -0.5]), [0.25, 0.5])
    npt.assert_allclose(minimum_image(torus, [0.9, -0.7]), [-0.1, 0.3], atol=1e-15)


def test_torus_distance_wraps(torus):
    assert pair_distance(torus, np.array([0.05, 0.5]), np.array([0.95, 0.5])) == pytest.approx(0.1)


def test_sphere_distance_scales_with_radius():
    s = round_sphere(2.0)
    assert pair_distance(s, np.array([1.0, 0, 0]), np.array([0, 1.0, 0])) == pytest.approx(np.pi)
    assert pair_distance(s, np.array([0, 0, 1.0]), np.array([0, 0, -1.0])) == pytest.approx(2 * np.pi)


def test_as_point_normalizes_and_rejects_zero(sphere):
    npt.assert_allclose(as_point(sphere, [0.0, 3.0, 4.0]), [0.0, 0.6, 0.8])
    with pytest.raises(InvalidInputError):
        as_point(sphere, [0.0, 0.0, 0.0])
    with pytest.raises(InvalidInputError):
        as_point(sphere, [1.0, 0.0])


def test_min_pair_distance_batched(torus):
    P = np.array([[[0.1, 0.1], [0.2, 0.1], [0.6, 0.6]],
                  [[0.0, 0.0], [0.5, 0.5], [0.0, 0.5]]])
    npt.assert_allclose(min_pair_distance(torus, P), [0.1, 0.5])


def test_random_configuration_is_separated(sphere, rng):
    config = random_configuration(sphere, 5, rng, min_dist=0.2)
    assert min_pair_distance(sphere, config) > 0.2
    npt.assert_allclose(np.linalg.norm(config, axis=1), 1.0)


@pytest.mark.parametrize("kind", ["torus", "sphere"])
def test_distance_is_symmetric(kind, request, rng):
    s = request.getfixturevalue(kind)
    p, q = random_points(s, 2, rng)
    assert distance(s, p, q) == pytest.approx(distance(s, q, p), rel=1e-15)
    assert distance(s, p, p) == 0.0


def test_torus_distance_is_translation_invariant(torus, rng):
    P = random_points(torus, 20, rng)
    Q = random_points(torus, 20, rng)
    t = np.array([0.37, -0.81])
    npt.assert_allclose(pair_distance(torus, reduce(torus, P + t), reduce(torus, Q + t)), pair_distance(torus, P, Q),
                        atol=1e-14)


def test_sphere_distance_is_rotation_invariant(sphere, rng):
    P = random_points(sphere, 20, rng)
    Q = random_points(sphere, 20, rng)
    R = random_rotation(5)
    npt.assert_allclose(pair_distance(sphere, P @ R.T, Q @ R.T), pair_distance(sphere, P, Q), atol=1e-13)


@pytest.mark.parametrize("kind", ["torus", "sphere", "wavy_torus"])
def test_random_point_is_deterministic(kind, request):
    s = request.getfixturevalue(kind)
    npt.assert_array_equal(random_point(s, 7), random_point(s, 7))
    assert not np.array_equal(random_point(s, 7), random_point(s, 8))
    assert random_point(s, 7).shape == (s.dim,)


def test_sphere_samples_are_uniform(sphere, rng):
    x = random_points(sphere, 100_000, rng)
    npt.assert_allclose(np.linalg.norm(x, axis=1), 1.0)
    assert np.linalg.norm(x.mean(axis=0)) < 0.02
    # the z coordinate of a uniform sphere point is uniform on [-1, 1]
    assert np.mean(x[:, 2] ** 2) == pytest.approx(1.0 / 3.0, abs=0.01)


# =============================================================================
# Tangent spaces and retractions
# =============================================================================

def test_tangent_basis_is_oriented_orthonormal(sphere, rng):
    p = as_point(sphere, rng.standard_normal((6, 3)))
    e = tangent_basis(sphere, p)
    npt.assert_allclose(np.einsum("nad,nbd->nab", e, e), np.broadcast_to(np.eye(2), (6, 2, 2)), atol=1e-14)
    npt.assert_allclose(np.einsum("nad,nd->na", e, p), 0.0, atol=1e-14)
    npt.assert_allclose(np.cross(e[:, 0], e[:, 1]), p, atol=1e-14)


def test_retract_stays_on_sphere(sphere):
    p = np.array([0.0, 0.0, 1.0])
    q = retract(sphere, p, np.array([0.3, -0.2, 0.0]))
    assert np.linalg.norm(q) == pytest.approx(1.0)
    npt.assert_allclose(retract(sphere, p, np.zeros(3)), p)


@pytest.mark.parametrize("kind", ["torus", "sphere"])
def test_retract_moves_first_order(kind, request):
    s = request.getfixturevalue(kind)
    p = random_point(s, 3)
    v = tangent_basis(s, p)[0]
    t = np.logspace(-5, -1, 9)
    d = [distance(s, p, retract(s, p, ti * v)) for ti in t]
    slope, _ = loglog_fit(t, d)
    assert slope == pytest.approx(1.0, abs=0.01)
    assert d[0] == pytest.approx(t[0], rel=1e-6)


def test_retract_rejects_normal_vectors(sphere):
    with pytest.raises(InvalidInputError):
        retract(sphere, np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 0.1]))


def test_retract_many_matches_single(torus):
    P = np.array([[0.9, 0.9], [0.1, 0.2]])
    V = np.array([[0.2, 0.3], [-0.2, 0.0]])
    npt.assert_allclose(retract_many(torus, P, V), [[0.1, 0.2], [0.9, 0.2]], atol=1e-15)
    npt.assert_allclose(retract(torus, P[0], V[0]), [0.1, 0.2], atol=1e-15)


# =============================================================================
# Periodic fields
# =============================================================================

def test_periodic_field_interpolates_band_limited_data():
    n = 16
    t = np.arange(n) / n
    values = np.cos(2 * np.pi * t)[:, None] * np.ones(n)[None, :]
    f = PeriodicField(values, np.eye(2))
    x = np.array([[0.3, 0.7], [0.55, 0.1]])
    npt.assert_allclose(f(x), np.cos(2 * np.pi * x[:, 0]), atol=1e-12)
    npt.assert_allclose(f.gradient(x)[:, 0], -2 * np.pi * np.sin(2 * np.pi * x[:, 0]), atol=1e-11)
    npt.assert_allclose(f.gradient(x)[:, 1], 0.0, atol=1e-11)
    assert f.mean() == pytest.approx(0.0, abs=1e-15)


def test_periodic_field_rejects_bad_grids():
    with pytest.raises(InvalidInputError):
        PeriodicField(np.ones(5), np.eye(2))
    with pytest.raises(InvalidInputError):
        PeriodicField(np.full((4, 4), np.nan), np.eye(2))
