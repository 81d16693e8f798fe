import numpy as np
import numpy.testing as npt
import pytest

from errors import InvalidInputError, PreconditionError
from geometry import PeriodicField, random_configuration, random_rotation, reduce, retract, tangent_basis
from green import green_pairs
from hamiltonian import (FunctionField, PsiSpec, PsiVariant, VortexSystem, classify_spectrum, custom_psi,
                         equilibrium_report, eval_H, eval_Psi, grad_H, hess_H, kirchhoff_routh, log_k, morse_check,
                         psi_zero, sinh_poisson_psi, symmetry_modes, two_log_k)


def constant_field(value: float) -> FunctionField:
    return FunctionField(lambda x: np.full(x.shape[:-1], value), lambda x: np.zeros_like(x))


def _fd_gradient(sys: VortexSystem, h: float = 1e-6) -> np.ndarray:
    """Directional central differences along each point's tangent frame, in ambient form."""
    s = sys.surface
    out = np.zeros_like(sys.points)
    for k in range(sys.n):
        for e in tangent_basis(s, sys.points[k]):
            plus = sys.points.copy()
            minus = sys.points.copy()
            plus[k] = retract(s, sys.points[k], h * e)
            minus[k] = retract(s, sys.points[k], -h * e)
            out[k] += (eval_H(sys.with_points(plus)) - eval_H(sys.with_points(minus))) / (2 * h) * e
    return out


# =============================================================================
# Energy
# =============================================================================

def test_two_vortex_energy(torus):
    p = np.array([[0.1, 0.2], [0.6, 0.9]])
    sys = VortexSystem(torus, p, [1.5, -0.5])
    g, _ = green_pairs(torus, p[0], p[1])
    assert eval_H(sys) == pytest.approx(2 * 1.5 * -0.5 * float(g))


def test_sphere_antipodal_energy(sphere):
    sys = VortexSystem(sphere, [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], [1.0, 1.0], psi_zero())
    assert eval_H(sys) == pytest.approx(-1.0 / (2.0 * np.pi))


@pytest.mark.parametrize("kind", ["torus", "sphere", "wavy_torus"])
def test_gradient_matches_finite_differences(kind, request, rng):
    s = request.getfixturevalue(kind)
    config = random_configuration(s, 4, rng, min_dist=0.15)
    sys = VortexSystem(s, config, [1.0, -0.7, 2.0, 0.4], kirchhoff_routh())
    npt.assert_allclose(grad_H(sys), _fd_gradient(sys), rtol=1e-5, atol=1e-6)


def test_gradient_is_tangent_on_sphere(sphere, rng):
    sys = VortexSystem(sphere, random_configuration(sphere, 5, rng), [1.0, 2.0, -1.0, 0.5, 3.0], kirchhoff_routh())
    npt.assert_allclose(np.sum(grad_H(sys) * sys.points, axis=1), 0.0, atol=1e-12)


def test_self_energy_sign(wavy_torus, rng):
    config = random_configuration(wavy_torus, 3, rng)
    gammas = [1.0, 2.0, -1.0]
    kr = eval_Psi(kirchhoff_routh(), config, gammas, wavy_torus)
    flipped = eval_Psi(kirchhoff_routh(self_energy_sign=1), config, gammas, wavy_torus)
    assert flipped == pytest.approx(-kr)
    assert eval_Psi(psi_zero(), config, gammas, wavy_torus) == 0.0


def test_log_k_adds_log_of_constant(torus, rng):
    config = random_configuration(torus, 3, rng)
    gammas = [1.0, 2.0, -1.0]
    kr = eval_Psi(kirchhoff_routh(), config, gammas, torus)
    K = PeriodicField(np.full((4, 4), 2.0), torus.lattice)
    assert eval_Psi(log_k(K), config, gammas, torus) == pytest.approx(kr + 3 * np.log(2.0))
    assert eval_Psi(log_k(constant_field(2.0)), config, gammas, torus) == pytest.approx(kr + 3 * np.log(2.0))


def test_two_log_k_weights(sphere, rng):
    config = random_configuration(sphere, 4, rng)
    gammas = [1.0, 1.0, -1.0, -1.0]
    kr = eval_Psi(kirchhoff_routh(), config, gammas, sphere)
    spec = two_log_k(constant_field(2.0), constant_field(3.0), m=1, weights=(0.5, -2.0))
    assert eval_Psi(spec, config, gammas, sphere) == pytest.approx(kr + 0.5 * np.log(2.0) - 6.0 * np.log(3.0))


def test_sinh_poisson_weights(torus):
    spec = sinh_poisson_psi(constant_field(1.0), constant_field(1.0), m=2, tau=0.5)
    assert spec.variant == PsiVariant.TWO_LOG_K
    assert spec.weights == pytest.approx((-1.0 / (4 * np.pi), -1.0 / np.pi))
    with pytest.raises(InvalidInputError):
        sinh_poisson_psi(constant_field(1.0), constant_field(1.0), m=2, tau=0.0)


def test_log_k_gradient_uses_field_gradient(torus, rng):
    K = FunctionField(lambda x: 2.0 + np.cos(2 * np.pi * x[..., 0]),
                      lambda x: np.stack([-2 * np.pi * np.sin(2 * np.pi * x[..., 0]), np.zeros(x.shape[:-1])], -1))
    sys = VortexSystem(torus, random_configuration(torus, 3, rng), [1.0, -2.0, 0.5], log_k(K))
    npt.assert_allclose(grad_H(sys), _fd_gradient(sys), rtol=1e-5, atol=1e-6)


def test_custom_psi_and_potential(torus):
    def linear(P, gammas):
        return float(np.sum(P[:, 0])), np.tile([1.0, 0.0], (P.shape[0], 1))

    p = np.array([[0.1, 0.2], [0.6, 0.9]])
    base = VortexSystem(torus, p, [1.0, 1.0])
    sys = VortexSystem(torus, p, [1.0, 1.0], custom_psi(linear))
    assert eval_H(sys) == pytest.approx(eval_H(base) + 0.7)
    npt.assert_allclose(grad_H(sys) - grad_H(base), [[1.0, 0.0], [1.0, 0.0]])

    spec = psi_zero().with_potential(constant_field(0.25))
    assert eval_Psi(spec, p, [1.0, 1.0], torus) == pytest.approx(0.5)


# =============================================================================
# Invariances and scaling
# =============================================================================

@pytest.mark.parametrize("kind", ["torus", "sphere", "wavy_torus"])
def test_energy_ignores_vortex_order(kind, request, rng):
    s = request.getfixturevalue(kind)
    config = random_configuration(s, 4, rng, min_dist=0.1)
    gammas = np.array([1.0, -0.7, 2.0, 0.4])
    perm = np.array([2, 0, 3, 1])
    sys = VortexSystem(s, config, gammas, kirchhoff_routh())
    shuffled = VortexSystem(s, config[perm], gammas[perm], kirchhoff_routh())
    assert eval_H(shuffled) == pytest.approx(eval_H(sys), rel=1e-12)
    npt.assert_allclose(grad_H(shuffled), grad_H(sys)[perm], rtol=1e-12, atol=1e-12)


def test_sphere_energy_is_rotation_invariant(sphere, rng):
    config = random_configuration(sphere, 4, rng, min_dist=0.1)
    gammas = [1.0, -0.7, 2.0, 0.4]
    R = random_rotation(11)
    sys = VortexSystem(sphere, config, gammas, kirchhoff_routh())
    turned = VortexSystem(sphere, config @ R.T, gammas, kirchhoff_routh())
    assert eval_H(turned) == pytest.approx(eval_H(sys), rel=1e-12)
    npt.assert_allclose(grad_H(turned), grad_H(sys) @ R.T, atol=1e-12)


def test_torus_energy_is_translation_invariant(torus, rng):
    config = random_configuration(torus, 4, rng, min_dist=0.1)
    gammas = [1.0, -0.7, 2.0, 0.4]
    sys = VortexSystem(torus, config, gammas, kirchhoff_routh())
    for t in ([0.31, 0.0], [0.0, -0.57], [0.73, 0.19]):
        moved = VortexSystem(torus, reduce(torus, config + np.array(t)), gammas, kirchhoff_routh())
        assert eval_H(moved) == pytest.approx(eval_H(sys), rel=1e-10)
        npt.assert_allclose(grad_H(moved), grad_H(sys), atol=1e-10)


def test_same_sign_pair_energy_blows_up(torus):
    # H = 2 G(d) ~ -(1/pi) log d as two positive vortices merge
    def energy(d):
        return eval_H(VortexSystem(torus, [[0.3, 0.4], [0.3 + d, 0.4]], [1.0, 1.0], kirchhoff_routh()))

    near, far = energy(1e-4), energy(0.1)
    assert near > far
    assert near - far == pytest.approx(np.log(1e3) / np.pi, abs=0.02)


@pytest.mark.parametrize("kind", ["torus", "sphere", "wavy_torus"])
def test_gradient_scales_quadratically_with_strengths(kind, request, rng):
    s = request.getfixturevalue(kind)
    config = random_configuration(s, 3, rng, min_dist=0.15)
    gammas = np.array([1.0, -0.7, 2.0])
    base = grad_H(VortexSystem(s, config, gammas, kirchhoff_routh()))
    scaled = grad_H(VortexSystem(s, config, 3.0 * gammas, kirchhoff_routh()))
    npt.assert_allclose(scaled, 9.0 * base, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("other", [[0.5, 0.5], [0.5, 0.0], [0.0, 0.5]])
def test_torus_half_period_pair_is_critical(torus, other):
    sys = VortexSystem(torus, [[0.0, 0.0], other], [1.0, 1.0], kirchhoff_routh())
    npt.assert_allclose(grad_H(sys), 0.0, atol=1e-12)


# =============================================================================
# Validation
# =============================================================================

def test_system_validation(torus):
    with pytest.raises(InvalidInputError):
        VortexSystem(torus, [[0.1, 0.1]], [1.0])
    with pytest.raises(InvalidInputError):
        VortexSystem(torus, [[0.1, 0.1], [0.5, 0.5]], [1.0, 0.0])
    with pytest.raises(InvalidInputError):
        VortexSystem(torus, [[0.1, 0.1], [1.1, 0.1]], [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        VortexSystem(torus, [[0.1, 0.1], [0.5, 0.5]], [1.0, 1.0, 1.0])
    with pytest.raises(InvalidInputError):
        VortexSystem(torus, [[0.1, 0.1], [0.5, 0.5]], [1.0, 1.0],
                     two_log_k(constant_field(1.0), constant_field(1.0), m=3))


def test_position_free_psi():
    assert psi_zero().is_position_free
    assert kirchhoff_routh().is_position_free
    assert not log_k(constant_field(2.0)).is_position_free
    assert not kirchhoff_routh().with_potential(constant_field(0.5)).is_position_free


def test_psi_spec_validation(torus):
    with pytest.raises(InvalidInputError):
        PsiSpec(PsiVariant.KIRCHHOFF_ROUTH, self_energy_sign=2)
    with pytest.raises(InvalidInputError):
        PsiSpec(PsiVariant.LOG_K)
    with pytest.raises(InvalidInputError):
        PsiSpec(PsiVariant.CUSTOM)
    with pytest.raises(InvalidInputError):
        log_k(PeriodicField(np.zeros((4, 4)), torus.lattice))


def test_log_k_rejects_nonpositive_values_at_vortices(torus):
    K = FunctionField(lambda x: x[..., 0] - 0.5, lambda x: np.tile([1.0, 0.0], x.shape[:-1] + (1,)))
    sys = VortexSystem(torus, [[0.1, 0.1], [0.7, 0.5]], [1.0, 1.0], log_k(K))
    with pytest.raises(InvalidInputError):
        eval_H(sys)


# =============================================================================
# Hessian and Morse data
# =============================================================================

def test_square_torus_dipole_spectrum(torus):
    # Hess G = I/2 at the half-period, so H = -2 G(p1 - p2) has eigenvalues -2, -2, 0, 0
    sys = VortexSystem(torus, [[0.0, 0.0], [0.5, 0.5]], [1.0, -1.0], kirchhoff_routh())
    report = morse_check(sys)
    npt.assert_allclose(sorted(report.hessian_eigenvalues), [-2.0, -2.0, 0.0, 0.0], atol=1e-5)
    assert report.morse_index == 2
    assert report.zero_modes == 2
    assert report.symmetry_modes == 2
    assert report.nondegenerate


def test_sphere_antipodal_dipole_spectrum(sphere):
    sys = VortexSystem(sphere, [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]], [1.0, -1.0], psi_zero())
    report = morse_check(sys)
    assert report.morse_index == 2
    assert report.zero_modes == 2
    assert report.symmetry_modes == 2
    npt.assert_allclose(sorted(report.hessian_eigenvalues)[:2], [-1 / (2 * np.pi)] * 2, atol=1e-5)
    assert report.nondegenerate


def test_hessian_is_nearly_symmetric(torus, rng):
    sys = VortexSystem(torus, random_configuration(torus, 3, rng, min_dist=0.2), [1.0, 2.0, -0.5])
    A = hess_H(sys, symmetrize=False)
    assert np.max(np.abs(A - A.T)) < 1e-6 * max(1.0, np.max(np.abs(A)))


def test_symmetry_modes(torus, sphere, wavy_torus):
    assert symmetry_modes(torus, np.array([[0.1, 0.1], [0.4, 0.7]])).shape == (4, 2)
    assert symmetry_modes(sphere, np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])).shape == (6, 3)
    assert symmetry_modes(sphere, np.array([[0, 0, 1.0], [0, 0, -1.0]])).shape == (4, 2)
    assert symmetry_modes(wavy_torus, np.array([[0.1, 0.1], [0.4, 0.7]])).shape == (4, 0)


def test_classify_spectrum_counts():
    A = np.diag([-3.0, -1.0, 0.0, 2.0])
    result = classify_spectrum(A, np.zeros((4, 0)))
    assert (result["morse_index"], result["zero_modes"], result["positive_count"]) == (2, 1, 1)
    assert not result["nondegenerate"]

    sym = np.array([[0.0], [0.0], [1.0], [0.0]])
    result = classify_spectrum(A, sym)
    npt.assert_allclose(sorted(result["transverse"]), [-3.0, -1.0, 2.0], atol=1e-12)
    assert result["nondegenerate"]


def test_morse_check_requires_critical_point(torus):
    sys = VortexSystem(torus, [[0.1, 0.1], [0.3, 0.2]], [1.0, -1.0])
    with pytest.raises(PreconditionError):
        morse_check(sys)
    report = equilibrium_report(sys)
    assert report.grad_norm > 1e-3
