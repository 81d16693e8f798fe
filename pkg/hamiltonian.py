"""Vortex-type Hamiltonian H = sum_{i != j} G_i G_j G(p_i, p_j) + Psi(p), its
gradient, finite-difference Hessian and the Morse check of critical points.

Every routine has a batched form over configurations shaped (B, N, dim); the
single-system API wraps it. Gradients are Riemannian gradients in length
units (chart gradients on a conformal torus).
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from errors import InvalidInputError, PreconditionError
from geometry import (PeriodicField, Surface, as_configuration, min_pair_distance,
                      retract_many, retract_scale, tangent_basis, tangent_project)
from green import green_pairs, self_energy
from schemas import EquilibriumReport

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
ZERO_MODE_REL = 1e-4
CRITICAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FunctionField:
    """Scalar field given by callables on ambient coordinates (..., dim)."""
    func: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)


ScalarField = Union[PeriodicField, FunctionField]
CustomPsi = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]]


class PsiVariant(str, Enum):
    ZERO = "zero"
    KIRCHHOFF_ROUTH = "kirchhoff_routh"
    LOG_K = "log_k"
    TWO_LOG_K = "two_log_k"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class PsiSpec:
    """Psi term of the Hamiltonian.

    Every variant except ZERO and CUSTOM carries the self-energy
    ``self_energy_sign * sum G_i^2 h(p_i, p_i)``; the default sign -1 is the
    Kirchhoff-Routh convention, +1 the convention of the perturbed Hamiltonian
    H_f. LOG_K adds sum log K(p_i); TWO_LOG_K adds
    ``weights[0] * sum_{i < m} log K(p_i) + weights[1] * sum_{i >= m} log K2(p_i)``.
    ``potential`` adds sum f(p_i) on top of any variant.
    """
    variant: PsiVariant = PsiVariant.ZERO
    K: Optional[ScalarField] = None
    K2: Optional[ScalarField] = None
    m: int = 0
    weights: Tuple[float, float] = (1.0, 1.0)
    self_energy_sign: int = -1
    custom: Optional[CustomPsi] = None
    potential: Optional[ScalarField] = None

    def __post_init__(self):
        if self.self_energy_sign not in (-1, 1):
            raise InvalidInputError(f"self_energy_sign must be -1 or +1, got {self.self_energy_sign}")
        if self.variant == PsiVariant.LOG_K and self.K is None:
            raise InvalidInputError("log_k psi needs a field K")
        if self.variant == PsiVariant.TWO_LOG_K:
            if self.K is None or self.K2 is None:
                raise InvalidInputError("two_log_k psi needs fields K and K2")
            if self.m < 0:
                raise InvalidInputError(f"split index m must be nonnegative, got {self.m}")
        if self.variant == PsiVariant.CUSTOM and self.custom is None:
            raise InvalidInputError("custom psi needs a callable")
        for f in (self.K, self.K2):
            if isinstance(f, PeriodicField) and np.any(f.values <= 0):
                raise InvalidInputError("K fields must be strictly positive on their grids")

    def with_potential(self, f: ScalarField) -> "PsiSpec":
        return replace(self, potential=f)

    @property
    def is_position_free(self) -> bool:
        """True when Psi is constant under isometries of a flat torus or round sphere."""
        return self.variant in (PsiVariant.ZERO, PsiVariant.KIRCHHOFF_ROUTH) and self.potential is None


def psi_zero() -> PsiSpec:
    return PsiSpec()


def kirchhoff_routh(self_energy_sign: int = -1) -> PsiSpec:
    return PsiSpec(PsiVariant.KIRCHHOFF_ROUTH, self_energy_sign=self_energy_sign)


def log_k(K: ScalarField, self_energy_sign: int = -1) -> PsiSpec:
    return PsiSpec(PsiVariant.LOG_K, K=K, self_energy_sign=self_energy_sign)


def two_log_k(K1: ScalarField, K2: ScalarField, m: int,
              weights: Tuple[float, float] = (1.0, 1.0)) -> PsiSpec:
    return PsiSpec(PsiVariant.TWO_LOG_K, K=K1, K2=K2, m=m, weights=tuple(weights))


def custom_psi(fn: CustomPsi) -> PsiSpec:
    return PsiSpec(PsiVariant.CUSTOM, custom=fn)


def sinh_poisson_psi(V1: ScalarField, V2: ScalarField, m: int, tau: float) -> PsiSpec:
    """Psi of the mean-field Hamiltonian for the sinh-Poisson equation."""
    if not tau > 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    return two_log_k(V1, V2, m, (-1.0 / (4.0 * np.pi), -1.0 / (4.0 * np.pi * tau ** 2)))


@dataclass(frozen=True, eq=False)
class VortexSystem:
    surface: Surface
    points: np.ndarray
    gammas: np.ndarray
    psi: PsiSpec = field(default_factory=PsiSpec)

    def __post_init__(self):
        gammas = np.asarray(self.gammas, dtype=float).reshape(-1)
        if gammas.size < 2:
            raise InvalidInputError(f"need at least two vortices, got {gammas.size}")
        if np.any(gammas == 0) or not np.all(np.isfinite(gammas)):
            raise InvalidInputError("vortex strengths must be finite and nonzero")
        points = as_configuration(self.surface, self.points)
        if points.shape[0] != gammas.size:
            raise InvalidInputError(f"{points.shape[0]} points for {gammas.size} strengths")
        if min_pair_distance(self.surface, points) <= 0.0:
            raise InvalidInputError("vortex positions must be pairwise distinct")
        if self.psi.variant == PsiVariant.TWO_LOG_K and self.psi.m > gammas.size:
            raise InvalidInputError(f"split index m={self.psi.m} exceeds N={gammas.size}")
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "points", points)

    @property
    def n(self) -> int:
        return self.gammas.size

    def with_points(self, points) -> "VortexSystem":
        return replace(self, points=np.asarray(points, dtype=float))


def _field_terms(s: Surface, f: ScalarField, x: np.ndarray, take_log: bool) -> Tuple[np.ndarray, np.ndarray]:
    values = f(x)
    grads = tangent_project(s, x, f.gradient(x))
    if not take_log:
        return values, grads
    if np.any(values <= 0):
        raise InvalidInputError(f"K must be positive at every vortex, found {np.min(values):.3g}")
    return np.log(values), grads / values[..., None]


def psi_batch(s: Surface, spec: PsiSpec, P: np.ndarray, gammas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Psi and its gradient for configurations P shaped (B, N, dim)."""
    value = np.zeros(P.shape[0])
    grad = np.zeros_like(P)
    v = spec.variant
    if v == PsiVariant.CUSTOM:
        for b in range(P.shape[0]):
            val, g = spec.custom(P[b], gammas)
            value[b] = float(val)
            grad[b] = tangent_project(s, P[b], np.asarray(g, dtype=float))
    elif v != PsiVariant.ZERO:
        h, dh = self_energy(s, P)
        g2 = gammas ** 2
        value += spec.self_energy_sign * (h @ g2)
        grad += spec.self_energy_sign * g2[:, None] * dh
        if v == PsiVariant.LOG_K:
            lk, dlk = _field_terms(s, spec.K, P, take_log=True)
            value += lk.sum(axis=1)
            grad += dlk
        elif v == PsiVariant.TWO_LOG_K:
            m = spec.m
            a1, a2 = spec.weights
            if m > 0:
                lk, dlk = _field_terms(s, spec.K, P[:, :m], take_log=True)
                value += a1 * lk.sum(axis=1)
                grad[:, :m] += a1 * dlk
            if m < P.shape[1]:
                lk, dlk = _field_terms(s, spec.K2, P[:, m:], take_log=True)
                value += a2 * lk.sum(axis=1)
                grad[:, m:] += a2 * dlk
    if spec.potential is not None:
        fv, fg = _field_terms(s, spec.potential, P, take_log=False)
        value += fv.sum(axis=1)
        grad += fg
    return value, grad


def _pair_index(n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    scatter = (i[None, :] == np.arange(n)[:, None]).astype(float)
    return i, j, scatter


def energy_batch(s: Surface, gammas: np.ndarray, psi: PsiSpec, P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """H and grad H for configurations P shaped (B, N, dim); ordered-pair double sum."""
    P = np.asarray(P, dtype=float)
    i, j, scatter = _pair_index(P.shape[1])
    g, dg = green_pairs(s, P[:, i], P[:, j])
    w = gammas[i] * gammas[j]
    value = g @ w
    # G is symmetric, so pairs (n, j) and (j, n) contribute equally to grad_{p_n}
    grad = 2.0 * np.einsum("nm,bmd->bnd", scatter, w[None, :, None] * dg)
    pv, pg = psi_batch(s, psi, P, gammas)
    return value + pv, grad + pg


def eval_H(sys: VortexSystem) -> float:
    value, _ = energy_batch(sys.surface, sys.gammas, sys.psi, sys.points[None])
    return float(value[0])


def eval_Psi(spec: PsiSpec, points, gammas, s: Surface) -> float:
    value, _ = psi_batch(s, spec, np.asarray(points, dtype=float)[None], np.asarray(gammas, dtype=float))
    return float(value[0])


def grad_H(sys: VortexSystem) -> np.ndarray:
    _, grad = energy_batch(sys.surface, sys.gammas, sys.psi, sys.points[None])
    return grad[0]


def grad_norm(sys: VortexSystem) -> float:
    return float(np.linalg.norm(grad_H(sys)))


class ConfigurationChart:
    """Retraction chart of F_N around a base configuration.

    xi (flattened (N, 2)) maps to retract(p_i, sum_a xi_{i,a} e_{i,a}) with an
    orthonormal tangent frame e_i at each base point.
    """

    def __init__(self, s: Surface, base: np.ndarray):
        self.surface = s
        self.base = np.asarray(base, dtype=float)
        self.frames = tangent_basis(s, self.base)

    @property
    def dim(self) -> int:
        return 2 * self.base.shape[0]

    def _tangent(self, xi: np.ndarray) -> np.ndarray:
        xi = xi.reshape(xi.shape[:-1] + (self.base.shape[0], 2))
        return np.einsum("...na,nad->...nd", xi, self.frames)

    def point(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return retract_many(self.surface, self.base, self._tangent(xi))

    def pullback(self, xi, P: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Gradient of H o chart at xi from the ambient gradients at P = point(xi)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        scale = retract_scale(self.surface, self.base, self._tangent(xi))
        comp = np.einsum("bnd,nad->bna", grads, self.frames) / scale[..., None]
        return comp.reshape(comp.shape[0], -1)

    def recenter(self, xi) -> "ConfigurationChart":
        return ConfigurationChart(self.surface, self.point(xi)[0])

    def configuration(self) -> np.ndarray:
        return self.base


def chart_gradient(sys: VortexSystem, chart, xi=None) -> Tuple[float, np.ndarray]:
    xi = np.zeros((1, chart.dim)) if xi is None else np.atleast_2d(xi)
    P = chart.point(xi)
    value, grads = energy_batch(sys.surface, sys.gammas, sys.psi, P)
    return float(value[0]), chart.pullback(xi, P, grads)[0]


def chart_hessian(sys: VortexSystem, chart, step: float = FD_STEP, symmetrize: bool = True) -> np.ndarray:
    """Central differences of the pulled-back gradient, all columns in one batch."""
    d = chart.dim
    xi = np.concatenate([step * np.eye(d), -step * np.eye(d)])
    P = chart.point(xi)
    _, grads = energy_batch(sys.surface, sys.gammas, sys.psi, P)
    g = chart.pullback(xi, P, grads)
    A = ((g[:d] - g[d:]) / (2.0 * step)).T
    return 0.5 * (A + A.T) if symmetrize else A


def hess_H(sys: VortexSystem, step: float = FD_STEP, symmetrize: bool = True) -> np.ndarray:
    return chart_hessian(sys, ConfigurationChart(sys.surface, sys.points), step, symmetrize)


def symmetry_modes(s: Surface, points: np.ndarray) -> np.ndarray:
    """Orthonormal basis (2N, k) of the isometry-orbit directions in chart coordinates."""
    if not s.is_homogeneous:
        return np.zeros((2 * points.shape[0], 0))
    frames = tangent_basis(s, points)
    if s.is_torus:
        gens = [np.broadcast_to(e, points.shape) for e in np.eye(2)]
    else:
        gens = [np.cross(omega, points) for omega in np.eye(3)]
    cols = [np.einsum("nd,nad->na", v, frames).reshape(-1) for v in gens]
    return linalg.orth(np.stack(cols, axis=1), rcond=1e-8)


def classify_spectrum(A: np.ndarray, sym: np.ndarray, zero_rel: float = ZERO_MODE_REL) -> dict:
    eigvals = linalg.eigh(A, eigvals_only=True)
    scale = float(np.max(np.abs(eigvals))) if eigvals.size else 0.0
    thr = zero_rel * scale
    if sym.shape[1]:
        comp = linalg.null_space(sym.T)
        transverse = linalg.eigh(comp.T @ A @ comp, eigvals_only=True)
    else:
        transverse = eigvals
    return {
        "eigenvalues": eigvals,
        "threshold": thr,
        "morse_index": int(np.sum(eigvals < -thr)),
        "zero_modes": int(np.sum(np.abs(eigvals) <= thr)),
        "positive_count": int(np.sum(eigvals > thr)),
        "transverse": transverse,
        "nondegenerate": bool(transverse.size == 0 or np.min(np.abs(transverse)) > thr),
    }


def morse_check(sys: VortexSystem, candidate=None, tol_grad: float = CRITICAL_TOL,
                zero_rel: float = ZERO_MODE_REL) -> EquilibriumReport:
    """Hessian spectrum report at a near-critical configuration.

    On homogeneous surfaces nondegeneracy is tested on the complement of the
    translation or rotation orbit directions.
    """
    if candidate is not None:
        sys = sys.with_points(candidate)
    gnorm = grad_norm(sys)
    if gnorm >= tol_grad:
        raise PreconditionError(f"candidate is not near-critical: |grad H| = {gnorm:.3g} >= {tol_grad:.3g}")
    return equilibrium_report(sys, zero_rel)


def equilibrium_report(sys: VortexSystem, zero_rel: float = ZERO_MODE_REL, status: str = "Converged",
                       iterations: int = 0) -> EquilibriumReport:
    value, grad = energy_batch(sys.surface, sys.gammas, sys.psi, sys.points[None])
    gnorm = float(np.linalg.norm(grad[0]))
    sym = symmetry_modes(sys.surface, sys.points)
    spec = classify_spectrum(hess_H(sys), sym, zero_rel)
    logger.debug("morse check: index=%d zero=%d sym=%d", spec["morse_index"], spec["zero_modes"], sym.shape[1])
    return EquilibriumReport(
        point=sys.points.tolist(),
        gammas=sys.gammas.tolist(),
        h_value=float(value[0]),
        grad_norm=gnorm,
        hessian_eigenvalues=spec["eigenvalues"].tolist(),
        morse_index=spec["morse_index"],
        zero_modes=spec["zero_modes"],
        positive_count=spec["positive_count"],
        symmetry_modes=int(sym.shape[1]),
        transverse_eigenvalues=spec["transverse"].tolist(),
        nondegenerate=spec["nondegenerate"],
        status=status,
        iterations=iterations,
    )
