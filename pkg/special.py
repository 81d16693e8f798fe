"""Three-vortex equilibria found through symmetry.

classify_sphere_triple solves the closed-form equilibrium condition of the
Kirchhoff-Routh Hamiltonian on the round sphere. fixed_circle_search and
reflection_search restrict H to the fixed set of an isometric involution and
use that a critical point of the restriction is critical for the full H.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from errors import InvalidInputError, SingularityError
from geometry import (Surface, SurfaceKind, min_pair_distance, pair_distance, random_points, reduce,
                      retract_many, retract_scale, round_sphere, tangent_basis)
from hamiltonian import (PsiSpec, VortexSystem, chart_gradient, energy_batch, equilibrium_report,
                         kirchhoff_routh, psi_batch)
from schemas import SphereClassification, SphereTripleSolution, SymmetricSearchResult
from search import ARMIJO, COLLISION_FRACTION, GROW, SHRINK, newton_chart

logger = logging.getLogger(__name__)

DISTINCT_TOL = 1e-9
STAGNATION_WINDOW = 50
STAGNATION_TOL = 1e-8
REPARAM_EVERY = 20
INVARIANCE_TOL = 1e-10


# ---------------------------------------------------------------- sphere triples

def _verified_solution(gammas: np.ndarray, pts: np.ndarray, coeffs: np.ndarray,
                       tol_grad: float) -> Optional[SphereTripleSolution]:
    residual = float(np.linalg.norm(coeffs @ pts))
    sys = VortexSystem(round_sphere(1.0), pts, gammas, kirchhoff_routh())
    _, grad = energy_batch(sys.surface, sys.gammas, sys.psi, sys.points[None])
    gnorm = float(np.linalg.norm(grad[0]))
    if gnorm >= tol_grad:
        logger.warning("sphere triple candidate rejected: |grad H| = %.3g", gnorm)
        return None
    i, j = np.array([0, 0, 1]), np.array([1, 2, 2])
    angles = pair_distance(sys.surface, pts[i], pts[j]).tolist()
    return SphereTripleSolution(points=pts.tolist(), residual=residual, angles=angles,
                                cos_theta=float(pts[0] @ pts[1]), grad_norm=gnorm)


def classify_sphere_triple(gammas: Sequence[float], tol_grad: float = 1e-6) -> SphereClassification:
    """Equilibria of three vortices on the unit sphere up to rotation.

    A configuration is an equilibrium iff A p1 + B p2 + C p3 = 0 with
    A = G1 (G2 + G3), B = G2 (G1 + G3), C = G3 (G1 + G2); the points then lie
    on a great circle. Putting p2 at angle 0 and p1, p3 at angles alpha, beta
    the condition reads A e^{i alpha} + B + C e^{i beta} = 0.
    """
    g = np.asarray(gammas, dtype=float).reshape(-1)
    if g.size != 3:
        raise InvalidInputError(f"need exactly three strengths, got {g.size}")
    if np.any(g == 0) or not np.all(np.isfinite(g)):
        raise InvalidInputError("vortex strengths must be finite and nonzero")
    A, B, C = g[0] * (g[1] + g[2]), g[1] * (g[0] + g[2]), g[2] * (g[0] + g[1])
    symmetric = bool(g[0] == g[2] and g[0] < 0 < g[1])
    criterion = float(g[0] + 2.0 * g[1]) if symmetric else None
    result = SphereClassification(gammas=g.tolist(), exists=False, symmetric_case=symmetric, criterion=criterion)
    if A == 0 or B == 0 or C == 0:
        return result
    cos_alpha = (C * C - A * A - B * B) / (2.0 * A * B)
    if abs(cos_alpha) > 1.0 + 1e-12:
        return result
    alpha = float(np.arccos(np.clip(cos_alpha, -1.0, 1.0)))
    z = -(A * np.exp(1j * alpha) + B) / C
    beta = float(np.angle(z))
    phases = np.array([alpha, 0.0, beta])
    diffs = [abs(np.angle(np.exp(1j * (phases[a] - phases[b])))) for a, b in ((0, 1), (0, 2), (1, 2))]
    if min(diffs) < DISTINCT_TOL:
        return result
    pts = np.stack([np.cos(phases), np.sin(phases), np.zeros(3)], axis=1)
    sol = _verified_solution(g, pts, np.array([A, B, C]), tol_grad)
    if sol is None:
        return result
    return SphereClassification(gammas=g.tolist(), exists=True, symmetric_case=symmetric,
                                criterion=criterion, solutions=[sol])


# ---------------------------------------------------------------- involutions

@dataclass(frozen=True, eq=False)
class FixedCircle:
    """Closed geodesic of length ``length`` parametrized by arc length."""
    surface: Surface
    origin: np.ndarray
    direction: np.ndarray
    length: float

    def point(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.surface.is_torus:
            return reduce(self.surface, self.origin + t[..., None] * self.direction)
        a = t[..., None] / self.surface.radius
        return np.cos(a) * self.origin + np.sin(a) * self.direction

    def tangent(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.surface.is_torus:
            return np.broadcast_to(self.direction, t.shape + (2,)).copy()
        a = t[..., None] / self.surface.radius
        return -np.sin(a) * self.origin + np.cos(a) * self.direction


def torus_line(s: Surface, direction: int = 0, offset: float = 0.0) -> FixedCircle:
    """Closed geodesic along lattice vector ``direction`` through offset * the other lattice vector."""
    if not s.is_torus:
        raise InvalidInputError("torus_line needs a torus")
    a = s.lattice[direction]
    other = s.lattice[1 - direction]
    return FixedCircle(s, offset * other, a / np.linalg.norm(a), float(np.linalg.norm(a)))


def equator(s: Surface) -> FixedCircle:
    if s.is_torus:
        raise InvalidInputError("equator needs a sphere")
    return FixedCircle(s, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), 2.0 * np.pi * s.radius)


class InvolutionKind(str, Enum):
    TORUS_REFLECTION = "torus_reflection"
    SPHERE_EQUATOR_REFLECTION = "sphere_equator_reflection"


@dataclass(frozen=True, eq=False)
class Involution:
    """Isometric reflection x -> M x + b of the surface."""
    kind: InvolutionKind
    surface: Surface
    matrix: np.ndarray
    shift: np.ndarray
    circles: Tuple[FixedCircle, ...]

    def apply(self, x) -> np.ndarray:
        y = np.asarray(x, dtype=float) @ self.matrix.T + self.shift
        return reduce(self.surface, y) if self.surface.is_torus else y


def torus_reflection(s: Surface, axis: str = "x", offset: float = 0.0) -> Involution:
    """Mirror of a rectangular torus in the line {y = offset} (axis "x") or {x = offset} (axis "y")."""
    if s.kind != SurfaceKind.FLAT_TORUS and s.kind != SurfaceKind.CONFORMAL_TORUS:
        raise InvalidInputError("torus_reflection needs a torus")
    L = s.lattice
    if abs(L[0, 1]) > 1e-14 or abs(L[1, 0]) > 1e-14:
        raise InvalidInputError("reflections are supported on axis-aligned rectangular lattices only")
    if axis == "x":
        matrix, shift = np.diag([1.0, -1.0]), np.array([0.0, 2.0 * offset])
        height, direction = L[1, 1], 0
    elif axis == "y":
        matrix, shift = np.diag([-1.0, 1.0]), np.array([2.0 * offset, 0.0])
        height, direction = L[0, 0], 1
    else:
        raise InvalidInputError(f"axis must be 'x' or 'y', got {axis!r}")
    frac = offset / height
    circles = (torus_line(s, direction, frac), torus_line(s, direction, frac + 0.5))
    return Involution(InvolutionKind.TORUS_REFLECTION, s, matrix, shift, circles)


def sphere_equator_reflection(s: Surface) -> Involution:
    return Involution(InvolutionKind.SPHERE_EQUATOR_REFLECTION, s, np.diag([1.0, 1.0, -1.0]),
                      np.zeros(3), (equator(s),))


def check_psi_invariance(s: Surface, psi: PsiSpec, gammas, involution: Involution, swap_ends: bool,
                         samples: int = 16, seed: int = 0) -> float:
    """Largest change of Psi under the induced involution on random configurations.

    The induced map applies the involution to every point and, with
    ``swap_ends``, also reverses the order of the three vortices.
    Raises InvalidInputError above the invariance tolerance.
    """
    g = np.asarray(gammas, dtype=float)
    rng = np.random.default_rng(seed)
    P = np.stack([random_points(s, g.size, rng) for _ in range(samples)])
    Q = involution.apply(P)
    if swap_ends:
        Q = Q[:, ::-1]
    a, _ = psi_batch(s, psi, P, g)
    b, _ = psi_batch(s, psi, Q, g)
    worst = float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))
    if worst > INVARIANCE_TOL:
        raise InvalidInputError(f"psi is not invariant under the involution (relative change {worst:.3g})")
    return worst


# ---------------------------------------------------------------- charts

class CircleChart:
    """Three vortices on a closed geodesic, parametrized by their arc-length positions."""

    def __init__(self, circle: FixedCircle, base: np.ndarray):
        self.circle = circle
        self.base = np.asarray(base, dtype=float)

    @property
    def dim(self) -> int:
        return self.base.size

    def point(self, xi) -> np.ndarray:
        return self.circle.point(self.base + np.atleast_2d(xi))

    def pullback(self, xi, P, grads) -> np.ndarray:
        T = self.circle.tangent(self.base + np.atleast_2d(xi))
        return np.einsum("bnd,bnd->bn", grads, T)

    def recenter(self, xi) -> "CircleChart":
        return CircleChart(self.circle, self.base + np.asarray(xi, dtype=float).reshape(-1))

    def configuration(self) -> np.ndarray:
        return self.circle.point(self.base)


class ReflectionChart:
    """Configurations (p1, p2, tau(p1)) with p2 on a fixed circle.

    Coordinates: two retraction coordinates for p1 and the arc-length
    position of p2.
    """

    def __init__(self, involution: Involution, circle: FixedCircle, p1: np.ndarray, t2: float):
        self.involution = involution
        self.circle = circle
        self.p1 = np.asarray(p1, dtype=float)
        self.t2 = float(t2)
        self.frame = tangent_basis(involution.surface, self.p1)

    dim = 3

    def _p1(self, xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        v = xi[:, :2] @ self.frame
        return retract_many(self.involution.surface, self.p1, v), v

    def point(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        p1, _ = self._p1(xi)
        p2 = self.circle.point(self.t2 + xi[:, 2])
        return np.stack([p1, p2, self.involution.apply(p1)], axis=1)

    def pullback(self, xi, P, grads) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        _, v = self._p1(xi)
        scale = retract_scale(self.involution.surface, self.p1, v)
        g1 = grads[:, 0] + grads[:, 2] @ self.involution.matrix
        out = np.empty((xi.shape[0], 3))
        out[:, :2] = (g1 @ self.frame.T) / scale[:, None]
        out[:, 2] = np.einsum("bd,bd->b", grads[:, 1], self.circle.tangent(self.t2 + xi[:, 2]))
        return out

    def recenter(self, xi) -> "ReflectionChart":
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        p1, _ = self._p1(xi)
        return ReflectionChart(self.involution, self.circle, p1[0], self.t2 + xi[0, 2])

    def configuration(self) -> np.ndarray:
        return self.point(np.zeros(3))[0]


def _chart_descent(sys: VortexSystem, chart, max_steps: int = 3000, tol: float = 1e-6):
    """Armijo gradient descent in chart coordinates, recentering after every step."""
    eta = 1e-2
    h, g = chart_gradient(sys, chart)
    for _ in range(max_steps):
        gn = float(np.linalg.norm(g))
        if gn < tol:
            break
        dmin = float(min_pair_distance(sys.surface, chart.configuration()))
        step = min(eta, COLLISION_FRACTION * dmin / gn)
        try:
            h_new, g_new = chart_gradient(sys, chart, -step * g)
        except SingularityError:
            eta = SHRINK * step
            continue
        if np.isfinite(h_new) and h - h_new >= ARMIJO * step * gn * gn:
            chart = chart.recenter(-step * g)
            h, g = chart_gradient(sys, chart)
            eta = GROW * step
        else:
            eta = SHRINK * step
            if eta < 1e-16:
                break
    return chart, h


# ---------------------------------------------------------------- searches

def _check_triple(gammas, require_symmetric: bool) -> np.ndarray:
    g = np.asarray(gammas, dtype=float).reshape(-1)
    if g.size != 3:
        raise InvalidInputError(f"need exactly three strengths, got {g.size}")
    if not (g[0] < 0 < g[1] and g[2] < 0):
        raise InvalidInputError("strengths must alternate in sign: G1 < 0 < G2, G3 < 0")
    pairs = g[0] * g[1] + g[0] * g[2] + g[1] * g[2]
    if not pairs > 0:
        raise InvalidInputError(f"need G1 G2 + G1 G3 + G2 G3 > 0, got {pairs:.6g}")
    if require_symmetric and g[0] != g[2]:
        raise InvalidInputError("reflection search needs G1 == G3")
    return g


def symmetric_family(circle: FixedCircle, s) -> np.ndarray:
    """Configurations (pi(-s), pi(0), pi(s)) for arc-length offsets s."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return circle.point(np.stack([-s, np.zeros_like(s), s], axis=1))


def _circle_energy(sys: VortexSystem, circle: FixedCircle, w: np.ndarray):
    H, G = energy_batch(sys.surface, sys.gammas, sys.psi, circle.point(w))
    return H, np.einsum("bnd,bnd->bn", G, circle.tangent(w))


def _reparametrize(path: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, arc[-1], path.shape[0])
    return np.stack([np.interp(target, arc, path[:, k]) for k in range(path.shape[1])], axis=1)


def _ordered(w: np.ndarray, length: float) -> bool:
    return bool(w[0] < w[1] < w[2] < w[0] + length)


def mountain_pass(sys: VortexSystem, circle: FixedCircle, eps: float, nodes: int = 200,
                  max_iter: int = 20000) -> Tuple[np.ndarray, float, int]:
    """Discrete mountain pass between (-eps, 0, eps) and (-(L/2 - eps), 0, L/2 - eps).

    The path starts as the symmetric family; each iteration moves its lowest
    interior node uphill perpendicular to the path. Stops when the path
    minimum changes less than 1e-8 over 50 iterations.
    """
    L = circle.length
    s = np.linspace(eps, 0.5 * L - eps, nodes)
    path = np.stack([-s, np.zeros_like(s), s], axis=1)
    H, _ = _circle_energy(sys, circle, path)
    history = [float(np.min(H))]
    eta = 1e-2 * L
    it = 0
    for it in range(1, max_iter + 1):
        k = int(np.argmin(H[1:-1])) + 1
        _, g = _circle_energy(sys, circle, path[k:k + 1])
        tang = path[k + 1] - path[k - 1]
        tang /= np.linalg.norm(tang)
        up = g[0] - (g[0] @ tang) * tang
        un = float(np.linalg.norm(up))
        if un > 0:
            gap = min(path[k, 1] - path[k, 0], path[k, 2] - path[k, 1], path[k, 0] + L - path[k, 2])
            step = min(eta, COLLISION_FRACTION * gap / un)
            trial = path[k] + step * up
            if _ordered(trial, L):
                h_trial, _ = _circle_energy(sys, circle, trial[None])
                if h_trial[0] > H[k]:
                    path[k], H[k] = trial, h_trial[0]
                    eta = GROW * step
                else:
                    eta = SHRINK * step
            else:
                eta = SHRINK * step
        if it % REPARAM_EVERY == 0:
            path = _reparametrize(path)
            H, _ = _circle_energy(sys, circle, path)
        history.append(float(np.min(H)))
        if it >= STAGNATION_WINDOW and abs(history[-1] - history[-1 - STAGNATION_WINDOW]) < STAGNATION_TOL:
            break
    k = int(np.argmin(H[1:-1])) + 1
    logger.debug("mountain pass: %d iterations, level %.10g", it, H[k])
    return path[k].copy(), float(H[k]), it


def barrier_level(sys: VortexSystem, circle: FixedCircle, samples: int = 400) -> float:
    """Largest sampled H on {d(p1, p3) = L/2} with p2 between p1 and p3."""
    L = circle.length
    u = np.linspace(0.0, 0.5 * L, samples + 2)[1:-1]
    w = np.stack([np.zeros_like(u), u, np.full_like(u, 0.5 * L)], axis=1)
    H, _ = _circle_energy(sys, circle, w)
    return float(np.max(H))


def fixed_circle_search(surface: Surface, gammas, circle: FixedCircle, psi: PsiSpec, nodes: int = 200,
                        eps: Optional[float] = None, tol: float = 1e-8) -> SymmetricSearchResult:
    """Critical point of H with all three vortices on a closed geodesic.

    Mountain pass inside the circle configuration space, refined by Newton in
    the arc-length coordinates and checked against the full gradient.
    """
    g = _check_triple(gammas, require_symmetric=False)
    L = circle.length
    eps = L / 20.0 if eps is None else float(eps)
    if not 0 < eps < L / 4:
        raise InvalidInputError(f"eps must lie in (0, L/4), got {eps}")
    base = symmetric_family(circle, [L / 4])[0]
    sys = VortexSystem(surface, base, g, psi)
    w, level, iterations = mountain_pass(sys, circle, eps, nodes)
    chart, restricted, ok, it = newton_chart(sys, CircleChart(circle, w), tol=min(tol, 1e-10))
    refined = sys.with_points(chart.configuration())
    report = equilibrium_report(refined, status="Converged" if ok else "NonConvergence", iterations=it)
    alpha = barrier_level(sys, circle)
    consistent = report.h_value <= alpha + 1e-8 * max(1.0, abs(alpha))
    logger.info("circle search: pass level %.10g, barrier %.10g, |grad H| %.3g",
                report.h_value, alpha, report.grad_norm)
    return SymmetricSearchResult(mode="fixed_circle", report=report, restricted_grad_norm=restricted,
                                 full_grad_norm=report.grad_norm, pass_level=report.h_value,
                                 alpha_est=alpha, barrier_consistent=bool(consistent), candidates=1)


def _reflection_starts(involution: Involution, n_starts: int, seed: int):
    rng = np.random.default_rng(seed)
    s = involution.surface
    starts = []
    while len(starts) < n_starts:
        p1 = random_points(s, 1, rng)[0]
        if float(pair_distance(s, p1, involution.apply(p1))) < 0.1 * np.sqrt(s.volume):
            continue
        circle = involution.circles[len(starts) % len(involution.circles)]
        starts.append((circle, p1, float(rng.random() * circle.length)))
    return starts


def reflection_search(surface: Surface, gammas, involution: Involution, psi: PsiSpec, n_starts: int = 8,
                      seed: int = 0, tol: float = 1e-8, threads: int = 1) -> SymmetricSearchResult:
    """Minimum of H over {(p1, p2, tau(p1)) : p2 fixed by tau}.

    H blows up toward the boundary of this set, so descent from any start stays
    inside; the lowest Newton-refined minimum is verified critical for the full H.
    """
    g = _check_triple(gammas, require_symmetric=True)
    starts = _reflection_starts(involution, n_starts, seed)
    sys = VortexSystem(surface, ReflectionChart(involution, *starts[0]).configuration(), g, psi)

    def run(start):
        chart = ReflectionChart(involution, *start)
        try:
            chart, _ = _chart_descent(sys, chart)
            chart, gn, ok, it = newton_chart(sys, chart, tol=min(tol, 1e-10))
        except SingularityError:
            return None
        config = chart.configuration()
        H, _ = energy_batch(surface, g, psi, config[None])
        return float(H[0]), config.ravel().tolist(), gn, ok, it, config

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        found = [r for r in pool.map(run, starts) if r is not None]
    if not found:
        raise SingularityError("every reflection-search start ran into a collision")
    converged = [r for r in found if r[3]] or found
    best = min(converged, key=lambda r: (r[0], r[1]))
    refined = sys.with_points(best[5])
    report = equilibrium_report(refined, status="Converged" if best[3] else "NonConvergence", iterations=best[4])
    logger.info("reflection search: %d/%d starts converged, best H %.10g, |grad H| %.3g",
                sum(r[3] for r in found), len(starts), report.h_value, report.grad_norm)
    return SymmetricSearchResult(mode="reflection", report=report, restricted_grad_norm=best[2],
                                 full_grad_norm=report.grad_norm, candidates=len(found))
