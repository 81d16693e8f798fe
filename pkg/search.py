"""Critical points of H.

Ascent flow with collision monitoring, the collision power-law diagnostic,
Newton refinement in retraction charts, multistart, the N=2 extremum and the
linking minimax over the canonical torus family.

The linking family is the map T^N -> F_N T^2,
[s_1, ..., s_N] -> ([s_1, tau_1], ..., [s_N, tau_N]) in lattice coordinates.
Its projection to the first coordinates has degree 1, so every deformation of
it meets the barrier set {([sigma_1, t_1], ..., [sigma_N, t_N])} with fixed
distinct sigma_i. Flowing the family upward by the gradient flow pushes
min H over the family toward the minimax level, which is bounded above by max
H on the barrier. The Klein bottle and higher-genus versions of this family
(a torus family pushed through a two-fold cover, or through a retraction of a
punctured torus handle) are not built: no Green function is available there.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import linalg
from tqdm import tqdm

from errors import CapacityError, ConditionFailure, InvalidInputError, PreconditionError, SingularityError
from geometry import (Surface, as_configuration, lattice_coords, minimum_image, min_pair_distance,
                      pair_distance, random_configuration, reduce, retract_many, tangent_basis)
from green import SINGULAR_DIST
from hamiltonian import (ZERO_MODE_REL, ConfigurationChart, PsiSpec, VortexSystem, chart_gradient,
                         chart_hessian, energy_batch, equilibrium_report, grad_norm)
from schemas import CollisionReport, EquilibriumReport, FlowOptions, FlowSummary, MinimaxResult, SearchOptions
from utils import chunk_slices, connected_components, loglog_fit
from vorticity import gamma_condition, subset_condition

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
GROW = 1.5
SHRINK = 0.5
MAX_BACKTRACK = 60
# a step moves no vortex further than this fraction of the closest pair distance
COLLISION_FRACTION = 0.25
MAX_MOVE = 0.1
NEWTON_TOL = 1e-10
NEWTON_PRE_TOL = 1e-2
CLUSTER_FACTOR = 1e3
APPROACH_RADIUS = 1e-2
CHUNK = 512
MAX_FAMILY = 200_000
WITNESS_POOL = 16


class Termination(str, Enum):
    CONVERGED = "Converged"
    MAX_STEPS = "MaxSteps"
    COLLISION = "CollisionApproach"
    DIVERGED = "Diverged"


@dataclass
class FlowTrace:
    times: List[float] = field(default_factory=list)
    configs: List[np.ndarray] = field(default_factory=list)
    h_values: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    min_pair_dist: List[float] = field(default_factory=list)
    termination: Termination = Termination.MAX_STEPS

    def record(self, t: float, config: np.ndarray, h: float, gn: float, dmin: float) -> None:
        self.times.append(float(t))
        self.configs.append(np.array(config))
        self.h_values.append(float(h))
        self.grad_norms.append(float(gn))
        self.min_pair_dist.append(float(dmin))

    @property
    def final(self) -> np.ndarray:
        return self.configs[-1]

    def summary(self) -> FlowSummary:
        return FlowSummary(termination=self.termination.value, steps=len(self.times) - 1,
                           h_start=self.h_values[0], h_end=self.h_values[-1],
                           grad_norm_end=self.grad_norms[-1], min_pair_dist_end=self.min_pair_dist[-1])


def _move_scale(s: Surface) -> float:
    return MAX_MOVE * float(np.sqrt(s.volume))


def _ascent_step(s: Surface, gammas: np.ndarray, psi: PsiSpec, P: np.ndarray, H: np.ndarray,
                 G: np.ndarray, eta: np.ndarray, sign: float = 1.0):
    """One trial step per configuration; accepted where the Armijo test holds."""
    gmax = np.max(np.linalg.norm(G, axis=-1), axis=-1)
    gmax = np.where(gmax > 0, gmax, 1.0)
    dmin = min_pair_distance(s, P)
    step = np.minimum(eta, np.minimum(COLLISION_FRACTION * dmin, _move_scale(s)) / gmax)
    trial = retract_many(s, P, sign * step[:, None, None] * G)
    Ht, Gt = energy_batch(s, gammas, psi, trial)
    gn2 = np.sum(G ** 2, axis=(1, 2))
    ok = np.isfinite(Ht) & (sign * (Ht - H) >= ARMIJO * step * gn2)
    P = np.where(ok[:, None, None], trial, P)
    H = np.where(ok, Ht, H)
    G = np.where(ok[:, None, None], Gt, G)
    eta = np.where(ok, GROW * step, SHRINK * step)
    return P, H, G, eta, ok, step


def gradient_flow(sys: VortexSystem, p0=None, opts: Optional[FlowOptions] = None, sign: float = 1.0) -> FlowTrace:
    """Adaptive ascent (sign=+1) or descent (sign=-1) along the gradient of H.

    Every accepted step changes H strictly in the flow direction. Termination:
    Converged when |grad H| < grad_tol, CollisionApproach when two vortices come
    closer than collision_dist, Diverged when backtracking cannot find an
    acceptable step, MaxSteps otherwise.
    """
    opts = opts or FlowOptions()
    s = sys.surface
    P = as_configuration(s, sys.points if p0 is None else p0)[None]
    if P.shape[1] != sys.n:
        raise InvalidInputError(f"start has {P.shape[1]} points for {sys.n} vortices")
    if min_pair_distance(s, P)[0] < SINGULAR_DIST:
        raise InvalidInputError("start configuration has coincident vortices")
    H, G = energy_batch(s, sys.gammas, sys.psi, P)
    eta = np.array([opts.step0])
    trace = FlowTrace()
    t = 0.0
    trace.record(t, P[0], H[0], np.linalg.norm(G[0]), min_pair_distance(s, P)[0])
    for _ in range(opts.max_steps):
        if trace.grad_norms[-1] < opts.grad_tol:
            trace.termination = Termination.CONVERGED
            break
        if trace.min_pair_dist[-1] < opts.collision_dist:
            trace.termination = Termination.COLLISION
            break
        for _ in range(MAX_BACKTRACK):
            P, H, G, eta, ok, step = _ascent_step(s, sys.gammas, sys.psi, P, H, G, eta, sign)
            if ok[0]:
                break
        else:
            trace.termination = Termination.DIVERGED
            break
        t += float(step[0])
        trace.record(t, P[0], H[0], np.linalg.norm(G[0]), min_pair_distance(s, P)[0])
    else:
        if trace.grad_norms[-1] < opts.grad_tol:
            trace.termination = Termination.CONVERGED
        elif trace.min_pair_dist[-1] < opts.collision_dist:
            trace.termination = Termination.COLLISION
    logger.debug("flow: %s after %d steps, H %.6g -> %.6g", trace.termination.value,
                 len(trace.times) - 1, trace.h_values[0], trace.h_values[-1])
    return trace


def cluster_radius(s: Surface, config: np.ndarray, cluster: Sequence[int]) -> float:
    """Root of the summed squared distances of the cluster points to their centroid."""
    pts = np.asarray(config)[list(cluster)]
    if s.is_torus:
        rel = minimum_image(s, pts - pts[0])
    else:
        rel = s.radius * pts
    rel = rel - rel.mean(axis=0)
    return float(np.sqrt(np.sum(rel ** 2)))


def colliding_cluster(s: Surface, config: np.ndarray) -> List[int]:
    """0-based indices of the cluster containing the closest pair."""
    n = config.shape[0]
    i, j = np.triu_indices(n, k=1)
    d = pair_distance(s, config[i], config[j])
    k = int(np.argmin(d))
    edges = [(int(a), int(b)) for a, b, dd in zip(i, j, d) if dd <= CLUSTER_FACTOR * d[k]]
    for comp in connected_components(n, edges):
        if int(i[k]) in comp:
            return comp
    return [int(i[k]), int(j[k])]


def collision_bound_check(sys: VortexSystem, trace: FlowTrace) -> CollisionReport:
    """Fit log |grad H| against log(cluster radius) over the final approach.

    Near a collision of a non-resonant cluster |grad H| grows like the inverse
    cluster radius, so the fitted slope should be at most -1 + 0.1.
    """
    if trace.termination != Termination.COLLISION:
        raise PreconditionError(f"trace ended with {trace.termination.value}, not a collision approach")
    s = sys.surface
    cluster = colliding_cluster(s, trace.final)
    radii = np.array([cluster_radius(s, c, cluster) for c in trace.configs])
    grads = np.asarray(trace.grad_norms)
    mask = (radii <= APPROACH_RADIUS * np.sqrt(s.volume)) & (radii > 0) & (grads > 0)
    if mask.sum() < 4:
        mask = np.zeros_like(mask)
        mask[len(mask) // 2:] = True
        mask &= (radii > 0) & (grads > 0)
    slope, intercept = loglog_fit(radii[mask], grads[mask])
    value = subset_condition(sys.gammas, cluster)
    scale = float(np.sum(sys.gammas[cluster] ** 2))
    holds = abs(value) > 1e-12 * scale
    subset = [k + 1 for k in cluster]
    flags = []
    if not holds:
        flags.append(f"condition fails for I={subset}")
    bound = slope <= -1.0 + 0.1
    if holds and not bound:
        flags.append(f"gradient grows slower than the inverse cluster radius (slope {slope:.3f})")
    return CollisionReport(slope=slope, intercept=intercept, cluster=subset, condition_holds=holds,
                           subset_value=value, bound_satisfied=bool(bound), n_samples=int(mask.sum()), flags=flags)


def newton_chart(sys: VortexSystem, chart, tol: float = NEWTON_TOL, max_iter: int = 50,
                 zero_rel: float = ZERO_MODE_REL):
    """Damped Newton on the pulled-back gradient of a retraction chart.

    Directions with |eigenvalue| below zero_rel * max|eigenvalue| are dropped
    from the step. Returns (chart recentered at the last iterate, gradient norm,
    converged, iterations).
    """
    _, g = chart_gradient(sys, chart)
    gn = float(np.linalg.norm(g))
    for it in range(max_iter):
        if gn < tol:
            return chart, gn, True, it
        lam, V = linalg.eigh(chart_hessian(sys, chart))
        keep = np.abs(lam) > zero_rel * np.max(np.abs(lam))
        step = -V[:, keep] @ ((V[:, keep].T @ g) / lam[keep])
        t = 1.0
        accepted = None
        while t >= 1.0 / 1024.0:
            try:
                _, g_new = chart_gradient(sys, chart, t * step)
            except SingularityError:
                t *= 0.5
                continue
            if np.linalg.norm(g_new) < (1.0 - ARMIJO * t) * gn:
                accepted = t * step
                break
            t *= 0.5
        if accepted is None:
            return chart, gn, False, it
        chart = chart.recenter(accepted)
        _, g = chart_gradient(sys, chart)
        gn = float(np.linalg.norm(g))
    return chart, gn, gn < tol, max_iter


def newton_refine(sys: VortexSystem, p_near=None, tol: float = NEWTON_TOL, max_iter: int = 50,
                  zero_rel: float = ZERO_MODE_REL) -> EquilibriumReport:
    """Sharpen a near-critical configuration; status NonConvergence if |grad H| stays above tol."""
    if p_near is not None:
        sys = sys.with_points(p_near)
    g0 = grad_norm(sys)
    if g0 >= NEWTON_PRE_TOL:
        raise PreconditionError(f"newton_refine needs |grad H| < {NEWTON_PRE_TOL}, got {g0:.3g}")
    chart, gn, ok, it = newton_chart(sys, ConfigurationChart(sys.surface, sys.points), tol, max_iter, zero_rel)
    refined = sys.with_points(chart.configuration())
    status = "Converged" if ok else "NonConvergence"
    logger.debug("newton: %s in %d iterations, |grad H| %.3g -> %.3g", status, it, g0, gn)
    return equilibrium_report(refined, zero_rel, status, it)


def _energy_chunks(s: Surface, gammas: np.ndarray, psi: PsiSpec, P: np.ndarray, pool: ThreadPoolExecutor):
    slices = chunk_slices(P.shape[0], CHUNK)
    parts = list(pool.map(lambda sl: energy_batch(s, gammas, psi, P[sl]), slices))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def linking_family(s: Surface, grid: int, latitudes: Sequence[float]) -> np.ndarray:
    """Configurations of the discretized canonical family, lexicographic in the grid index."""
    n = len(latitudes)
    idx = np.indices((grid,) * n).reshape(n, -1).T
    st = np.stack([idx / grid, np.broadcast_to(np.asarray(latitudes, dtype=float), idx.shape)], axis=-1)
    return reduce(s, st @ s.lattice)


def winding_degree(s: Surface, configs: np.ndarray, grid: int) -> int:
    """Degree of the first-lattice-coordinate projection of a discretized torus family.

    The degree of a self-map of T^N is the determinant of its action on the
    fundamental group, read off from winding numbers along the grid loops
    through index 0.
    """
    n = configs.shape[1]
    mu = lattice_coords(s, configs)[..., 0].reshape((grid,) * n + (n,))
    W = np.zeros((n, n))
    for j in range(n):
        sl = [0] * n
        sl[j] = slice(None)
        seq = mu[tuple(sl)]
        steps = np.diff(np.concatenate([seq, seq[:1]]), axis=0)
        steps -= np.round(steps)
        W[:, j] = np.round(steps.sum(axis=0))
    return int(round(np.linalg.det(W)))


def barrier_configurations(s: Surface, n: int, samples: int, seed: int) -> np.ndarray:
    sigma = (2.0 * np.arange(n) + 1.0) / (2.0 * n)
    rng = np.random.default_rng(seed)
    t = rng.random((samples, n))
    st = np.stack([np.broadcast_to(sigma, t.shape), t], axis=-1)
    return reduce(s, st @ s.lattice)


def _default_latitudes(n: int) -> List[float]:
    return [(i + 1.0) / (n + 1.0) for i in range(n)]


def _pick_witness(sys: VortexSystem, P, H, G, alive, tol_grad):
    order = [int(k) for k in np.lexsort((np.arange(H.size), H)) if alive[k]][:WITNESS_POOL]
    gn = np.linalg.norm(G, axis=(1, 2))
    first = [k for k in order if gn[k] < NEWTON_PRE_TOL]
    rest = sorted((k for k in order if gn[k] >= NEWTON_PRE_TOL), key=lambda k: (gn[k], k))
    best_fail = None
    for k in first + rest:
        try:
            chart, g_end, ok, it = newton_chart(sys, ConfigurationChart(sys.surface, P[k]))
        except SingularityError:
            continue
        if ok or g_end < tol_grad:
            return k, sys.with_points(chart.configuration()), True, it
        if best_fail is None or g_end < best_fail[0]:
            best_fail = (g_end, k, chart.configuration(), it)
    if best_fail is None:
        k = order[0]
        return k, sys.with_points(P[k]), False, 0
    return best_fail[1], sys.with_points(best_fail[2]), False, best_fail[3]


def linking_minimax(surface: Surface, gammas, psi: PsiSpec, opts: Optional[SearchOptions] = None,
                    threads: int = 1, seed: int = 0, progress: bool = False,
                    on_sweep: Optional[Callable[[dict], None]] = None) -> MinimaxResult:
    """Flow the canonical linking family upward and extract a near-critical witness.

    Refuses with ConditionFailure when the strengths are resonant. The recorded
    c_star_lower is min H over the flowed family after each sweep; it never
    decreases and is only a lower bound of the minimax level. Members whose
    energy sits ``opts.stop_margin`` above the current minimum are held in
    place, so the family only deforms where it can still raise its minimum
    and high members are not driven into collisions.
    """
    opts = opts or SearchOptions()
    g = np.asarray(gammas, dtype=float)
    check = gamma_condition(g)
    if not check.passed:
        raise ConditionFailure(f"strengths are resonant: S(I)={check.worst_value:.3g} for I={check.worst_subset}",
                               subset=check.worst_subset, value=check.worst_value)
    if not surface.is_torus:
        raise InvalidInputError("the linking family is only defined on a torus")
    n = g.size
    if n > 4:
        raise CapacityError(f"linking minimax supports N <= 4, got {n}")
    grid = opts.grid or (24 if n <= 3 else 10)
    if grid ** n > MAX_FAMILY:
        raise CapacityError(f"family of {grid}^{n} configurations exceeds {MAX_FAMILY}")
    latitudes = list(opts.latitudes) if opts.latitudes else _default_latitudes(n)
    lat = np.asarray(latitudes, dtype=float)
    if lat.size != n or np.any(np.diff(lat) <= 0) or lat[0] <= 0 or lat[-1] >= 1:
        raise InvalidInputError(f"latitudes must be {n} increasing values in (0, 1), got {latitudes}")

    P = linking_family(surface, grid, latitudes)
    sys = VortexSystem(surface, P[0], g, psi)
    flow = opts.flow
    B = P.shape[0]
    history: List[float] = []
    degrees: List[int] = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        H, G = _energy_chunks(surface, g, psi, P, pool)
        eta = np.full(B, flow.step0)
        collided = np.zeros(B, dtype=bool)
        sweeps = range(opts.sweeps)
        if progress:
            sweeps = tqdm(sweeps, desc="minimax sweeps")
        for sweep in sweeps:
            for _ in range(opts.steps_per_sweep):
                collided |= min_pair_distance(surface, P) < flow.collision_dist
                gn = np.linalg.norm(G, axis=(1, 2))
                frozen = H >= np.min(H) + opts.stop_margin
                active = np.nonzero(~collided & ~frozen & (gn >= flow.grad_tol))[0]
                if active.size == 0:
                    break

                def advance(sl, idx=active):
                    k = idx[sl]
                    return _ascent_step(surface, g, psi, P[k], H[k], G[k], eta[k])

                slices = chunk_slices(active.size, CHUNK)
                for sl, (p_new, h_new, g_new, eta_new, _, _) in zip(slices, pool.map(advance, slices)):
                    k = active[sl]
                    P[k], H[k], G[k], eta[k] = p_new, h_new, g_new, eta_new
            c = float(np.min(H))
            history.append(c)
            degrees.append(winding_degree(surface, P, grid))
            gn = np.linalg.norm(G, axis=(1, 2))
            low = int(np.lexsort((np.arange(B), H))[0])
            state = {"sweep": sweep, "c_star_lower": c, "witness_index": low,
                     "witness_grad_norm": float(gn[low]), "degree": degrees[-1], "collided": int(collided.sum())}
            logger.info("sweep %d: c_star_lower=%.10g |grad H| at min=%.3g degree=%d",
                        sweep, c, gn[low], degrees[-1])
            if on_sweep is not None:
                on_sweep(state)
            if len(history) > 1 and gn[low] < 1e-3 and abs(history[-1] - history[-2]) <= 1e-9 * max(1.0, abs(c)):
                break

    idx, refined, ok, iterations = _pick_witness(sys, P, H, G, ~collided, opts.tol_grad)
    report = equilibrium_report(refined, status="Converged" if ok else "NonConvergence", iterations=iterations)
    barrier_max = None
    if opts.barrier_samples:
        Hb, _ = energy_batch(surface, g, psi, barrier_configurations(surface, n, opts.barrier_samples, seed))
        barrier_max = float(np.max(Hb))
    trace = {
        "witness_grid_index": idx,
        "h_min": float(np.min(H)),
        "h_median": float(np.median(H)),
        "h_max": float(np.max(H)),
        "grad_norm_median": float(np.median(np.linalg.norm(G, axis=(1, 2)))),
    }
    return MinimaxResult(termination=report.status, c_star_lower=history[-1], c_star_history=history,
                         barrier_max=barrier_max, degree_history=degrees, witness=report, grid=grid,
                         latitudes=latitudes, sweeps=len(history), collided=int(collided.sum()),
                         family_trace=trace)


def _same_equilibrium(s: Surface, a: EquilibriumReport, b: EquilibriumReport) -> bool:
    if abs(a.h_value - b.h_value) > 1e-8 * max(1.0, abs(a.h_value)):
        return False
    pa, pb = np.asarray(a.point), np.asarray(b.point)
    i, j = np.triu_indices(pa.shape[0], k=1)
    da = np.sort(pair_distance(s, pa[i], pa[j]))
    db = np.sort(pair_distance(s, pb[i], pb[j]))
    if not np.allclose(da, db, atol=1e-6):
        return False
    return s.is_homogeneous or np.allclose(np.sort(pa, axis=0), np.sort(pb, axis=0), atol=1e-6)


def multistart(sys: VortexSystem, n_starts: int, seed: int = 0, opts: Optional[FlowOptions] = None,
               threads: int = 1) -> List[EquilibriumReport]:
    """Distinct equilibria reached from random starts, sorted by (H, configuration).

    Every start is flowed upward; when all strengths share a sign H is bounded
    below and it is flowed downward too.
    """
    opts = opts or FlowOptions()
    rng = np.random.default_rng(seed)
    starts = [random_configuration(sys.surface, sys.n, rng) for _ in range(n_starts)]
    signs = [1.0, -1.0] if np.all(sys.gammas > 0) or np.all(sys.gammas < 0) else [1.0]
    jobs = [(p, sg) for p in starts for sg in signs]

    def run(job):
        start, sg = job
        trace = gradient_flow(sys, start, opts, sg)
        if trace.grad_norms[-1] >= NEWTON_PRE_TOL:
            return None
        try:
            report = newton_refine(sys, trace.final)
        except SingularityError:
            return None
        return report if report.status == "Converged" else None

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        found = [r for r in pool.map(run, jobs) if r is not None]
    distinct: List[EquilibriumReport] = []
    for r in sorted(found, key=lambda r: (r.h_value, r.point)):
        if not any(_same_equilibrium(sys.surface, r, d) for d in distinct):
            distinct.append(r)
    logger.info("multistart: %d starts, %d converged, %d distinct", len(jobs), len(found), len(distinct))
    return distinct


def pair_extremum(sys: VortexSystem, n_grid: int = 128) -> EquilibriumReport:
    """Global extremum of H for N=2 on a flat torus or round sphere.

    H depends only on the relative position; it has a maximum when the
    strengths have opposite signs and a minimum when they share a sign.
    """
    s = sys.surface
    if sys.n != 2 or not s.is_homogeneous:
        raise InvalidInputError("pair_extremum needs two vortices on a flat torus or round sphere")
    p1 = sys.points[0]
    if s.is_torus:
        t = np.arange(n_grid) / n_grid
        st = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)[1:]
        q = reduce(s, p1 + st @ s.lattice)
    else:
        theta = np.pi * np.arange(1, n_grid + 1) / n_grid
        e1 = tangent_basis(s, p1)[0]
        q = np.cos(theta)[:, None] * p1 + np.sin(theta)[:, None] * e1
    P = np.stack([np.broadcast_to(p1, q.shape), q], axis=1)
    H, _ = energy_batch(s, sys.gammas, sys.psi, P)
    sgn = -1.0 if sys.gammas[0] * sys.gammas[1] < 0 else 1.0
    k = int(np.argmin(sgn * H))
    chart, gn, ok, it = newton_chart(sys, ConfigurationChart(s, P[k]))
    return equilibrium_report(sys.with_points(chart.configuration()),
                              status="Converged" if ok else "NonConvergence", iterations=it)
