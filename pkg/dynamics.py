"""Point-vortex motion dp_i/dt = (1/G_i) J grad_{p_i} H.

J is the rotation by +pi/2 of the oriented tangent plane: (a, b) -> (-b, a) in
the torus chart and v -> p x v on the sphere. This inverts
omega(., X_H) = dH for omega = sum_i G_i (area form at p_i). On a conformal
torus the chart velocity carries the extra factor exp(-2u(p_i)).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from errors import InvalidInputError
from geometry import Surface, SurfaceKind, as_configuration, min_pair_distance, pair_distance, reduce, rotate_tangent
from hamiltonian import VortexSystem, energy_batch
from schemas import DynamicsOptions, TrajectorySummary

logger = logging.getLogger(__name__)

MIDPOINT_TOL = 1e-14
MIDPOINT_MAX_ITER = 100


class TrajectoryEnd(str, Enum):
    COMPLETED = "Completed"
    COLLISION = "CollisionApproach"


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    configs: List[np.ndarray] = field(default_factory=list)
    h_values: List[float] = field(default_factory=list)
    min_pair_dist: List[float] = field(default_factory=list)
    termination: TrajectoryEnd = TrajectoryEnd.COMPLETED
    steps: int = 0
    max_displacement: float = 0.0
    h_drift: float = 0.0

    def record(self, t: float, config: np.ndarray, h: float, dmin: float) -> None:
        self.times.append(float(t))
        self.configs.append(np.array(config))
        self.h_values.append(float(h))
        self.min_pair_dist.append(float(dmin))

    @property
    def final(self) -> np.ndarray:
        return self.configs[-1]

    def summary(self) -> TrajectorySummary:
        return TrajectorySummary(termination=self.termination.value, steps=self.steps,
                                 final_time=self.times[-1], h_start=self.h_values[0],
                                 h_drift=self.h_drift, max_displacement=self.max_displacement,
                                 min_pair_dist=float(np.min(self.min_pair_dist)))


def _velocities(s: Surface, gammas: np.ndarray, grads: np.ndarray, P: np.ndarray) -> np.ndarray:
    v = rotate_tangent(s, P, grads) / gammas[:, None]
    if s.kind == SurfaceKind.CONFORMAL_TORUS:
        v = v * np.exp(-2.0 * s.conformal_factor(P))[:, None]
    return v


def vortex_velocity(sys: VortexSystem, p=None) -> np.ndarray:
    """(N, dim) velocities in length units; tangent vectors on the sphere."""
    P = sys.points if p is None else as_configuration(sys.surface, p)
    _, grads = energy_batch(sys.surface, sys.gammas, sys.psi, P[None])
    return _velocities(sys.surface, sys.gammas, grads[0], P)


def _midpoint_step(sys: VortexSystem, x: np.ndarray, dt: float) -> np.ndarray:
    """One implicit-midpoint step on unwrapped chart (torus) or ambient (sphere) coordinates."""
    s = sys.surface
    rate = 1.0 if s.is_torus else 1.0 / s.radius

    def velocity(y):
        P = reduce(s, y) if s.is_torus else y / np.linalg.norm(y, axis=-1, keepdims=True)
        _, grads = energy_batch(s, sys.gammas, sys.psi, P[None])
        return rate * _velocities(s, sys.gammas, grads[0], P)

    x_new = x + dt * velocity(x)
    for _ in range(MIDPOINT_MAX_ITER):
        nxt = x + dt * velocity(0.5 * (x + x_new))
        delta = float(np.max(np.abs(nxt - x_new)))
        x_new = nxt
        if delta < MIDPOINT_TOL:
            break
    else:
        logger.debug("midpoint iteration stopped at %d iterations, last change %.3g", MIDPOINT_MAX_ITER, delta)
    if not s.is_torus:
        x_new = x_new / np.linalg.norm(x_new, axis=-1, keepdims=True)
    return x_new


def integrate(sys: VortexSystem, p0=None, T: float = 10.0, dt: float = 1e-3,
              opts: Optional[DynamicsOptions] = None) -> Trajectory:
    """Fixed-step implicit midpoint from p0 (default sys.points) up to time T.

    Stops early with CollisionApproach once two vortices are closer than
    opts.collision_dist.
    """
    opts = opts or DynamicsOptions(T=T, dt=dt)
    if not opts.dt > 0 or not opts.T > 0:
        raise InvalidInputError("T and dt must be positive")
    s = sys.surface
    x0 = sys.points if p0 is None else as_configuration(s, p0)
    x = x0.copy()
    h0 = float(energy_batch(s, sys.gammas, sys.psi, x0[None])[0][0])
    trace = Trajectory()
    trace.record(0.0, x0, h0, float(min_pair_distance(s, x0)))
    n_steps = int(round(opts.T / opts.dt))
    for k in range(1, n_steps + 1):
        x = _midpoint_step(sys, x, opts.dt)
        P = reduce(s, x) if s.is_torus else x
        h = float(energy_batch(s, sys.gammas, sys.psi, P[None])[0][0])
        dmin = float(min_pair_distance(s, P))
        trace.steps = k
        trace.h_drift = max(trace.h_drift, abs(h - h0))
        if s.is_torus:
            disp = float(np.max(np.linalg.norm(x - x0, axis=-1)))
        else:
            disp = float(np.max(pair_distance(s, x, x0)))
        trace.max_displacement = max(trace.max_displacement, disp)
        collided = dmin < opts.collision_dist
        if collided or k % opts.record_every == 0 or k == n_steps:
            trace.record(k * opts.dt, P, h, dmin)
        if collided:
            trace.termination = TrajectoryEnd.COLLISION
            logger.info("integration stopped at t=%.6g: pair distance %.3g", k * opts.dt, dmin)
            break
    logger.debug("integrated %d steps, H drift %.3g", trace.steps, trace.h_drift)
    return trace


def reversed_system(sys: VortexSystem) -> VortexSystem:
    """Every strength negated. H is unchanged for the zero and Kirchhoff-Routh Psi, so the flow runs backwards."""
    return replace(sys, gammas=-sys.gammas)


def integrate_many(systems: Sequence[VortexSystem], T: float, dt: float, threads: int = 1) -> List[Trajectory]:
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(lambda sys: integrate(sys, T=T, dt=dt), systems))


def corotation_rate(gamma: float, theta: float, radius: float = 1.0) -> float:
    """Angular speed of two equal vortices G at angle theta on a sphere about their midpoint axis."""
    half = 0.5 * theta
    return gamma / (2.0 * np.pi * radius ** 2) * np.cos(half) / np.sin(half) ** 2
