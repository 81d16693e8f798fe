"""Closed surfaces supported by the toolkit: flat tori, round spheres and
conformally perturbed tori.

Points are plain numpy arrays. Torus points are planar coordinates kept in the
half-open fundamental parallelogram of the lattice; sphere points are unit
3-vectors (the physical point is ``radius * x``). Tangent vectors are always in
length units: planar pairs on a torus, ambient 3-vectors orthogonal to ``x`` on
a sphere.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from errors import InvalidInputError

Point = np.ndarray

TANGENT_TOL = 1e-10
_NEIGHBOURS = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)


class SurfaceKind(str, Enum):
    FLAT_TORUS = "flat_torus"
    ROUND_SPHERE = "round_sphere"
    CONFORMAL_TORUS = "conformal_torus"


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Real scalar field sampled on a periodic grid over the lattice cell.

    ``values[i, j]`` is the sample at lattice coordinates ``(i / n1, j / n2)``.
    Off-grid values and gradients come from the trigonometric interpolant.
    """
    values: np.ndarray
    lattice: np.ndarray
    coeffs: np.ndarray = field(init=False, repr=False)
    modes1: np.ndarray = field(init=False, repr=False)
    modes2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 2:
            raise InvalidInputError(f"periodic field needs a 2-D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("periodic field contains non-finite samples")
        n1, n2 = values.shape
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lattice", np.asarray(self.lattice, dtype=float))
        object.__setattr__(self, "coeffs", np.fft.fft2(values) / (n1 * n2))
        object.__setattr__(self, "modes1", np.fft.fftfreq(n1) * n1)
        object.__setattr__(self, "modes2", np.fft.fftfreq(n2) * n2)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def mean(self) -> float:
        return float(self.coeffs[0, 0].real)

    def _phases(self, x: np.ndarray):
        st = np.asarray(x, dtype=float) @ np.linalg.inv(self.lattice)
        e1 = np.exp(2j * np.pi * st[..., 0, None] * self.modes1)
        e2 = np.exp(2j * np.pi * st[..., 1, None] * self.modes2)
        return e1, e2

    def __call__(self, x) -> np.ndarray:
        e1, e2 = self._phases(x)
        return np.real(np.sum((e1 @ self.coeffs) * e2, axis=-1))

    def gradient(self, x) -> np.ndarray:
        """Cartesian gradient of the interpolant at planar points ``x`` (shape (..., 2))."""
        e1, e2 = self._phases(x)
        d_s1 = np.real(np.sum((e1 @ (2j * np.pi * self.modes1[:, None] * self.coeffs)) * e2, axis=-1))
        d_s2 = np.real(np.sum((e1 @ (2j * np.pi * self.modes2[None, :] * self.coeffs)) * e2, axis=-1))
        grad_s = np.stack([d_s1, d_s2], axis=-1)
        return grad_s @ np.linalg.inv(self.lattice).T


@dataclass(frozen=True, eq=False)
class Surface:
    kind: SurfaceKind
    lattice: Optional[np.ndarray] = None
    radius: float = 1.0
    conformal_factor: Optional[PeriodicField] = None
    volume: float = field(init=False)

    def __post_init__(self):
        if self.kind == SurfaceKind.ROUND_SPHERE:
            if not self.radius > 0:
                raise InvalidInputError(f"sphere radius must be positive, got {self.radius}")
            object.__setattr__(self, "volume", 4.0 * np.pi * self.radius ** 2)
            return
        lattice = np.asarray(self.lattice, dtype=float)
        if lattice.shape != (2, 2):
            raise InvalidInputError(f"lattice must be two planar basis vectors, got shape {lattice.shape}")
        det = float(np.linalg.det(lattice))
        if abs(det) < 1e-12:
            raise InvalidInputError("lattice basis is linearly dependent")
        object.__setattr__(self, "lattice", lattice)
        if self.kind == SurfaceKind.FLAT_TORUS:
            object.__setattr__(self, "volume", abs(det))
        elif self.kind == SurfaceKind.CONFORMAL_TORUS:
            if self.conformal_factor is None:
                raise InvalidInputError("conformal torus needs a conformal factor grid")
            # periodic trapezoid rule, spectrally accurate for smooth u
            area = abs(det) * float(np.mean(np.exp(2.0 * self.conformal_factor.values)))
            object.__setattr__(self, "volume", area)
        else:
            raise InvalidInputError(f"unknown surface kind {self.kind!r}")

    @property
    def is_torus(self) -> bool:
        return self.kind != SurfaceKind.ROUND_SPHERE

    @property
    def is_homogeneous(self) -> bool:
        return self.kind != SurfaceKind.CONFORMAL_TORUS

    @property
    def dim(self) -> int:
        """Number of ambient coordinates per point."""
        return 2 if self.is_torus else 3

    @property
    def chart_volume(self) -> float:
        """Area of the flat chart (equals ``volume`` except on a conformal torus)."""
        if self.is_torus:
            return abs(float(np.linalg.det(self.lattice)))
        return self.volume

    @property
    def dual(self) -> np.ndarray:
        """Rows b_j with a_i . b_j = delta_ij."""
        return np.linalg.inv(self.lattice).T


def flat_torus(lattice: Sequence[Sequence[float]] = ((1.0, 0.0), (0.0, 1.0))) -> Surface:
    return Surface(SurfaceKind.FLAT_TORUS, lattice=np.asarray(lattice, dtype=float))


def round_sphere(radius: float = 1.0) -> Surface:
    return Surface(SurfaceKind.ROUND_SPHERE, radius=float(radius))


def conformal_torus(u_values, lattice: Sequence[Sequence[float]] = ((1.0, 0.0), (0.0, 1.0))) -> Surface:
    """Torus with metric e^{2u} g_flat, ``u`` sampled on a periodic grid."""
    lattice = np.asarray(lattice, dtype=float)
    return Surface(SurfaceKind.CONFORMAL_TORUS, lattice=lattice,
                   conformal_factor=PeriodicField(np.asarray(u_values, dtype=float), lattice))


def sample_grid(s: Surface, n: int) -> np.ndarray:
    """Planar points of the n x n periodic grid over the lattice cell, shape (n, n, 2)."""
    t = np.arange(n) / n
    st = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
    return st @ s.lattice


def _check_dim(s: Surface, *arrays: np.ndarray) -> None:
    for a in arrays:
        if a.shape[-1] != s.dim:
            raise InvalidInputError(
                f"point with {a.shape[-1]} coordinates does not live on a {s.kind.value} "
                f"(expected {s.dim})"
            )


def lattice_coords(s: Surface, x) -> np.ndarray:
    return np.asarray(x, dtype=float) @ np.linalg.inv(s.lattice)


def reduce(s: Surface, x) -> np.ndarray:
    """Canonical fundamental-domain representative of planar points."""
    x = np.asarray(x, dtype=float)
    st = lattice_coords(s, x)
    inside = np.all((st >= 0.0) & (st < 1.0), axis=-1, keepdims=True)
    st = st - np.floor(st)
    st = np.where(st >= 1.0, 0.0, st)
    return np.where(inside, x, st @ s.lattice)


def minimum_image(s: Surface, dx) -> np.ndarray:
    """Shortest lattice translate of planar displacements ``dx`` (shape (..., 2))."""
    dx = np.asarray(dx, dtype=float)
    st = lattice_coords(s, dx)
    st = st - np.round(st)
    cand = (st[..., None, :] + _NEIGHBOURS) @ s.lattice
    idx = np.argmin(np.sum(cand ** 2, axis=-1), axis=-1)
    return np.take_along_axis(cand, idx[..., None, None], axis=-2)[..., 0, :]


def as_point(s: Surface, coords) -> Point:
    x = np.asarray(coords, dtype=float)
    _check_dim(s, x)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("point has non-finite coordinates")
    if s.is_torus:
        return reduce(s, x)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm < 1e-300):
        raise InvalidInputError("the zero vector is not a point of the sphere")
    return x / norm


def as_configuration(s: Surface, points) -> np.ndarray:
    """(N, dim) array of canonical points."""
    x = np.asarray(points, dtype=float)
    if x.ndim != 2:
        raise InvalidInputError(f"configuration must be a list of points, got shape {x.shape}")
    return as_point(s, x)


def pair_distance(s: Surface, p, q) -> np.ndarray:
    """Vectorized geodesic (chart, on a conformal torus) distance."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_dim(s, p, q)
    if s.is_torus:
        return np.linalg.norm(minimum_image(s, p - q), axis=-1)
    # atan2 form stays accurate for nearly coincident and nearly antipodal points
    cross = np.linalg.norm(np.cross(p, q), axis=-1)
    dot = np.sum(p * q, axis=-1)
    return s.radius * np.arctan2(cross, dot)


def distance(s: Surface, p: Point, q: Point) -> float:
    return float(pair_distance(s, p, q))


def min_pair_distance(s: Surface, config: np.ndarray) -> np.ndarray:
    """Smallest pairwise distance of configurations shaped (..., N, dim)."""
    config = np.asarray(config, dtype=float)
    n = config.shape[-2]
    i, j = np.triu_indices(n, k=1)
    return np.min(pair_distance(s, config[..., i, :], config[..., j, :]), axis=-1)


def tangent_project(s: Surface, p, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if s.is_torus:
        return v
    p = np.asarray(p, dtype=float)
    return v - np.sum(v * p, axis=-1, keepdims=True) * p


def tangent_basis(s: Surface, p) -> np.ndarray:
    """Orthonormal tangent frame at ``p``: shape (..., 2, dim), positively oriented."""
    p = np.asarray(p, dtype=float)
    if s.is_torus:
        return np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy()
    axis = np.argmin(np.abs(p), axis=-1)
    a = np.eye(3)[axis]
    e1 = a - np.sum(a * p, axis=-1, keepdims=True) * p
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(p, e1)
    return np.stack([e1, e2], axis=-2)


def rotate_tangent(s: Surface, p, v) -> np.ndarray:
    """Rotation by +pi/2 in the oriented tangent plane."""
    v = np.asarray(v, dtype=float)
    if s.is_torus:
        return np.stack([-v[..., 1], v[..., 0]], axis=-1)
    return np.cross(np.asarray(p, dtype=float), v)


def retract(s: Surface, p: Point, v) -> Point:
    """Torus: translate then reduce. Sphere: projective retraction of p + v."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dim(s, p, v)
    if not np.any(v):
        return p.copy()
    if s.is_torus:
        return reduce(s, p + v)
    normal = np.abs(np.sum(v * p, axis=-1))
    if np.any(normal > TANGENT_TOL):
        raise InvalidInputError(f"vector is not tangent to the sphere (normal part {np.max(normal):.3g})")
    y = p + v / s.radius
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


def retract_many(s: Surface, P, V) -> np.ndarray:
    """Batched retraction without tangency checks; V must already be tangent."""
    P = np.asarray(P, dtype=float)
    if s.is_torus:
        return reduce(s, P + V)
    y = P + np.asarray(V, dtype=float) / s.radius
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


def retract_scale(s: Surface, p, v) -> np.ndarray:
    """|p + v/R| for the sphere retraction (1 on tori); the chart Jacobian divides by it."""
    v = np.asarray(v, dtype=float)
    if s.is_torus:
        return np.ones(v.shape[:-1])
    return np.linalg.norm(np.asarray(p, dtype=float) + v / s.radius, axis=-1)


def random_point(s: Surface, seed: int) -> Point:
    return random_points(s, 1, np.random.default_rng(seed))[0]


def random_points(s: Surface, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent points, uniform for the surface's area element."""
    if not s.is_torus:
        x = rng.standard_normal((n, 3))
        return x / np.linalg.norm(x, axis=-1, keepdims=True)
    if s.kind == SurfaceKind.FLAT_TORUS:
        return reduce(s, rng.random((n, 2)) @ s.lattice)
    # rejection sampling against the conformal density e^{2u}
    u = s.conformal_factor
    bound = float(np.exp(2.0 * (np.max(u.values) + 0.05 * np.ptp(u.values) + 1e-12)))
    out = []
    while len(out) < n:
        cand = reduce(s, rng.random((2 * n, 2)) @ s.lattice)
        keep = rng.random(2 * n) * bound < np.exp(2.0 * u(cand))
        out.extend(cand[keep])
    return np.asarray(out[:n])


def random_configuration(s: Surface, n: int, rng: np.random.Generator, min_dist: float = 0.05,
                         max_tries: int = 1000) -> np.ndarray:
    """Random point of F_N with all pairwise distances above ``min_dist``."""
    for _ in range(max_tries):
        config = random_points(s, n, rng)
        if n < 2 or min_pair_distance(s, config) > min_dist:
            return config
    raise InvalidInputError(f"could not place {n} points {min_dist} apart on this surface")


def random_rotation(seed: int) -> np.ndarray:
    return Rotation.random(random_state=seed).as_matrix()
