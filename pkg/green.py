"""Green function of the Laplace-Beltrami operator on the supported surfaces.

G(p, .) solves Delta_g G(p, .) = delta_p - 1/vol(S) with Delta_g the
nonnegative Laplacian, normalized by zero mean. It splits as
G(p, q) = -(1/2pi) log d(p, q) - h(p, q) with a smooth regular part h.

Flat torus values use a heat-kernel (Ewald) split: a screened real-space image
sum plus a rapidly decaying Fourier sum, both truncated below 1e-17. The sphere
has a closed form. A conformal torus adds the correction F = c - w(p) - w(q).
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy import special

from errors import InvalidInputError, SingularityError
from geometry import (PeriodicField, Point, Surface, SurfaceKind, minimum_image,
                      pair_distance, retract, sample_grid, tangent_basis)

logger = logging.getLogger(__name__)

SINGULAR_DIST = 1e-12
# screening time of the Ewald split, as a fraction of the cell area
EWALD_FRACTION = 1.0 / 40.0
# terms with exponent beyond this are below 1e-17 and dropped
EWALD_CUTOFF = 40.0
CHUNK = 4096

# Zero mean on the unit sphere: the average of -(1/4pi) log(1 - cos t) over the
# sphere is -(1/4pi) * (1/2) int_{-1}^{1} log(1 - t) dt = -(1/4pi)(log 2 - 1),
# so the constant is (1/4pi)(log 2 - 1). The Green function is radius independent.
SPHERE_CONSTANT = (np.log(2.0) - 1.0) / (4.0 * np.pi)


@dataclass(frozen=True)
class GreenValue:
    value: float
    grad_p: np.ndarray
    regular: float
    grad_regular: np.ndarray


@dataclass(frozen=True, eq=False)
class ConformalCorrection:
    """F(p, q) = c - w(p) - w(q) relating the Green functions of e^{2u} g and g."""
    w: PeriodicField
    c: float

    def value(self, p, q) -> np.ndarray:
        return self.c - self.w(p) - self.w(q)

    def grad_p(self, p) -> np.ndarray:
        return -self.w.gradient(p)


@dataclass(frozen=True)
class _EwaldTables:
    sigma: float
    area: float
    images: np.ndarray
    kvecs: np.ndarray
    kweights: np.ndarray
    center_self: float


@lru_cache(maxsize=32)
def _tables(s: Surface, cutoff: float) -> _EwaldTables:
    area = s.chart_volume
    sigma = EWALD_FRACTION * area
    # index ranges follow the lattice shape so elongated cells keep every term above e^-cutoff
    reach = 0.5 * (np.linalg.norm(s.lattice[0]) + np.linalg.norm(s.lattice[1]))
    radius = reach + np.sqrt(4.0 * sigma * cutoff)
    span = np.ceil(radius * np.linalg.norm(s.dual, axis=1)).astype(int)
    ij = np.array([(i, j) for i in range(-span[0], span[0] + 1) for j in range(-span[1], span[1] + 1)
                   if (i, j) != (0, 0)], dtype=float)
    images = ij @ s.lattice
    gap = np.maximum(np.linalg.norm(images, axis=1) - reach, 0.0)
    images = images[gap ** 2 / (4.0 * sigma) < cutoff]

    # half of the dual lattice; the k <-> -k pair is folded into the weight
    kmax = np.sqrt(cutoff / (4.0 * np.pi ** 2 * sigma))
    fr = np.ceil(kmax * np.linalg.norm(s.lattice, axis=1)).astype(int)
    modes = np.array([(i, j) for i in range(-fr[0], fr[0] + 1) for j in range(-fr[1], fr[1] + 1)
                      if i > 0 or (i == 0 and j > 0)], dtype=float)
    kvecs = modes @ s.dual
    k2 = np.sum(kvecs ** 2, axis=1)
    keep = 4.0 * np.pi ** 2 * k2 * sigma < cutoff
    kvecs, k2 = kvecs[keep], k2[keep]
    kweights = 2.0 * np.exp(-4.0 * np.pi ** 2 * k2 * sigma) / (4.0 * np.pi ** 2 * k2 * area)

    logger.debug("ewald tables: sigma=%.4g images=%d modes=%d", sigma, len(images), len(kvecs))
    # G + (1/2pi) log r at r = 0, i.e. -h(p, p) on the flat torus
    zl = np.sum(images ** 2, axis=1) / (4.0 * sigma)
    center_self = ((np.log(4.0 * sigma) - np.euler_gamma) / (4.0 * np.pi)
                   + float(np.sum(special.exp1(zl))) / (4.0 * np.pi)
                   + float(np.sum(kweights)) - sigma / area)
    return _EwaldTables(sigma, area, images, kvecs, kweights, center_self)


def _ein(z: np.ndarray) -> np.ndarray:
    """Entire exponential integral Ein(z) = E1(z) + log z + euler_gamma."""
    out = np.empty_like(z)
    small = z < 2.0
    zs = z[small]
    term = zs.copy()
    acc = zs.copy()
    for n in range(2, 40):
        term = -term * zs / n
        acc = acc + term / n
    out[small] = acc
    zb = z[~small]
    out[~small] = special.exp1(zb) + np.log(zb) + np.euler_gamma
    return out


def _flat_kernel(t: _EwaldTables, dx: np.ndarray, regular: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Flat-torus G at minimum-image displacements dx (M, 2) and its gradient.

    With ``regular`` the nearest-image singularity is replaced by its smooth
    remainder, giving G + (1/2pi) log |dx| (finite at dx = 0).
    """
    r2 = np.sum(dx ** 2, axis=-1)
    z = r2 / (4.0 * t.sigma)
    if regular:
        value = (_ein(z) - np.euler_gamma + np.log(4.0 * t.sigma)) / (4.0 * np.pi)
        coef = np.full_like(r2, 1.0 / (8.0 * np.pi * t.sigma))
        nz = r2 > 0
        coef[nz] = -np.expm1(-z[nz]) / (2.0 * np.pi * r2[nz])
    else:
        value = special.exp1(z) / (4.0 * np.pi)
        coef = -np.exp(-z) / (2.0 * np.pi * r2)
    grad = coef[:, None] * dx

    y = dx[:, None, :] - t.images
    ry2 = np.sum(y ** 2, axis=-1)
    zy = ry2 / (4.0 * t.sigma)
    value = value + np.sum(special.exp1(zy), axis=1) / (4.0 * np.pi)
    grad = grad - np.einsum("mi,mij->mj", np.exp(-zy) / ry2, y) / (2.0 * np.pi)

    phase = 2.0 * np.pi * dx @ t.kvecs.T
    value = value + np.cos(phase) @ t.kweights - t.sigma / t.area
    grad = grad - (np.sin(phase) * t.kweights) @ (2.0 * np.pi * t.kvecs)
    return value, grad


def _flat_pairs(s: Surface, dx: np.ndarray, regular: bool) -> Tuple[np.ndarray, np.ndarray]:
    t = _tables(s, EWALD_CUTOFF)
    lead = dx.shape[:-1]
    flat = dx.reshape(-1, 2)
    values = np.empty(flat.shape[0])
    grads = np.empty_like(flat)
    for start in range(0, flat.shape[0], CHUNK):
        sl = slice(start, start + CHUNK)
        values[sl], grads[sl] = _flat_kernel(t, flat[sl], regular)
    return values.reshape(lead), grads.reshape(lead + (2,))


def _check_separated(s: Surface, p: np.ndarray, q: np.ndarray) -> None:
    d = pair_distance(s, p, q)
    if np.any(d < SINGULAR_DIST):
        raise SingularityError(f"Green function evaluated at coincident points (distance {np.min(d):.3g})")


def green_pairs(s: Surface, p, q) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized G(p, q) and its gradient in p, for arrays of points shaped (..., dim)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_separated(s, p, q)
    if not s.is_torus:
        diff = p - q
        chord2 = np.sum(diff ** 2, axis=-1)
        value = -np.log(0.5 * chord2) / (4.0 * np.pi) + SPHERE_CONSTANT
        tang = q - np.sum(q * p, axis=-1, keepdims=True) * p
        grad = tang / (2.0 * np.pi * s.radius * chord2[..., None])
        return value, grad
    value, grad = _flat_pairs(s, minimum_image(s, p - q), regular=False)
    if s.kind == SurfaceKind.CONFORMAL_TORUS:
        corr = conformal_correction(s)
        value = value + corr.value(p, q)
        grad = grad + corr.grad_p(p)
    return value, grad


def regular_pairs(s: Surface, p, q) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized h(p, q) and its gradient in p; finite at p = q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if not s.is_torus:
        theta = np.asarray(pair_distance(s, p, q) / s.radius)
        # -(1/2pi) log(R theta) + (1/2pi) log(chord) - (1/4pi) log 2 - c_S
        value = (np.log(np.sinc(theta / (2.0 * np.pi))) / (2.0 * np.pi)
                 - np.log(s.radius) / (2.0 * np.pi) - np.log(2.0) / (4.0 * np.pi) - SPHERE_CONSTANT)
        tang = q - np.sum(q * p, axis=-1, keepdims=True) * p
        coef = np.empty_like(theta)
        small = theta < 1e-3
        ts = theta[small]
        coef[small] = 1.0 / 12.0 + 11.0 * ts ** 2 / 720.0
        tb = theta[~small]
        sb = np.sin(tb)
        # at the antipode the tangential part vanishes and log d has no gradient
        safe = sb > 1e-12
        coef[~small] = np.where(safe, 1.0 / (tb * np.where(safe, sb, 1.0)) - 0.5 / (1.0 - np.cos(tb)), 0.0)
        grad = tang * (coef / (2.0 * np.pi * s.radius))[..., None]
        return value, grad
    value, grad = _flat_pairs(s, minimum_image(s, p - q), regular=True)
    value, grad = -value, -grad
    if s.kind == SurfaceKind.CONFORMAL_TORUS:
        corr = conformal_correction(s)
        value = value - corr.value(p, q)
        grad = grad - corr.grad_p(p)
    return value, grad


def green_eval(s: Surface, p: Point, q: Point) -> GreenValue:
    value, grad = green_pairs(s, p, q)
    regular, grad_regular = regular_pairs(s, p, q)
    return GreenValue(float(value), grad, float(regular), grad_regular)


def self_energy(s: Surface, p) -> Tuple[np.ndarray, np.ndarray]:
    """h(p, p) and the gradient of p -> h(p, p) for points shaped (..., dim)."""
    p = np.asarray(p, dtype=float)
    lead = p.shape[:-1]
    if not s.is_torus:
        h0 = -np.log(s.radius) / (2.0 * np.pi) - np.log(2.0) / (4.0 * np.pi) - SPHERE_CONSTANT
        return np.full(lead, h0), np.zeros_like(p)
    h0 = -_tables(s, EWALD_CUTOFF).center_self
    if s.kind == SurfaceKind.FLAT_TORUS:
        return np.full(lead, h0), np.zeros_like(p)
    corr = conformal_correction(s)
    return h0 - corr.c + 2.0 * corr.w(p), 2.0 * corr.w.gradient(p)


def _symbol(lattice: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Fourier symbol -4 pi^2 |k|^2 of the flat Laplacian on the grid."""
    m1 = np.fft.fftfreq(shape[0]) * shape[0]
    m2 = np.fft.fftfreq(shape[1]) * shape[1]
    mm = np.stack(np.meshgrid(m1, m2, indexing="ij"), axis=-1)
    k = mm @ np.linalg.inv(lattice).T
    return -4.0 * np.pi ** 2 * np.sum(k ** 2, axis=-1)


def laplacian(f: PeriodicField) -> PeriodicField:
    """Spectral flat Laplacian d^2/dx^2 + d^2/dy^2 of a periodic grid field."""
    values = np.real(np.fft.ifft2(np.fft.fft2(f.values) * _symbol(f.lattice, f.shape)))
    return PeriodicField(values, f.lattice)


def poisson_solve(s: Surface, rhs: Union[np.ndarray, PeriodicField]) -> PeriodicField:
    """Zero-mean w with (d^2/dx^2 + d^2/dy^2) w = rhs on the periodic grid of a torus."""
    if not s.is_torus:
        raise InvalidInputError("poisson_solve needs a torus surface")
    values = rhs.values if isinstance(rhs, PeriodicField) else np.asarray(rhs, dtype=float)
    if values.ndim != 2:
        raise InvalidInputError(f"right-hand side must be a 2-D grid, got shape {values.shape}")
    integral = s.chart_volume * float(np.mean(values))
    if abs(integral) > 1e-8:
        raise InvalidInputError(f"right-hand side is not compatible: its integral is {integral:.3g}")
    symbol = _symbol(s.lattice, values.shape)
    symbol[0, 0] = 1.0
    coeffs = np.fft.fft2(values) / symbol
    coeffs[0, 0] = 0.0
    return PeriodicField(np.real(np.fft.ifft2(coeffs)), s.lattice)


@lru_cache(maxsize=8)
def conformal_correction(s: Surface) -> ConformalCorrection:
    if s.kind != SurfaceKind.CONFORMAL_TORUS:
        raise InvalidInputError("conformal_correction needs a conformal torus")
    u = s.conformal_factor
    weight = np.exp(2.0 * u.values)
    rhs = weight / s.volume - 1.0 / s.chart_volume
    # Delta_g w = rhs for the nonnegative Laplacian
    w = poisson_solve(s, -rhs)
    c = float(np.sum(w.values * weight) / np.sum(weight)) + w.mean()
    logger.debug("conformal correction: grid=%s c=%.6g max|w|=%.3g",
                 u.shape, c, float(np.max(np.abs(w.values))))
    return ConformalCorrection(w, c)


def cell_centred_mean(s: Surface, p: Point, n: int) -> float:
    """Plain average of G(p, .) over the centres of an n x n cell grid shifted to p."""
    p = np.asarray(p, dtype=float)
    offsets = sample_grid(s, n).reshape(-1, 2) + (0.5 / n) * (s.lattice[0] + s.lattice[1])
    q = p + offsets
    values, _ = green_pairs(s, np.broadcast_to(p, q.shape), q)
    return float(np.mean(values))


def green_mean(s: Surface, p: Point, n: int = 256, n_polar: int = 48, n_azimuth: int = 16) -> float:
    """Quadrature of G(p, .) against the area element of ``s``.

    Flat torus: full G summed at the centres of n x n and n/2 x n/2 cells
    around p, Richardson-extrapolated. Conformal torus: trapezoid rule on an
    n x n grid through p after subtracting the periodized screened
    singularity, whose integral is known. Sphere: product
    Gauss-Legendre rule in a polar frame at p with a substitution that
    flattens the logarithm.
    """
    p = np.asarray(p, dtype=float)
    if not s.is_torus:
        v, wv = np.polynomial.legendre.leggauss(n_polar)
        v, wv = 0.5 * (v + 1.0), 0.5 * wv
        t = 1.0 - 2.0 * v ** 4
        phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
        e1, e2 = tangent_basis(s, p)
        ring = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        q = t[:, None, None] * p + np.sqrt(1.0 - t ** 2)[:, None, None] * ring[None, :, :]
        values, _ = green_pairs(s, np.broadcast_to(p, q.shape), q)
        weights = 8.0 * v ** 3 * wv * (2.0 * np.pi / n_azimuth) * s.radius ** 2
        return float(np.sum(weights[:, None] * values))

    if s.kind == SurfaceKind.FLAT_TORUS:
        # the log singularity leaves an h^2 term in the cell-centred sums; extrapolation removes it
        fine, coarse = cell_centred_mean(s, p, n), cell_centred_mean(s, p, n // 2)
        return float(s.chart_volume * (4.0 * fine - coarse) / 3.0)

    t = _tables(s, EWALD_CUTOFF)
    dx = minimum_image(s, sample_grid(s, n).reshape(-1, 2))
    q = p + dx
    phase = 2.0 * np.pi * dx @ t.kvecs.T
    smooth = np.cos(phase) @ t.kweights - t.sigma / t.area

    corr = conformal_correction(s)
    u = s.conformal_factor
    wq = np.exp(2.0 * u(q))
    wp = float(np.exp(2.0 * u(p)))
    integrand = (smooth + corr.value(p, q)) * wq
    r2 = np.sum(dx ** 2, axis=1)
    nz = r2 > 0
    # periodized screened singularity K(dx); its cell integral is sigma
    k_values = np.zeros_like(r2)
    y = dx[nz][:, None, :] - t.images
    k_values[nz] = (special.exp1(r2[nz] / (4.0 * t.sigma))
                    + np.sum(special.exp1(np.sum(y ** 2, axis=-1) / (4.0 * t.sigma)), axis=1)) / (4.0 * np.pi)
    integrand[nz] += k_values[nz] * (wq[nz] - wp)
    return float(t.area * np.mean(integrand) + t.sigma * wp)


def singularity_slope(s: Surface, p: Point, n_samples: int = 13) -> float:
    """Least-squares slope of G(p, q) against log d(p, q) for d in [1e-5, 1e-2]."""
    p = np.asarray(p, dtype=float)
    direction = tangent_basis(s, p)[0]
    if not s.is_torus:
        # retract at distance d along a great circle
        angles = np.logspace(-5, -2, n_samples) / s.radius
        q = np.cos(angles)[:, None] * p + np.sin(angles)[:, None] * direction
    else:
        q = np.array([retract(s, p, d * direction) for d in np.logspace(-5, -2, n_samples)])
    pp = np.broadcast_to(p, q.shape)
    values, _ = green_pairs(s, pp, q)
    slope, _ = np.polyfit(np.log(pair_distance(s, pp, q)), values, 1)
    return float(slope)


def green_fourier(s: Surface, x, n_modes: int = 256) -> np.ndarray:
    """Plain Fourier series of the flat-torus G at displacements x.

    Sum over the box |m_i| <= n_modes; slowly convergent and only meant as an
    independent check at moderate separations.
    """
    if s.kind != SurfaceKind.FLAT_TORUS:
        raise InvalidInputError("the Fourier series is only available on a flat torus")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = np.arange(-n_modes, n_modes + 1, dtype=float)
    mm = np.stack(np.meshgrid(m, m, indexing="ij"), axis=-1).reshape(-1, 2)
    mm = mm[np.any(mm != 0, axis=1)]
    k = mm @ s.dual
    weights = 1.0 / (4.0 * np.pi ** 2 * np.sum(k ** 2, axis=1) * s.chart_volume)
    out = np.empty(x.shape[0])
    for i, xi in enumerate(x):
        out[i] = float(np.cos(2.0 * np.pi * k @ xi) @ weights)
    return out


def green_grid(s: Surface, p: Point, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """G(p, .) sampled on a grid: n x n lattice grid (torus) or n x 2n latitude-longitude
    midpoints (sphere). Nodes within the singular distance of p get NaN."""
    p = np.asarray(p, dtype=float)
    if s.is_torus:
        q = sample_grid(s, n).reshape(-1, 2)
    else:
        theta = np.pi * (np.arange(n) + 0.5) / n
        phi = np.pi * (np.arange(2 * n) + 0.5) / n
        th, ph = np.meshgrid(theta, phi, indexing="ij")
        q = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1).reshape(-1, 3)
    values = np.full(q.shape[0], np.nan)
    ok = pair_distance(s, np.broadcast_to(p, q.shape), q) >= SINGULAR_DIST
    values[ok], _ = green_pairs(s, np.broadcast_to(p, q[ok].shape), q[ok])
    return q, values
