from typing import List, Tuple

import numpy as np

from schemas import RunConfig

MAX_CONFIG_POINTS = 64
SPHERE_NORM_TOL = 1e-6
COINCIDENT_TOL = 1e-12


def check_gammas(gammas: List[float]) -> Tuple[bool, List[str]]:
    flags = []
    g = np.asarray(gammas, dtype=float)
    if not np.all(np.isfinite(g)):
        flags.append("vortex strengths must be finite")
    if np.any(g == 0):
        flags.append(f"zero vortex strength at positions {[i + 1 for i in np.flatnonzero(g == 0)]}")
    return (len(flags) == 0, flags)


def check_points(cfg: RunConfig) -> Tuple[bool, List[str]]:
    flags = []
    if cfg.points is None:
        return (True, flags)
    pts = np.asarray(cfg.points, dtype=float)
    dim = 3 if cfg.surface.kind == "round_sphere" else 2
    if pts.ndim != 2 or pts.shape[1] != dim:
        return (False, [f"points must be {dim}-vectors, got shape {list(pts.shape)}"])
    if pts.shape[0] != len(cfg.gammas):
        flags.append(f"{pts.shape[0]} points given for {len(cfg.gammas)} strengths")
    if pts.shape[0] > MAX_CONFIG_POINTS:
        flags.append(f"more than {MAX_CONFIG_POINTS} points")
    if not np.all(np.isfinite(pts)):
        flags.append("points have non-finite coordinates")
        return (False, flags)
    if dim == 3:
        norms = np.linalg.norm(pts, axis=1)
        off = np.flatnonzero(np.abs(norms - 1.0) > SPHERE_NORM_TOL)
        if off.size:
            flags.append(f"sphere points {[int(i) + 1 for i in off]} are not unit vectors (they will be normalized)")
    diff = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    i, j = np.triu_indices(pts.shape[0], k=1)
    close = [(int(a) + 1, int(b) + 1) for a, b in zip(i, j) if diff[a, b] < COINCIDENT_TOL]
    if close:
        flags.append(f"coincident vortex positions {close}")
    # the normalization note alone does not block a run
    blocking = [f for f in flags if "normalized" not in f]
    return (len(blocking) == 0, flags)


def check_fields(cfg: RunConfig, grids: dict) -> Tuple[bool, List[str]]:
    """K grids must be positive wherever log K is taken."""
    flags = []
    for name, grid in grids.items():
        if grid is None:
            continue
        if not np.all(np.isfinite(grid)):
            flags.append(f"{name} grid has non-finite samples")
        elif name in ("K", "K2") and cfg.psi.variant in ("log_k", "two_log_k") and np.min(grid) <= 0:
            flags.append(f"{name} must be positive for log terms, min is {float(np.min(grid)):.6g}")
    return (len(flags) == 0, flags)


def screen_config(cfg: RunConfig, grids: dict) -> Tuple[bool, List[str]]:
    flags = []
    ok = True
    for check in (check_gammas(cfg.gammas), check_points(cfg), check_fields(cfg, grids)):
        ok = ok and check[0]
        flags.extend(check[1])
    return (ok, flags)
