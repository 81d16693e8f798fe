import os
from typing import List, Sequence

import numpy as np
import pandas as pd

from errors import InvalidInputError
from schemas import GridSpec

FLOAT_FORMAT = "%.17g"


def load_grid(spec: GridSpec, base_dir: str = ".") -> np.ndarray:
    """
    Dense periodic grid from an inline spec, a headerless CSV or a .npy file.
    Relative paths resolve against base_dir (the config file's directory).
    """
    if spec.values is not None:
        return np.asarray(spec.values, dtype=float).reshape(spec.shape)
    path = spec.path if os.path.isabs(spec.path) else os.path.join(base_dir, spec.path)
    if not os.path.exists(path):
        raise InvalidInputError(f"grid file not found: {path}")
    if path.endswith(".npy"):
        grid = np.load(path)
    else:
        grid = pd.read_csv(path, header=None).to_numpy(dtype=float)
    if grid.ndim != 2:
        raise InvalidInputError(f"grid in {path} must be 2-D, got shape {grid.shape}")
    if spec.shape is not None and list(grid.shape) != list(spec.shape):
        raise InvalidInputError(f"grid in {path} has shape {list(grid.shape)}, config says {spec.shape}")
    return grid


def _coord_columns(n: int, dim: int) -> List[str]:
    axes = "xyz"[:dim]
    return [f"{a}{i + 1}" for i in range(n) for a in axes]


def configs_frame(times: Sequence[float], configs: Sequence[np.ndarray], columns: dict) -> pd.DataFrame:
    """One row per recorded time: t, flattened coordinates, then the extra columns."""
    stack = np.stack([np.asarray(c, dtype=float) for c in configs])
    n, dim = stack.shape[1], stack.shape[2]
    df = pd.DataFrame(stack.reshape(len(stack), -1), columns=_coord_columns(n, dim))
    df.insert(0, "t", np.asarray(times, dtype=float))
    for name, values in columns.items():
        df[name] = np.asarray(values, dtype=float)
    return df


def write_frame(df: pd.DataFrame, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_flow_trace(trace, path: str) -> str:
    df = configs_frame(trace.times, trace.configs, {"H": trace.h_values, "grad_norm": trace.grad_norms,
                                                    "min_pair_dist": trace.min_pair_dist})
    return write_frame(df, path)


def write_trajectory(traj, path: str) -> str:
    df = configs_frame(traj.times, traj.configs, {"H": traj.h_values, "min_pair_dist": traj.min_pair_dist})
    return write_frame(df, path)


def write_green_grid(points: np.ndarray, values: np.ndarray, path: str) -> str:
    """Long format: one row per node with its coordinates and G; NaN at the source."""
    pts = np.asarray(points, dtype=float)
    pts = pts.reshape(-1, pts.shape[-1])
    df = pd.DataFrame(pts, columns=list("xyz"[:pts.shape[1]]))
    df["G"] = np.asarray(values, dtype=float).reshape(-1)
    return write_frame(df, path)


def read_trace(path: str, n: int, dim: int) -> np.ndarray:
    """Configurations (T, n, dim) back from a written trace."""
    df = pd.read_csv(path)
    cols = _coord_columns(n, dim)
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise InvalidInputError(f"{path} lacks coordinate columns {missing}")
    return df[cols].to_numpy(dtype=float).reshape(len(df), n, dim)
