import hashlib
from typing import List, Sequence, Tuple

import numpy as np


def sha1_of_text(text: str) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()


def chunk_slices(n: int, size: int) -> List[slice]:
    """Fixed-size consecutive slices covering range(n); independent of worker count."""
    if n <= 0:
        return []
    return [slice(start, min(n, start + size)) for start in range(0, n, size)]


def loglog_fit(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Least-squares line through (log x, log y); returns (slope, intercept)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def connected_components(n: int, edges: Sequence[Tuple[int, int]]) -> List[List[int]]:
    """Union-find components of an undirected graph on range(n), each sorted."""
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())
