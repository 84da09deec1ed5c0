"""Formation templates, radius graphs and the spring-damper adaptation reward."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FORMATION_KINDS = ("circle", "wedge", "line")


@dataclass(frozen=True)
class FormationSpec:
    kind: str
    scale: float
    offsets: np.ndarray
    desired: np.ndarray

    @classmethod
    def make(cls, kind: str, n: int, scale: float = 1.0) -> "FormationSpec":
        offsets = np.array(formation_template(kind, n, scale))
        return cls(kind, scale, offsets, desired_distances(offsets))

    @property
    def n(self) -> int:
        return len(self.offsets)


def formation_template(kind: str, n: int, scale: float = 1.0) -> list[tuple[float, float]]:
    """Template positions for ``n`` robots, centred on the origin, front facing +x.

    line: robots side by side across the travel direction.
    circle: evenly spaced on a circle of radius ``scale`` starting at angle 0.
    wedge: apex at the front, then pairs at (-k, +-k)*scale; odd ``n`` only.
    """
    if n < 2:
        raise ValueError(f"formation needs n >= 2, got {n}")
    if scale <= 0:
        raise ValueError(f"formation scale must be positive, got {scale}")
    if kind == "line":
        pts = [(0.0, scale * (i - (n - 1) / 2)) for i in range(n)]
    elif kind == "circle":
        ang = 2 * np.pi * np.arange(n) / n
        pts = list(zip(scale * np.cos(ang), scale * np.sin(ang)))
    elif kind == "wedge":
        if n % 2 == 0:
            raise ValueError(f"wedge formation needs an odd team size, got {n}")
        pts = [(0.0, 0.0)]
        for k in range(1, n // 2 + 1):
            pts += [(-k * scale, k * scale), (-k * scale, -k * scale)]
    else:
        raise ValueError(f"unknown formation kind {kind!r}")
    arr = np.array(pts, dtype=np.float64)
    if kind == "wedge":
        arr = arr - arr.mean(axis=0)
    # cos/sin leave ~1e-17 residue on the circle; snap to exact zeros
    arr[np.abs(arr) < 1e-12] = 0.0
    return [(float(x), float(y)) for x, y in arr]


@lru_cache(maxsize=64)
def pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cached ``np.triu_indices(n, 1)``; the arrays are read-only."""
    iu, ju = np.triu_indices(n, k=1)
    iu.flags.writeable = False
    ju.flags.writeable = False
    return iu, ju


def desired_distances(offsets) -> np.ndarray:
    off = np.asarray(offsets, dtype=np.float64)
    diff = off[:, None, :] - off[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class TeamGraph:
    """Undirected graph over ``n`` robots; ``edges`` holds sorted (i, j) pairs with i < j."""

    n: int
    edges: tuple[tuple[int, int], ...]
    radius: float = float("inf")

    def directed(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) arrays with both directions of every edge, sorted by (dst, src)."""
        if not self.edges:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        e = np.array(self.edges, dtype=np.int64)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((src, dst))
        return src[order], dst[order]

    def neighbors(self, i: int) -> list[int]:
        return sorted(b if a == i else a for a, b in self.edges if i in (a, b))

    def permuted(self, perm) -> "TeamGraph":
        """Relabel node ``k`` as ``perm[k]``."""
        perm = list(perm)
        edges = sorted(tuple(sorted((perm[a], perm[b]))) for a, b in self.edges)
        return TeamGraph(self.n, tuple(edges), self.radius)

    @staticmethod
    def union(graphs) -> "TeamGraph":
        """Disjoint union; node ids of later graphs are shifted past earlier ones."""
        edges, off = [], 0
        for g in graphs:
            edges.extend((a + off, b + off) for a, b in g.edges)
            off += g.n
        radius = graphs[0].radius if graphs else float("inf")
        return TeamGraph(off, tuple(edges), radius)


def radius_edges(positions: np.ndarray, radius: float) -> np.ndarray:
    """Upper-triangle index pairs within ``radius``, as an (m, 2) array in row-major order."""
    p = np.asarray(positions, dtype=np.float64)
    diff = p[:, None, :] - p[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    iu, ju = pair_indices(len(p))
    keep = d2[iu, ju] <= radius * radius
    return np.stack([iu[keep], ju[keep]], axis=1)


def build_radius_graph(positions, radius: float) -> TeamGraph:
    if radius <= 0:
        raise ValueError(f"graph radius must be positive, got {radius}")
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    e = radius_edges(p, radius)
    return TeamGraph(len(p), tuple((int(a), int(b)) for a, b in e), radius)


def adaptation_reward(positions, velocities, desired, alpha: float) -> float:
    """Spring-damper team reward, summed over unordered robot pairs.

    Each pair contributes ``-alpha * |d_ij - |p_i - p_j|| - (1 - alpha) * |q_i - q_j|``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    p = np.asarray(positions, dtype=np.float64)
    q = np.asarray(velocities, dtype=np.float64)
    iu, ju = pair_indices(len(p))
    dp = p[iu] - p[ju]
    dq = q[iu] - q[ju]
    spring = np.abs(np.asarray(desired)[iu, ju] - np.sqrt(np.einsum("ij,ij->i", dp, dp)))
    damper = np.sqrt(np.einsum("ij,ij->i", dq, dq))
    return float(np.sum(-alpha * spring - (1.0 - alpha) * damper))
