"""Suprathreshold cluster extraction on masked voxel grids.

Thresholding is inclusive: one-sided keeps voxels with value >= z, two-sided
keeps |value| >= z (positive and negative excursions merge into the same
component). Connectivity is voxel-index adjacency, independent of anisotropic
spacing: NN1 = faces (6 neighbors), NN2 = faces+edges (18), NN3 =
faces+edges+corners (26).

Voxels are identified by the canonical x-fastest linear index
ix + nx*(iy + ny*iz).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .grid import Mask, ScalarField, check_same_grid


class Connectivity(enum.IntEnum):
    NN1 = 1
    NN2 = 2
    NN3 = 3

    @property
    def n_neighbors(self) -> int:
        return {1: 6, 2: 18, 3: 26}[int(self)]

    def half_offsets(self):
        """One offset per unordered neighbor direction (z > 0, or z = 0 and
        y > 0, or z = y = 0 and x > 0)."""
        offs = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
        if self >= Connectivity.NN2:
            offs += [(1, 1, 0), (-1, 1, 0), (1, 0, 1), (-1, 0, 1), (0, 1, 1), (0, -1, 1)]
        if self >= Connectivity.NN3:
            offs += [(1, 1, 1), (-1, 1, 1), (1, -1, 1), (-1, -1, 1)]
        return offs

    @classmethod
    def parse(cls, value) -> "Connectivity":
        if isinstance(value, cls):
            return value
        try:
            return cls(int(value))
        except (TypeError, ValueError, KeyError):
            raise ValueError(f"connectivity must be 1, 2 or 3, got {value!r}") from None


class Sidedness(enum.Enum):
    ONE = "one"
    TWO = "two"

    @classmethod
    def parse(cls, value) -> "Sidedness":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        if v in ("one", "1", "one-sided", "1-sided"):
            return cls.ONE
        if v in ("two", "2", "two-sided", "2-sided"):
            return cls.TWO
        raise ValueError(f"sidedness must be one or two, got {value!r}")


def z_threshold_from_p(p: float, sided: Sidedness = Sidedness.ONE) -> float:
    """Standard-normal voxel threshold for per-voxel rate p.

    One-sided: upper-tail quantile, P(Z >= z) = p. Two-sided: P(|Z| >= z) = p,
    i.e. the upper-tail quantile at p/2.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be in (0, 1), got {p}")
    sided = Sidedness.parse(sided)
    q = p if sided is Sidedness.ONE else 0.5 * p
    return float(-ndtri(q))


@dataclass(frozen=True, eq=False)
class Cluster:
    indices: np.ndarray = field(repr=False)  # sorted x-fastest linear indices
    size: int = 0
    peak_index: int = 0


@dataclass(frozen=True, eq=False)
class ClusterSet:
    clusters: tuple
    z_threshold: float
    connectivity: Connectivity
    sided: Sidedness

    def sizes(self) -> list[int]:
        return [c.size for c in self.clusters]

    @property
    def n_suprathreshold(self) -> int:
        return sum(c.size for c in self.clusters)

    def max_size(self) -> int:
        return self.clusters[0].size if self.clusters else 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wtr = csv.writer(f)
            wtr.writerow(["cluster_id", "size_voxels", "peak_linear_index"])
            for i, c in enumerate(self.clusters, start=1):
                wtr.writerow([i, c.size, c.peak_index])


def _suprathreshold(values: np.ndarray, flags: np.ndarray, z: float,
                    sided: Sidedness) -> np.ndarray:
    if not math.isfinite(z):
        raise ValueError("z threshold must be finite")
    if sided is Sidedness.ONE:
        supra = values >= z
    else:
        supra = np.abs(values) >= z
    return supra & flags


def _pair_lists(supra: np.ndarray, conn: Connectivity, lin: np.ndarray):
    """Yield (u, v) arrays of x-fastest linear indices for each adjacent
    suprathreshold pair, one unordered pair once."""
    shape = supra.shape
    for off in conn.half_offsets():
        sl_v, sl_w = [], []
        for o, n in zip(off, shape):
            sl_v.append(slice(max(0, -o), n - max(0, o)))
            sl_w.append(slice(max(0, o), n - max(0, -o)))
        sl_v, sl_w = tuple(sl_v), tuple(sl_w)
        both = supra[sl_v] & supra[sl_w]
        if both.any():
            yield lin[sl_v][both], lin[sl_w][both]


class _UnionFind:
    __slots__ = ("parent", "size")

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def _linear_index_volume(shape) -> np.ndarray:
    return np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape, order="F")


def _components(values: np.ndarray, flags: np.ndarray, z: float,
                conn: Connectivity, sided: Sidedness):
    """Union-find over suprathreshold voxels; returns (flat ids ascending,
    union-find structure)."""
    supra = _suprathreshold(values, flags, z, sided)
    lin = _linear_index_volume(supra.shape)
    flat = lin[supra]  # np advanced boolean indexing yields C order; sort
    flat = np.sort(flat)
    uf = _UnionFind(flat.size)
    if flat.size:
        lut = np.full(supra.size, -1, dtype=np.int64)
        lut[flat] = np.arange(flat.size)
        for u, v in _pair_lists(supra, conn, lin):
            union = uf.union
            for a, b in zip(lut[u].tolist(), lut[v].tolist()):
                union(a, b)
    return flat, uf


def find_clusters(field: ScalarField, mask: Mask, z_threshold: float,
                  connectivity: Connectivity = Connectivity.NN2,
                  sided: Sidedness = Sidedness.ONE) -> ClusterSet:
    """Connected components of the suprathreshold in-mask voxels.

    Clusters come back ordered by descending size, ties broken by smallest
    member linear index; every suprathreshold voxel lands in exactly one
    cluster. The peak is the member maximizing the field value (``|value|``
    for two-sided), first occurrence on ties.
    """
    check_same_grid(field, mask)
    connectivity = Connectivity.parse(connectivity)
    sided = Sidedness.parse(sided)
    flat, uf = _components(field.values, mask.flags, z_threshold, connectivity, sided)

    groups: dict[int, list[int]] = {}
    for i in range(flat.size):
        groups.setdefault(uf.find(i), []).append(i)

    strength = field.values if sided is Sidedness.ONE else np.abs(field.values)
    strength_flat = strength.ravel(order="F")
    clusters = []
    for members in groups.values():
        idx = flat[members]  # ascending because flat is sorted and members are
        vals = strength_flat[idx]
        peak = int(idx[int(np.argmax(vals))])
        clusters.append(Cluster(indices=idx, size=int(idx.size), peak_index=peak))
    clusters.sort(key=lambda c: (-c.size, int(c.indices[0])))
    return ClusterSet(tuple(clusters), float(z_threshold), connectivity, sided)


def max_cluster_size(field: ScalarField, mask: Mask, z_threshold: float,
                     connectivity: Connectivity = Connectivity.NN2,
                     sided: Sidedness = Sidedness.ONE) -> int:
    """Size of the largest suprathreshold cluster (0 if none) without
    materializing cluster membership."""
    check_same_grid(field, mask)
    return _max_cluster_size_values(
        field.values, mask.flags, z_threshold,
        Connectivity.parse(connectivity), Sidedness.parse(sided),
    )


def _max_cluster_size_values(values: np.ndarray, flags: np.ndarray, z: float,
                             conn: Connectivity, sided: Sidedness) -> int:
    flat, uf = _components(values, flags, z, conn, sided)
    if flat.size == 0:
        return 0
    best = 0
    for i in range(flat.size):
        if uf.parent[i] == i and uf.size[i] > best:
            best = uf.size[i]
    return best
