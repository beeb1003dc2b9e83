"""Monte Carlo cluster-size thresholds for ACF-matched noise.

Each realization is a synthesized field, variance-normalized over the in-mask
voxels, thresholded at the per-voxel rate(s), and reduced to its largest
cluster size. The per-rate distributions are kept as integer histograms
(memory-light order statistics), and the significance threshold is the k-th
largest maximum with k = floor(athr * n_iter), bumped by one on ties so the
achieved false-positive rate never exceeds athr. A cluster is then called
significant when its size is >= the threshold (thresholds are integer voxel
counts; the mm^3 column is voxels times the voxel volume, exactly).

Realization seeds are pure functions of (master_seed, realization index), so
results are independent of worker count and schedule.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from .acf import AcfParams
from .cluster import Connectivity, Sidedness, _max_cluster_size_values, z_threshold_from_p
from .errors import DegenerateDataError, EmptyMaskError, GridMismatchError
from .grid import Mask, VolumeGrid
from .rng import derive_stream, stream_key
from .synth import SynthPlan, build_plan, _synthesize_values

DEFAULT_PTHR = (0.01, 0.005, 0.002, 0.001)


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Settings for one Monte Carlo run."""

    params: AcfParams
    grid: VolumeGrid
    mask: Mask | None = None  # None means the full grid
    pthr: tuple = DEFAULT_PTHR
    athr: float = 0.05
    connectivity: Connectivity = Connectivity.NN2
    sided: Sidedness = Sidedness.ONE
    n_iter: int = 10000
    master_seed: int = 0
    pad_mm: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "pthr", tuple(float(p) for p in self.pthr))
        object.__setattr__(self, "connectivity", Connectivity.parse(self.connectivity))
        object.__setattr__(self, "sided", Sidedness.parse(self.sided))
        if not self.pthr:
            raise ValueError("pthr must be non-empty")
        if len(set(self.pthr)) != len(self.pthr):
            raise ValueError("pthr values must be distinct")
        for p in self.pthr:
            if not (0.0 < p < 1.0):
                raise ValueError(f"pthr values must be in (0, 1), got {p}")
        if not (0.0 < self.athr < 1.0):
            raise ValueError(f"athr must be in (0, 1), got {self.athr}")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if math.floor(self.athr * self.n_iter) < 1:
            raise ValueError(
                f"athr * n_iter must be >= 1 (got {self.athr} * {self.n_iter}); "
                "increase n_iter"
            )
        if self.master_seed < 0 or self.master_seed >> 64:
            raise ValueError("master_seed must fit in 64 bits")
        if self.mask is not None:
            if self.mask.grid != self.grid:
                raise GridMismatchError("mask grid does not match simulation grid")
            if self.mask.in_count == 0:
                raise EmptyMaskError("simulation mask is empty")

    def mask_flags(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.grid.shape, dtype=bool)
        return self.mask.flags

    @property
    def in_count(self) -> int:
        return self.grid.n_voxels if self.mask is None else self.mask.in_count


@dataclass(frozen=True, eq=False)
class MaxSizeTable:
    """Per-rate histograms of the per-realization maximum cluster size."""

    pthr: tuple
    counts: dict  # pthr -> int64 array, counts[s] = #realizations with max == s
    n_iter: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for p in self.pthr:
            total = int(self.counts[p].sum())
            if total != self.n_iter:
                raise ValueError(
                    f"histogram for pthr={p} sums to {total}, expected {self.n_iter}"
                )

    def n_at_least(self, p: float, size: int) -> int:
        """Number of realizations whose max cluster size is >= size."""
        h = self.counts[p]
        if size <= 0:
            return self.n_iter
        if size >= h.size:
            return 0
        return int(h[size:].sum())

    def kth_largest(self, p: float, k: int) -> int:
        """k-th largest max size (1-indexed)."""
        if not (1 <= k <= self.n_iter):
            raise ValueError(f"k must be in [1, {self.n_iter}], got {k}")
        h = self.counts[p]
        seen = 0
        for s in range(h.size - 1, -1, -1):
            seen += int(h[s])
            if seen >= k:
                return s
        return 0

    def sizes(self, p: float) -> np.ndarray:
        """Expand the histogram back to a sorted (ascending) size list."""
        h = self.counts[p]
        return np.repeat(np.arange(h.size), h)


@dataclass(frozen=True, eq=False)
class ThresholdTable:
    """Cluster-size thresholds per per-voxel rate, plus provenance."""

    pthr: tuple
    threshold_voxels: tuple
    threshold_mm3: tuple
    metadata: dict = field(default_factory=dict)

    def voxels_at(self, p: float) -> int:
        return self.threshold_voxels[self.pthr.index(p)]

    def mm3_at(self, p: float) -> float:
        return self.threshold_mm3[self.pthr.index(p)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            for key in sorted(self.metadata):
                f.write(f"# {key} = {self.metadata[key]}\n")
            wtr = csv.writer(f)
            wtr.writerow(["pthr", "threshold_voxels", "threshold_mm3"])
            for p, v, mm in zip(self.pthr, self.threshold_voxels, self.threshold_mm3):
                wtr.writerow([repr(float(p)), int(v), repr(float(mm))])


def read_threshold_table(path) -> ThresholdTable:
    metadata = {}
    rows = []
    with open(path, newline="") as f:
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                metadata[key.strip()] = val.strip()
            elif line:
                rows.append(line)
    rdr = csv.reader(rows)
    header = next(rdr)
    if header != ["pthr", "threshold_voxels", "threshold_mm3"]:
        raise ValueError(f"{path}: unexpected header {header}")
    pthr, vox, mm3 = [], [], []
    for row in rdr:
        pthr.append(float(row[0]))
        vox.append(int(row[1]))
        mm3.append(float(row[2]))
    return ThresholdTable(tuple(pthr), tuple(vox), tuple(mm3), metadata)


# ---------------------------------------------------------------------------
# simulation driver

_PLAN_CACHE: dict = {}


def _plan_for(config: SimConfig) -> SynthPlan:
    key = (config.grid, config.params.as_tuple(), config.pad_mm)
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        plan = build_plan(config.grid, config.params, config.pad_mm)
        _PLAN_CACHE.clear()  # workers only ever need one plan at a time
        _PLAN_CACHE[key] = plan
    return plan


def _sim_chunk(config: SimConfig, start: int, stop: int) -> list:
    """Histogram the max cluster size for realizations [start, stop)."""
    plan = _plan_for(config)
    flags = config.mask_flags()
    zs = [z_threshold_from_p(p, config.sided) for p in config.pthr]
    cap = config.in_count
    hists = [np.zeros(cap + 1, dtype=np.int64) for _ in config.pthr]
    base = derive_stream(config.master_seed)
    for i in range(start, stop):
        vals = _synthesize_values(plan, stream_key(base, i))
        inmask = vals[flags]
        sd = inmask.std(ddof=1)
        if sd == 0:
            raise DegenerateDataError(f"realization {i} constant over mask")
        zf = (vals - inmask.mean()) / sd
        for j, z in enumerate(zs):
            s = _max_cluster_size_values(zf, flags, z, config.connectivity, config.sided)
            hists[j][s] += 1
    return hists


def run_simulation(config: SimConfig, n_jobs: int = 1,
                   start_index: int = 0) -> MaxSizeTable:
    """Monte Carlo max-cluster-size table for ``config``.

    Realization i uses the Philox key (mix64(master_seed) << 64) | i for
    i in [start_index, start_index + n_iter), so batches with disjoint index
    ranges are statistically independent and any worker split yields an
    identical table.
    """
    plan = _plan_for(config)  # parent copy, for metadata
    n = config.n_iter
    if n_jobs <= 1:
        partials = [_sim_chunk(config, start_index, start_index + n)]
    else:
        n_chunks = min(max(4 * n_jobs, 1), n)
        bounds = np.linspace(start_index, start_index + n, n_chunks + 1).astype(int)
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=n_jobs, mp_context=ctx) as ex:
            partials = list(
                ex.map(_sim_chunk, [config] * n_chunks, bounds[:-1], bounds[1:])
            )
    hists = [sum(parts) for parts in zip(*partials)]
    counts = {p: h for p, h in zip(config.pthr, hists)}
    g = config.grid
    metadata = {
        "acf_a": config.params.a,
        "acf_b": config.params.b,
        "acf_c": config.params.c,
        "grid": f"{g.nx} {g.ny} {g.nz}",
        "spacing_mm": f"{g.dx:g} {g.dy:g} {g.dz:g}",
        "mask_voxels": config.in_count,
        "n_iter": n,
        "start_index": start_index,
        "seed": config.master_seed,
        "athr": config.athr,
        "connectivity": f"NN{int(config.connectivity)}",
        "sided": config.sided.value,
        "clipped_spectral_mass": plan.clipped_mass,
    }
    return MaxSizeTable(config.pthr, counts, n, metadata)


def threshold_from_table(table: MaxSizeTable, athr: float) -> ThresholdTable:
    """Integer cluster-size thresholds at familywise rate ``athr``.

    Per rate: k = floor(athr * n_iter), threshold = k-th largest max size,
    incremented by one when more than k realizations reach it, so that
    P(max >= threshold) <= athr on the simulated sample.
    """
    if not (0.0 < athr < 1.0):
        raise ValueError(f"athr must be in (0, 1), got {athr}")
    k = math.floor(athr * table.n_iter)
    if k < 1:
        raise ValueError(f"athr * n_iter = {athr * table.n_iter:.3g} < 1")
    voxels = []
    for p in table.pthr:
        t = table.kth_largest(p, k)
        if table.n_at_least(p, t) > k:
            t += 1
        voxels.append(int(t))
    meta = dict(table.metadata)
    meta["athr"] = athr
    vol = None
    spacing = meta.get("spacing_mm")
    if spacing:
        dx, dy, dz = (float(v) for v in spacing.split())
        vol = dx * dy * dz
    mm3 = tuple(float(v) * vol if vol is not None else float("nan") for v in voxels)
    return ThresholdTable(table.pthr, tuple(voxels), mm3, meta)


def clustsim(config: SimConfig, n_jobs: int = 1, out_path=None) -> ThresholdTable:
    """run_simulation + threshold_from_table, optionally writing the CSV."""
    table = run_simulation(config, n_jobs=n_jobs)
    thr = threshold_from_table(table, config.athr)
    if out_path is not None:
        thr.to_csv(out_path)
    return thr


def false_positive_rate(table: MaxSizeTable, p: float, threshold_voxels: int) -> float:
    """Fraction of realizations whose max cluster reaches the threshold."""
    return table.n_at_least(p, threshold_voxels) / table.n_iter


def heldout_config(config: SimConfig, n_heldout: int) -> tuple[SimConfig, int]:
    """Config + start index for a fresh batch disjoint from the main run."""
    return replace(config, n_iter=n_heldout), config.n_iter
