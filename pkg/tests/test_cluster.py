import numpy as np
import pytest

from acfsim.cluster import (
    ClusterSet,
    Connectivity,
    Sidedness,
    find_clusters,
    max_cluster_size,
    z_threshold_from_p,
)
from acfsim.grid import Mask, ScalarField, VolumeGrid

from oracles import (
    brute_force_components,
    flood_components,
    neighbor_offsets,
    quantile_z_oracle,
)


# ---------------------------------------------------------------------------
# voxel threshold


def test_z_threshold_against_bisection_oracle():
    assert z_threshold_from_p(0.5) == pytest.approx(0.0, abs=1e-12)
    for p in (0.1, 0.05, 0.01, 0.005, 0.002, 0.001, 1e-4):
        assert abs(z_threshold_from_p(p) - quantile_z_oracle(p)) < 1e-9
    # two-sided rate p splits over both tails
    for p in (0.1, 0.01, 0.001):
        assert z_threshold_from_p(p, Sidedness.TWO) == pytest.approx(
            z_threshold_from_p(p / 2.0), abs=1e-12)
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError):
            z_threshold_from_p(bad)


# ---------------------------------------------------------------------------
# connectivity and sidedness


def test_connectivity_offsets():
    assert [c.n_neighbors for c in Connectivity] == [6, 18, 26]
    for conn, n_half in [(Connectivity.NN1, 3), (Connectivity.NN2, 9),
                         (Connectivity.NN3, 13)]:
        half = conn.half_offsets()
        assert len(half) == n_half
        for ox, oy, oz in half:
            assert (oz > 0) or (oz == 0 and oy > 0) or (oz == 0 and oy == 0
                                                        and ox > 0)
        full = {tuple(o) for o in half} | {(-x, -y, -z) for x, y, z in half}
        assert len(full) == conn.n_neighbors
        assert full == set(neighbor_offsets(int(conn)))


def test_connectivity_parse():
    assert Connectivity.parse(1) is Connectivity.NN1
    assert Connectivity.parse("2") is Connectivity.NN2
    assert Connectivity.parse(Connectivity.NN3) is Connectivity.NN3
    for bad in (0, 4, "x", None):
        with pytest.raises(ValueError):
            Connectivity.parse(bad)


def test_sidedness_parse():
    for v in ("one", "1", "one-sided", "ONE", Sidedness.ONE):
        assert Sidedness.parse(v) is Sidedness.ONE
    for v in ("two", "2", "2-sided", Sidedness.TWO):
        assert Sidedness.parse(v) is Sidedness.TWO
    with pytest.raises(ValueError):
        Sidedness.parse("three")


# ---------------------------------------------------------------------------
# component extraction


def _lin(coord, shape):
    ix, iy, iz = coord
    return ix + shape[0] * (iy + shape[1] * iz)


def _as_membership(cluster_set, shape=None):
    return {frozenset(int(i) for i in c.indices) for c in cluster_set.clusters}


def test_clusters_match_both_component_oracles():
    g = VolumeGrid(6, 6, 6, 1.0, 1.0, 1.0)
    rng = np.random.default_rng(31)
    for trial in range(30):
        occupied = rng.uniform(size=g.shape) < 0.3
        values = np.where(occupied, 1.0, -1.0)
        field = ScalarField(g, values)
        coords = [tuple(int(v) for v in c) for c in np.argwhere(occupied)]
        for level in (1, 2, 3):
            got = find_clusters(field, Mask.full(g), 1.0, level)
            expect = {frozenset(_lin(c, g.shape) for c in comp)
                      for comp in brute_force_components(coords, level)}
            flood = {frozenset(_lin(c, g.shape) for c in comp)
                     for comp in flood_components(coords, level)}
            assert expect == flood
            assert _as_membership(got) == expect
            assert got.n_suprathreshold == int(occupied.sum())


def test_threshold_is_inclusive():
    g = VolumeGrid(4, 4, 4, 1.0, 1.0, 1.0)
    values = np.zeros(g.shape)
    values[1, 1, 1] = 2.5  # exactly at threshold
    got = find_clusters(ScalarField(g, values), Mask.full(g), 2.5)
    assert got.sizes() == [1]
    below = find_clusters(ScalarField(g, values), Mask.full(g),
                          np.nextafter(2.5, 4.0))
    assert below.sizes() == []


def test_two_sided_merges_signs():
    g = VolumeGrid(5, 4, 4, 1.0, 1.0, 1.0)
    values = np.zeros(g.shape)
    values[1, 1, 1] = 3.0
    values[2, 1, 1] = -3.0
    field = ScalarField(g, values)
    one = find_clusters(field, Mask.full(g), 2.0, sided=Sidedness.ONE)
    assert one.sizes() == [1]
    two = find_clusters(field, Mask.full(g), 2.0, sided="two")
    assert two.sizes() == [2]
    # two-sided peak maximizes |value|; tie resolved to first member
    assert two.clusters[0].peak_index == _lin((1, 1, 1), g.shape)


def test_mask_excludes_voxels():
    g = VolumeGrid(4, 4, 4, 1.0, 1.0, 1.0)
    values = np.full(g.shape, 9.0)
    flags = np.zeros(g.shape, dtype=bool)
    flags[:2, :1, :1] = True
    got = find_clusters(ScalarField(g, values), Mask(g, flags), 1.0)
    assert got.sizes() == [2]


def test_cluster_ordering_and_peaks():
    g = VolumeGrid(10, 3, 3, 1.0, 1.0, 1.0)
    values = np.zeros(g.shape)
    # size-2 cluster starting at x=6, size-2 cluster at x=0, size-3 at x=2
    values[6:8, 0, 0] = [4.0, 5.0]
    values[0:2, 0, 0] = [7.0, 6.0]
    values[2:5, 1, 1] = [1.5, 9.0, 9.0]
    got = find_clusters(ScalarField(g, values), Mask.full(g), 1.0,
                        Connectivity.NN1)
    assert got.sizes() == [3, 2, 2]
    # equal sizes tie-break on smallest member linear index
    assert int(got.clusters[1].indices[0]) == _lin((0, 0, 0), g.shape)
    assert int(got.clusters[2].indices[0]) == _lin((6, 0, 0), g.shape)
    assert got.clusters[1].peak_index == _lin((0, 0, 0), g.shape)
    assert got.clusters[2].peak_index == _lin((7, 0, 0), g.shape)
    # equal peak values resolve to the first (smallest index) occurrence
    assert got.clusters[0].peak_index == _lin((3, 1, 1), g.shape)
    assert got.max_size() == 3


def test_member_indices_are_sorted_x_fastest():
    g = VolumeGrid(3, 3, 3, 1.0, 1.0, 1.0)
    rng = np.random.default_rng(32)
    values = rng.normal(size=g.shape)
    got = find_clusters(ScalarField(g, values), Mask.full(g), 0.0, 3)
    ref = np.arange(g.n_voxels).reshape(g.shape, order="F")
    member_union = sorted(int(i) for c in got.clusters for i in c.indices)
    expect = sorted(int(ref[ix, iy, iz])
                    for ix, iy, iz in np.argwhere(values >= 0.0))
    assert member_union == expect
    for c in got.clusters:
        assert np.all(np.diff(c.indices) > 0)


def test_max_cluster_size_agrees_with_full_extraction():
    g = VolumeGrid(7, 6, 5, 1.0, 1.0, 1.0)
    rng = np.random.default_rng(33)
    for _ in range(20):
        values = rng.normal(size=g.shape)
        flags = rng.uniform(size=g.shape) < 0.8
        field, mask = ScalarField(g, values), Mask(g, flags)
        for level in (1, 2, 3):
            assert max_cluster_size(field, mask, 0.8, level) == \
                find_clusters(field, mask, 0.8, level).max_size()


def test_empty_result_and_bad_threshold():
    g = VolumeGrid(4, 4, 4, 1.0, 1.0, 1.0)
    field = ScalarField(g, np.zeros(g.shape))
    got = find_clusters(field, Mask.full(g), 1.0)
    assert got.clusters == ()
    assert got.sizes() == [] and got.max_size() == 0
    assert got.n_suprathreshold == 0
    assert max_cluster_size(field, Mask.full(g), 1.0) == 0
    with pytest.raises(ValueError):
        find_clusters(field, Mask.full(g), float("nan"))
    with pytest.raises(ValueError):
        max_cluster_size(field, Mask.full(g), float("inf"))


def test_cluster_table_csv(tmp_path):
    g = VolumeGrid(6, 3, 3, 1.0, 1.0, 1.0)
    values = np.zeros(g.shape)
    values[0:3, 0, 0] = 2.0
    values[5, 2, 2] = 4.0
    got = find_clusters(ScalarField(g, values), Mask.full(g), 1.5)
    path = tmp_path / "clusters.csv"
    got.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "cluster_id,size_voxels,peak_linear_index"
    assert lines[1] == f"1,3,{_lin((0, 0, 0), g.shape)}"
    assert lines[2] == f"2,1,{_lin((5, 2, 2), g.shape)}"
