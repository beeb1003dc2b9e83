import numpy as np
import pytest

from acfsim.errors import EmptyMaskError, GridMismatchError, InvalidGridError
from acfsim.grid import (
    Mask,
    ScalarField,
    Series4D,
    VolumeGrid,
    blur_series_in_mask,
    export_slice_csv,
    gaussian_blur_in_mask,
    gaussian_kernel_1d,
    resample,
    resample_mask,
    resample_series,
)

from oracles import brute_force_blur3d


def rand_field(grid, seed, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return ScalarField(grid, rng.uniform(lo, hi, grid.shape))


# ---------------------------------------------------------------------------
# geometry


def test_grid_rejects_bad_dims_and_spacing():
    with pytest.raises(InvalidGridError):
        VolumeGrid(0, 4, 4, 1.0, 1.0, 1.0)
    with pytest.raises(InvalidGridError):
        VolumeGrid(4, 4, 4, 1.0, -2.0, 1.0)
    with pytest.raises(InvalidGridError):
        VolumeGrid(4, 4, 4, 1.0, 1.0, 0.0)
    with pytest.raises(InvalidGridError):
        VolumeGrid(4, 4, 4, 1.0, 1.0, 1.0, origin=(0.0, 0.0))


def test_grid_coords_and_volume():
    g = VolumeGrid(4, 3, 2, 1.5, 2.0, 2.5, origin=(-1.0, 0.5, 3.0))
    assert g.shape == (4, 3, 2)
    assert g.n_voxels == 24
    assert g.voxel_volume() == 1.5 * 2.0 * 2.5
    assert g.extent_mm() == (6.0, 6.0, 5.0)
    np.testing.assert_allclose(g.axis_coords(0), [-1.0, 0.5, 2.0, 3.5])
    np.testing.assert_allclose(g.axis_coords(2), [3.0, 5.5])


def test_linear_index_is_x_fastest():
    g = VolumeGrid(3, 4, 5, 1.0, 1.0, 1.0)
    vol = np.arange(g.n_voxels).reshape(g.shape, order="F")
    for ix, iy, iz in [(0, 0, 0), (2, 0, 0), (0, 3, 4), (1, 2, 3)]:
        assert g.linear_index(ix, iy, iz) == vol[ix, iy, iz]
    f = ScalarField(g, vol.astype(float))
    np.testing.assert_array_equal(f.flat_values(), np.arange(g.n_voxels))


def test_isotropic_like_dims_and_containment():
    src = VolumeGrid(20, 20, 15, 3.0, 3.0, 4.0)
    assert VolumeGrid.isotropic_like(src, 1.0).shape == (58, 58, 57)
    assert VolumeGrid.isotropic_like(src, 2.0).shape == (29, 29, 29)
    assert VolumeGrid.isotropic_like(src, 3.0).shape == (20, 20, 19)
    for delta in (1.0, 1.7, 2.0, 3.0):
        tgt = VolumeGrid.isotropic_like(src, delta)
        for a in range(3):
            span = (src.shape[a] - 1) * src.spacing[a]
            assert (tgt.shape[a] - 1) * delta <= span + 1e-9


def test_field_and_series_validation():
    g = VolumeGrid(3, 3, 3, 1.0, 1.0, 1.0)
    with pytest.raises(InvalidGridError):
        ScalarField(g, np.zeros((3, 3, 2)))
    bad = np.zeros(g.shape)
    bad[1, 1, 1] = np.nan
    with pytest.raises(InvalidGridError):
        ScalarField(g, bad)
    with pytest.raises(InvalidGridError):
        Series4D(g, np.zeros((3, 3, 3)))
    with pytest.raises(InvalidGridError):
        Series4D(g, np.zeros((3, 3, 3, 0)))
    other = VolumeGrid(3, 3, 3, 2.0, 1.0, 1.0)
    with pytest.raises(GridMismatchError):
        Series4D.from_frames([ScalarField(g, np.zeros(g.shape)),
                              ScalarField(other, np.zeros(other.shape))])
    s = Series4D(g, np.random.default_rng(0).normal(size=g.shape + (4,)))
    assert s.n_frames == 4
    np.testing.assert_array_equal(s.frame(2).values, s.data[:, :, :, 2])


def test_mask_basics_and_ellipsoid():
    g = VolumeGrid(9, 9, 9, 1.0, 1.0, 1.0)
    m = Mask.full(g)
    assert m.in_count == g.n_voxels
    ell = Mask.ellipsoid(g)
    assert ell.flags[4, 4, 4]           # center in
    assert not ell.flags[0, 0, 0]       # corner out
    assert 0 < ell.in_count < g.n_voxels
    half = Mask.ellipsoid(g, fraction=0.5)
    assert half.in_count < ell.in_count
    assert np.all(~half.flags | ell.flags)
    with pytest.raises(InvalidGridError):
        Mask(g, np.ones((2, 2, 2)))


# ---------------------------------------------------------------------------
# resampling


def test_resample_identity_is_exact():
    g = VolumeGrid(6, 5, 4, 1.0, 2.0, 1.5, origin=(3.0, -1.0, 0.5))
    f = rand_field(g, 1)
    out, count = resample(f, g, return_count=True)
    np.testing.assert_array_equal(out.values, f.values)
    assert count == 0


def test_resample_constant_stays_constant():
    g = VolumeGrid(6, 6, 6, 2.0, 2.0, 2.0)
    f = ScalarField(g, np.full(g.shape, 3.25))
    tgt = VolumeGrid(9, 9, 9, 1.1, 1.1, 1.1, origin=(0.1, 0.2, 0.3))
    out = resample(f, tgt)
    np.testing.assert_allclose(out.values, 3.25, rtol=0, atol=1e-12)


def test_resample_reproduces_linear_ramps():
    g = VolumeGrid(8, 7, 6, 1.5, 2.0, 1.0, origin=(-2.0, 1.0, 0.0))
    coords = [g.axis_coords(a) for a in range(3)]
    vals = (2.0 * coords[0][:, None, None] + 3.0 * coords[1][None, :, None]
            - coords[2][None, None, :] + 5.0)
    f = ScalarField(g, vals)
    tgt = VolumeGrid(10, 9, 8, 0.9, 1.1, 0.6, origin=(-1.5, 1.2, 0.1))
    out = resample(f, tgt)
    tc = [tgt.axis_coords(a) for a in range(3)]
    expect = (2.0 * tc[0][:, None, None] + 3.0 * tc[1][None, :, None]
              - tc[2][None, None, :] + 5.0)
    np.testing.assert_allclose(out.values, expect, rtol=0, atol=1e-9)


def test_resample_out_of_extent_is_zero_and_counted():
    g = VolumeGrid(5, 5, 5, 2.0, 2.0, 2.0)
    f = rand_field(g, 2, lo=1.0, hi=2.0)  # strictly positive inside
    tgt = VolumeGrid(8, 8, 8, 2.0, 2.0, 2.0, origin=(-3.0, -3.0, -3.0))
    out, count = resample(f, tgt, return_count=True)
    inside = np.ones(tgt.shape, dtype=bool)
    for a in range(3):
        fi = (tgt.axis_coords(a) - g.origin[a]) / g.spacing[a]
        ok = (fi >= 0.0) & (fi <= g.shape[a] - 1)
        shape = [1, 1, 1]
        shape[a] = -1
        inside &= ok.reshape(shape)
    assert count == int((~inside).sum())
    assert count > 0
    assert np.all(out.values[~inside] == 0.0)
    assert np.all(out.values[inside] > 0.0)


def test_nearest_resample_matches_per_voxel_rule():
    g = VolumeGrid(5, 4, 3, 1.0, 1.5, 2.0, origin=(0.5, -1.0, 2.0))
    f = rand_field(g, 3)
    tgt = VolumeGrid(7, 6, 5, 0.8, 1.1, 1.3, origin=(0.0, -1.6, 1.4))
    out = resample(f, tgt, method="nearest")
    for i in range(tgt.nx):
        for j in range(tgt.ny):
            for k in range(tgt.nz):
                expect = 0.0
                idx = []
                ok = True
                pos = (tgt.origin[0] + i * tgt.dx, tgt.origin[1] + j * tgt.dy,
                       tgt.origin[2] + k * tgt.dz)
                for a in range(3):
                    fi = (pos[a] - g.origin[a]) / g.spacing[a]
                    if not (-0.5 <= fi < g.shape[a] - 0.5):
                        ok = False
                        break
                    idx.append(int(np.floor(fi + 0.5)))
                if ok:
                    expect = f.values[idx[0], idx[1], idx[2]]
                assert out.values[i, j, k] == expect


def test_resample_rejects_unknown_method():
    g = VolumeGrid(3, 3, 3, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        resample(rand_field(g, 0), g, method="cubic")


def test_resample_mask_nearest_and_empty():
    g = VolumeGrid(6, 6, 6, 2.0, 2.0, 2.0)
    flags = np.zeros(g.shape, dtype=bool)
    flags[:3] = True
    m = Mask(g, flags)
    tgt = VolumeGrid(12, 12, 12, 1.0, 1.0, 1.0)
    out = resample_mask(m, tgt)
    for i in range(tgt.nx):
        for j in range(tgt.ny):
            for k in range(tgt.nz):
                expect = False
                idx = []
                pos = (i * tgt.dx, j * tgt.dy, k * tgt.dz)
                for a in range(3):
                    fi = (pos[a] - g.origin[a]) / g.spacing[a]
                    if not (-0.5 <= fi < g.shape[a] - 0.5):
                        idx = None
                        break
                    idx.append(int(np.floor(fi + 0.5)))
                if idx is not None:
                    expect = bool(m.flags[idx[0], idx[1], idx[2]])
                assert out.flags[i, j, k] == expect
    far = VolumeGrid(4, 4, 4, 1.0, 1.0, 1.0, origin=(100.0, 0.0, 0.0))
    with pytest.raises(EmptyMaskError):
        resample_mask(m, far)


def test_resample_series_applies_frame_wise():
    g = VolumeGrid(5, 5, 5, 2.0, 2.0, 2.0)
    rng = np.random.default_rng(4)
    s = Series4D(g, rng.normal(size=g.shape + (3,)))
    tgt = VolumeGrid(7, 7, 7, 1.4, 1.4, 1.4)
    out = resample_series(s, tgt)
    for t in range(3):
        np.testing.assert_array_equal(out.frame(t).values,
                                      resample(s.frame(t), tgt).values)


# ---------------------------------------------------------------------------
# blurring


def test_gaussian_kernel_shape_and_normalization():
    k = gaussian_kernel_1d(2.0, 1.0)
    assert k.size == 2 * 8 + 1  # radius ceil(4*2/1)
    assert abs(k.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(k, k[::-1], rtol=0, atol=0)
    assert k[k.size // 2] == k.max()
    np.testing.assert_array_equal(gaussian_kernel_1d(0.0, 1.0), [1.0])


def test_blur_matches_brute_force_on_random_mask():
    g = VolumeGrid(15, 14, 13, 1.0, 1.3, 0.8)
    rng = np.random.default_rng(5)
    f = ScalarField(g, rng.normal(size=g.shape))
    m = Mask(g, rng.uniform(size=g.shape) < 0.7)
    out = gaussian_blur_in_mask(f, 3.0, m)
    expect = brute_force_blur3d(f.values, m.flags, g.spacing, 3.0)
    np.testing.assert_allclose(out.values, expect, rtol=0, atol=1e-10)


def test_blur_impulse_full_mask_matches_brute_force():
    g = VolumeGrid(33, 33, 33, 2.0, 2.0, 2.0)
    vals = np.zeros(g.shape)
    vals[16, 16, 16] = 1.0
    out = gaussian_blur_in_mask(ScalarField(g, vals), 8.0, Mask.full(g))
    expect = brute_force_blur3d(vals, np.ones(g.shape, bool), g.spacing, 8.0)
    np.testing.assert_allclose(out.values, expect, rtol=0, atol=1e-10)
    # symmetric response around the impulse
    np.testing.assert_allclose(out.values, out.values[::-1, :, :], atol=1e-14)
    np.testing.assert_allclose(out.values, out.values[:, :, ::-1], atol=1e-14)


def test_blur_is_linear():
    g = VolumeGrid(12, 12, 12, 1.5, 1.5, 1.5)
    rng = np.random.default_rng(6)
    m = Mask(g, rng.uniform(size=g.shape) < 0.8)
    f = ScalarField(g, rng.normal(size=g.shape))
    h = ScalarField(g, rng.normal(size=g.shape))
    combo = ScalarField(g, 2.0 * f.values - 0.5 * h.values)
    lhs = gaussian_blur_in_mask(combo, 4.0, m).values
    rhs = (2.0 * gaussian_blur_in_mask(f, 4.0, m).values
           - 0.5 * gaussian_blur_in_mask(h, 4.0, m).values)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


def test_blur_zero_width_copies():
    g = VolumeGrid(8, 8, 8, 1.0, 1.0, 1.0)
    f = rand_field(g, 7)
    out = gaussian_blur_in_mask(f, 0.0, Mask.full(g))
    assert out is not f
    assert out.values is not f.values
    np.testing.assert_array_equal(out.values, f.values)


def test_blur_preserves_sum_for_interior_support():
    # support at least two kernel radii from every face, full mask: the
    # blurred mass never reaches voxels whose normalization weight is < 1,
    # so the total is conserved
    g = VolumeGrid(48, 48, 48, 1.0, 1.0, 1.0)
    rng = np.random.default_rng(8)
    vals = np.zeros(g.shape)
    vals[19:29, 19:29, 19:29] = rng.uniform(0.5, 1.5, size=(10, 10, 10))
    out = gaussian_blur_in_mask(ScalarField(g, vals), 5.0, Mask.full(g))
    total_in = vals.sum()
    assert abs(out.values.sum() - total_in) <= 1e-8 * abs(total_in)


def test_blur_constant_field_fixed_point_and_untouched_outside():
    g = VolumeGrid(10, 10, 10, 2.0, 2.0, 2.0)
    rng = np.random.default_rng(9)
    m = Mask(g, rng.uniform(size=g.shape) < 0.6)
    vals = np.where(m.flags, 7.5, rng.normal(size=g.shape))
    out = gaussian_blur_in_mask(ScalarField(g, vals), 6.0, m)
    np.testing.assert_allclose(out.values[m.flags], 7.5, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(out.values[~m.flags], vals[~m.flags])


def test_blur_ignores_out_of_mask_values():
    g = VolumeGrid(9, 9, 9, 1.0, 1.0, 1.0)
    rng = np.random.default_rng(10)
    m = Mask(g, rng.uniform(size=g.shape) < 0.5)
    base = rng.normal(size=g.shape)
    noisy = base.copy()
    noisy[~m.flags] = 1e6
    a = gaussian_blur_in_mask(ScalarField(g, base), 3.0, m)
    b = gaussian_blur_in_mask(ScalarField(g, noisy), 3.0, m)
    np.testing.assert_array_equal(a.values[m.flags], b.values[m.flags])


def test_blur_errors():
    g = VolumeGrid(5, 5, 5, 1.0, 1.0, 1.0)
    f = rand_field(g, 11)
    with pytest.raises(ValueError):
        gaussian_blur_in_mask(f, -1.0, Mask.full(g))
    with pytest.raises(EmptyMaskError):
        gaussian_blur_in_mask(f, 2.0, Mask(g, np.zeros(g.shape, bool)))
    other = VolumeGrid(5, 5, 5, 2.0, 1.0, 1.0)
    with pytest.raises(GridMismatchError):
        gaussian_blur_in_mask(f, 2.0, Mask.full(other))


def test_blur_series_matches_frame_wise_blur():
    g = VolumeGrid(9, 8, 7, 1.0, 1.2, 1.4)
    rng = np.random.default_rng(12)
    s = Series4D(g, rng.normal(size=g.shape + (4,)))
    m = Mask(g, rng.uniform(size=g.shape) < 0.75)
    out = blur_series_in_mask(s, 4.0, m)
    for t in range(s.n_frames):
        expect = gaussian_blur_in_mask(s.frame(t), 4.0, m)
        np.testing.assert_array_equal(out.frame(t).values, expect.values)
    same = blur_series_in_mask(s, 0.0, m)
    np.testing.assert_array_equal(same.data, s.data)


def test_export_slice_csv_round_trip(tmp_path):
    g = VolumeGrid(4, 5, 6, 1.0, 1.0, 1.0)
    f = rand_field(g, 13)
    path = tmp_path / "slice.csv"
    export_slice_csv(f, 2, 3, path)
    back = np.loadtxt(path, delimiter=",")
    np.testing.assert_allclose(back, f.values[:, :, 3], rtol=1e-15)
    with pytest.raises(ValueError):
        export_slice_csv(f, 5, 0, path)
