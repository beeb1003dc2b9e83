"""Volume geometry, fields, masks, resampling, and in-mask Gaussian blur.

Conventions used throughout the package:

* A grid's ``origin`` is the mm coordinate of the *center* of voxel (0, 0, 0);
  the center of voxel (i, j, k) is ``origin + (i*dx, j*dy, k*dz)``.
* Field arrays are indexed ``values[ix, iy, iz]``; the canonical linear index
  is x-fastest, ``ix + nx*(iy + ny*iz)``, i.e. Fortran raveling of that array.
* Grids, fields, and masks are immutable after construction. Operations return
  new objects and never write through to their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .errors import EmptyMaskError, GridMismatchError, InvalidGridError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class VolumeGrid:
    """Regular 3-D sampling grid in physical mm coordinates."""

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise InvalidGridError(f"grid dims must be >= 1, got {self.shape}")
        if min(self.dx, self.dy, self.dz) <= 0:
            raise InvalidGridError(f"voxel spacings must be > 0, got {self.spacing}")
        if len(self.origin) != 3:
            raise InvalidGridError("origin must have three components")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    def voxel_volume(self) -> float:
        return self.dx * self.dy * self.dz

    def extent_mm(self) -> tuple[float, float, float]:
        """Physical span including the half-voxel margin on each face."""
        return (self.nx * self.dx, self.ny * self.dy, self.nz * self.dz)

    def axis_coords(self, axis: int) -> np.ndarray:
        """mm coordinates of voxel centers along one axis."""
        n = self.shape[axis]
        d = self.spacing[axis]
        return self.origin[axis] + d * np.arange(n)

    def linear_index(self, ix, iy, iz):
        """Canonical x-fastest linear index."""
        return ix + self.nx * (iy + self.ny * iz)

    @classmethod
    def isotropic(cls, n: int, delta: float, origin=(0.0, 0.0, 0.0)) -> "VolumeGrid":
        return cls(n, n, n, delta, delta, delta, origin)

    @classmethod
    def isotropic_like(cls, source: "VolumeGrid", delta: float) -> "VolumeGrid":
        """Isotropic grid with step ``delta`` whose voxel centers stay inside
        the source's center span (so trilinear resampling never extrapolates).
        Shares the source origin."""
        dims = []
        for axis in range(3):
            span = (source.shape[axis] - 1) * source.spacing[axis]
            dims.append(int(math.floor(span / delta + 1e-9)) + 1)
        return cls(dims[0], dims[1], dims[2], delta, delta, delta, source.origin)


def _check_values(grid: VolumeGrid, values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise InvalidGridError(
            f"{name} shape {values.shape} does not match grid {grid.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise InvalidGridError(f"{name} contains non-finite values")
    return values


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One scalar value per voxel of a grid."""

    grid: VolumeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, "field"))

    def flat_values(self) -> np.ndarray:
        """Values in canonical x-fastest order."""
        return self.values.ravel(order="F")


@dataclass(frozen=True, eq=False)
class Mask:
    """Voxel inclusion flags on a grid."""

    grid: VolumeGrid
    flags: np.ndarray = field(repr=False)

    def __post_init__(self):
        flags = np.asarray(self.flags)
        if flags.shape != self.grid.shape:
            raise InvalidGridError(
                f"mask shape {flags.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "flags", flags.astype(bool))

    @property
    def in_count(self) -> int:
        return int(self.flags.sum())

    @classmethod
    def full(cls, grid: VolumeGrid) -> "Mask":
        return cls(grid, np.ones(grid.shape, dtype=bool))

    @classmethod
    def ellipsoid(cls, grid: VolumeGrid, fraction: float = 1.0) -> "Mask":
        """Axis-aligned ellipsoid inscribed in the grid extent, semi-axes
        scaled by ``fraction``."""
        cs = [grid.axis_coords(a) for a in range(3)]
        centers = [0.5 * (c[0] + c[-1]) for c in cs]
        semi = [max(0.5 * grid.extent_mm()[a] * fraction, 1e-9) for a in range(3)]
        xs = (cs[0] - centers[0]) / semi[0]
        ys = (cs[1] - centers[1]) / semi[1]
        zs = (cs[2] - centers[2]) / semi[2]
        r2 = (
            xs[:, None, None] ** 2
            + ys[None, :, None] ** 2
            + zs[None, None, :] ** 2
        )
        return cls(grid, r2 <= 1.0)


class Series4D:
    """An ordered stack of scalar fields sharing one grid.

    Internally a (nx, ny, nz, nt) array; ``frames`` views are produced on
    demand.
    """

    def __init__(self, grid: VolumeGrid, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        if data.ndim != 4 or data.shape[:3] != grid.shape:
            raise InvalidGridError(
                f"series shape {data.shape} does not match grid {grid.shape} + time"
            )
        if data.shape[3] < 1:
            raise InvalidGridError("series needs at least one frame")
        if not np.all(np.isfinite(data)):
            raise InvalidGridError("series contains non-finite values")
        self.grid = grid
        self.data = data

    @property
    def n_frames(self) -> int:
        return self.data.shape[3]

    def frame(self, t: int) -> ScalarField:
        return ScalarField(self.grid, self.data[:, :, :, t])

    @classmethod
    def from_frames(cls, frames) -> "Series4D":
        frames = list(frames)
        if not frames:
            raise InvalidGridError("series needs at least one frame")
        grid = frames[0].grid
        for f in frames[1:]:
            if f.grid != grid:
                raise GridMismatchError("all frames of a series must share one grid")
        return cls(grid, np.stack([f.values for f in frames], axis=3))


def check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


# ---------------------------------------------------------------------------
# resampling


def _fractional_indices(source: VolumeGrid, target: VolumeGrid, axis: int) -> np.ndarray:
    x = target.axis_coords(axis)
    return (x - source.origin[axis]) / source.spacing[axis]


def _trilinear_axis(fi: np.ndarray, n: int):
    i0 = np.floor(fi).astype(int)
    w = fi - i0
    valid = (fi >= 0.0) & (fi <= n - 1)
    i0c = np.clip(i0, 0, n - 1)
    i1c = np.clip(i0 + 1, 0, n - 1)
    return i0c, i1c, w, valid


def _nearest_axis(fi: np.ndarray, n: int):
    idx = np.floor(fi + 0.5).astype(int)
    valid = (fi >= -0.5) & (fi < n - 0.5)
    return np.clip(idx, 0, n - 1), valid


def resample(field: ScalarField, target: VolumeGrid, method: str = "trilinear",
             return_count: bool = False):
    """Resample a field onto ``target`` in physical mm coordinates.

    Target voxels whose sampling point falls outside the source extent get 0;
    their number is available via ``return_count=True``. No extrapolation.

    Parameters
    ----------
    field : ScalarField
    target : VolumeGrid
    method : 'trilinear' or 'nearest'
    return_count : also return the out-of-extent voxel count
    """
    src = field.grid
    vals = field.values
    fis = [_fractional_indices(src, target, a) for a in range(3)]

    if method == "trilinear":
        ax = [_trilinear_axis(fis[a], src.shape[a]) for a in range(3)]
        (x0, x1, wx, vx), (y0, y1, wy, vy), (z0, z1, wz, vz) = ax
        out = np.zeros(target.shape)
        # 8-corner gather; weights are outer products of the per-axis weights
        for cx, fx in ((x0, 1.0 - wx), (x1, wx)):
            wx3 = fx[:, None, None]
            for cy, fy in ((y0, 1.0 - wy), (y1, wy)):
                wy3 = fy[None, :, None]
                for cz, fz in ((z0, 1.0 - wz), (z1, wz)):
                    w = wx3 * wy3 * fz[None, None, :]
                    out += w * vals[np.ix_(cx, cy, cz)]
        valid = vx[:, None, None] & vy[None, :, None] & vz[None, None, :]
    elif method == "nearest":
        (x, vx), (y, vy), (z, vz) = [_nearest_axis(fis[a], src.shape[a]) for a in range(3)]
        out = vals[np.ix_(x, y, z)].copy()
        valid = vx[:, None, None] & vy[None, :, None] & vz[None, None, :]
    else:
        raise ValueError(f"unknown resampling method {method!r}")

    out[~valid] = 0.0
    result = ScalarField(target, out)
    if return_count:
        return result, int((~valid).sum())
    return result


def resample_series(series: Series4D, target: VolumeGrid, method: str = "trilinear") -> Series4D:
    frames = [resample(series.frame(t), target, method) for t in range(series.n_frames)]
    return Series4D.from_frames(frames)


def resample_mask(mask: Mask, target: VolumeGrid) -> Mask:
    """Nearest-neighbor resampling of inclusion flags onto ``target``.

    Raises EmptyMaskError if no target voxel lands inside the source mask.
    """
    src = mask.grid
    fis = [_fractional_indices(src, target, a) for a in range(3)]
    (x, vx), (y, vy), (z, vz) = [_nearest_axis(fis[a], src.shape[a]) for a in range(3)]
    flags = mask.flags[np.ix_(x, y, z)].copy()
    valid = vx[:, None, None] & vy[None, :, None] & vz[None, None, :]
    flags &= valid
    out = Mask(target, flags)
    if out.in_count == 0:
        raise EmptyMaskError("resampled mask is empty")
    return out


# ---------------------------------------------------------------------------
# in-mask Gaussian blur


def gaussian_kernel_1d(sigma_mm: float, spacing: float) -> np.ndarray:
    """Discrete Gaussian sampled at voxel centers, truncated at 4 sigma,
    renormalized to sum 1."""
    if sigma_mm <= 0:
        return np.ones(1)
    radius = int(math.ceil(4.0 * sigma_mm / spacing))
    x = np.arange(-radius, radius + 1) * spacing
    k = np.exp(-0.5 * (x / sigma_mm) ** 2)
    return k / k.sum()


def _separable_blur(values: np.ndarray, grid: VolumeGrid, sigma_mm: float) -> np.ndarray:
    out = values
    for axis in range(3):
        k = gaussian_kernel_1d(sigma_mm, grid.spacing[axis])
        if k.size > 1:
            out = convolve1d(out, k, axis=axis, mode="constant", cval=0.0)
    return np.asarray(out, dtype=float)


def gaussian_blur_in_mask(field: ScalarField, fwhm_mm: float, mask: Mask) -> ScalarField:
    """Separable Gaussian blur restricted to a mask.

    Out-of-mask voxels (and anything beyond the grid) contribute zero weight,
    and each in-mask output voxel renormalizes by the weight that actually
    landed in the mask. Out-of-mask voxels pass through unchanged.

    fwhm_mm = 0 returns a copy.
    """
    if fwhm_mm < 0:
        raise ValueError("fwhm_mm must be >= 0")
    check_same_grid(field, mask)
    if mask.in_count == 0:
        raise EmptyMaskError("blur mask is empty")
    if fwhm_mm == 0:
        return ScalarField(field.grid, field.values.copy())

    sigma = fwhm_mm * FWHM_TO_SIGMA
    m = mask.flags.astype(float)
    num = _separable_blur(field.values * m, field.grid, sigma)
    den = _separable_blur(m, field.grid, sigma)
    out = field.values.copy()
    inside = mask.flags
    out[inside] = num[inside] / den[inside]
    return ScalarField(field.grid, out)


def blur_series_in_mask(series: Series4D, fwhm_mm: float, mask: Mask) -> Series4D:
    """Frame-wise gaussian_blur_in_mask; the mask weight volume is shared
    across frames."""
    if fwhm_mm < 0:
        raise ValueError("fwhm_mm must be >= 0")
    check_same_grid(series, mask)
    if mask.in_count == 0:
        raise EmptyMaskError("blur mask is empty")
    if fwhm_mm == 0:
        return Series4D(series.grid, series.data.copy())
    sigma = fwhm_mm * FWHM_TO_SIGMA
    m = mask.flags.astype(float)
    den = _separable_blur(m, series.grid, sigma)
    inside = mask.flags
    out = series.data.copy()
    for t in range(series.n_frames):
        num = _separable_blur(series.data[:, :, :, t] * m, series.grid, sigma)
        out[inside, t] = num[inside] / den[inside]
    return Series4D(series.grid, out)


def export_slice_csv(field: ScalarField, axis: int, index: int, path) -> None:
    """Debug helper: write one slice of a field as CSV."""
    if axis not in (0, 1, 2):
        raise ValueError("axis must be 0, 1, or 2")
    sl = [slice(None)] * 3
    sl[axis] = index
    plane = field.values[tuple(sl)]
    np.savetxt(path, plane, delimiter=",", fmt="%.17g")
