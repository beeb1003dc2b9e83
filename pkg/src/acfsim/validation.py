"""Input validation helpers shared by the estimator facades and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import DataError, GridMismatchError
from .grid import Mask, ScalarField, Series4D, VolumeGrid


def check_probability(value, name: str) -> float:
    value = float(value)
    if not (0.0 < value < 1.0):
        raise ValueError(f"{name} must be in (0, 1), got {value}")
    return value


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def as_grid(grid) -> VolumeGrid:
    if isinstance(grid, VolumeGrid):
        return grid
    raise DataError(f"expected a VolumeGrid, got {type(grid).__name__}")


def as_series(X, grid: VolumeGrid | None = None) -> Series4D:
    """Coerce estimator input into a Series4D.

    Accepts Series4D, ScalarField (single frame), a (nx, ny, nz, nt) array
    with an explicit grid, or a list of ScalarFields.
    """
    if isinstance(X, Series4D):
        return X
    if isinstance(X, ScalarField):
        return Series4D(X.grid, X.values[..., None])
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], ScalarField):
        return Series4D.from_frames(X)
    arr = np.asarray(X)
    if arr.ndim == 4:
        if grid is None:
            raise DataError("a bare 4-D array needs an explicit grid")
        return Series4D(grid, arr)
    raise DataError(
        "X must be a Series4D, ScalarField(s), or a 4-D array with a grid"
    )


def as_mask(mask, grid: VolumeGrid) -> Mask:
    """Coerce to a Mask on ``grid``; None means the full grid."""
    if mask is None:
        return Mask.full(grid)
    if isinstance(mask, Mask):
        if mask.grid != grid:
            raise GridMismatchError("mask grid does not match data grid")
        return mask
    arr = np.asarray(mask)
    if arr.shape != grid.shape:
        raise GridMismatchError(
            f"mask shape {arr.shape} does not match grid {grid.shape}"
        )
    return Mask(grid, arr.astype(bool))


def as_acf_params(X):
    from .acf import AcfParams

    if isinstance(X, AcfParams):
        return X
    try:
        a, b, c = (float(v) for v in np.asarray(X).ravel())
    except (TypeError, ValueError) as e:
        raise DataError(f"expected AcfParams or a length-3 triple: {e}") from e
    return AcfParams(a, b, c)
