"""Minimal single-file NIfTI-1 (.nii) reader/writer.

Scope is deliberately narrow: uncompressed float32 data, 3-D or 4-D, axis
order x-fastest on disk, axis-aligned grids only (no obliques). pixdim carries
the voxel spacing and an sform with a diagonal rotation part carries the
origin. Anything else is rejected rather than guessed at.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .grid import ScalarField, Series4D, VolumeGrid

_HDR_FMT = (
    "i 10s 18s i h c c 8h 3f h h h h 8f f f f h c c f f f f i i 80s 24s "
    "h h 3f 3f 4f 4f 4f 16s 4s"
)
_HDR_SIZE = 348
_DT_FLOAT32 = 16


def _pack_header(grid: VolumeGrid, nt: int, byteorder: str = "<") -> bytes:
    dim = [3 if nt == 1 else 4, grid.nx, grid.ny, grid.nz, nt, 1, 1, 1]
    pixdim = [1.0, grid.dx, grid.dy, grid.dz, 1.0, 0.0, 0.0, 0.0]
    srow_x = [grid.dx, 0.0, 0.0, grid.origin[0]]
    srow_y = [0.0, grid.dy, 0.0, grid.origin[1]]
    srow_z = [0.0, 0.0, grid.dz, grid.origin[2]]
    packed = struct.pack(
        byteorder + _HDR_FMT,
        _HDR_SIZE,          # sizeof_hdr
        b"", b"",           # data_type, db_name (unused)
        0, 0, b"r", b"\0",  # extents, session_error, regular, dim_info
        *dim,
        0.0, 0.0, 0.0,      # intent_p1..p3
        0,                  # intent_code
        _DT_FLOAT32,        # datatype
        32,                 # bitpix
        0,                  # slice_start
        *pixdim,
        352.0,              # vox_offset
        1.0, 0.0,           # scl_slope, scl_inter
        0, b"\0",           # slice_end, slice_code
        bytes([10]),        # xyzt_units: mm | sec
        0.0, 0.0, 0.0, 0.0, # cal_max, cal_min, slice_duration, toffset
        0, 0,               # glmax, glmin
        b"acfsim", b"",     # descrip, aux_file
        0, 1,               # qform_code, sform_code
        0.0, 0.0, 0.0,      # quatern_b, c, d
        0.0, 0.0, 0.0,      # qoffset_x, y, z
        *srow_x, *srow_y, *srow_z,
        b"",                # intent_name
        b"n+1\0",           # magic
    )
    assert len(packed) == _HDR_SIZE
    return packed


def write_volume(obj, path) -> None:
    """Write a ScalarField (3-D) or Series4D (4-D) as a float32 .nii file."""
    if isinstance(obj, ScalarField):
        grid, data, nt = obj.grid, obj.values[..., None], 1
    elif isinstance(obj, Series4D):
        grid, data, nt = obj.grid, obj.data, obj.n_frames
    else:
        raise TypeError("expected ScalarField or Series4D")
    with open(path, "wb") as f:
        f.write(_pack_header(grid, nt))
        f.write(b"\0\0\0\0")  # pad to vox_offset 352
        f.write(np.asarray(data, dtype="<f4").ravel(order="F").tobytes())


def read_volume(path):
    """Read a .nii file written by this module (or compatible).

    Returns ScalarField for 3-D data, Series4D for 4-D.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HDR_SIZE + 4:
        raise DataError(f"{path}: too short to be a NIfTI-1 file")

    byteorder = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != _HDR_SIZE:
        byteorder = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != _HDR_SIZE:
            raise DataError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
    fields = struct.unpack_from(byteorder + _HDR_FMT, raw, 0)

    magic = fields[-1]
    if magic[:3] != b"n+1":
        raise DataError(f"{path}: unsupported magic {magic!r}, need single-file n+1")
    dim = fields[7:15]
    ndim = dim[0]
    if ndim not in (3, 4):
        raise DataError(f"{path}: only 3-D/4-D volumes supported, got dim[0]={ndim}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    nt = dim[4] if ndim == 4 else 1
    datatype = fields[19]
    if datatype != _DT_FLOAT32:
        raise DataError(f"{path}: only float32 data supported, got datatype={datatype}")
    pixdim = fields[22:30]
    vox_offset = int(fields[30])
    scl_slope, scl_inter = fields[31], fields[32]
    sform_code = fields[45]
    srow = np.array(fields[52:64], dtype=float).reshape(3, 4)

    origin = (0.0, 0.0, 0.0)
    if sform_code > 0:
        rot = srow[:, :3]
        offdiag = rot - np.diag(np.diag(rot))
        if np.max(np.abs(offdiag)) > 1e-4 * max(1.0, np.max(np.abs(rot))):
            raise DataError(f"{path}: oblique/rotated grids not supported")
        if np.any(np.diag(rot) <= 0):
            raise DataError(f"{path}: flipped axes not supported")
        origin = tuple(float(v) for v in srow[:, 3])

    grid = VolumeGrid(nx, ny, nz, float(pixdim[1]), float(pixdim[2]), float(pixdim[3]),
                      origin)
    n_values = nx * ny * nz * nt
    if len(raw) < vox_offset + 4 * n_values:
        raise DataError(f"{path}: truncated data section")
    data = np.frombuffer(raw, dtype=byteorder + "f4", count=n_values, offset=vox_offset)
    data = data.astype(float).reshape((nx, ny, nz, nt), order="F")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data * slope + scl_inter

    if ndim == 3:
        return ScalarField(grid, data[:, :, :, 0])
    return Series4D(grid, data)


def read_mask(path, threshold: float = 0.0):
    """Read a volume and binarize it (> threshold) into a Mask."""
    from .grid import Mask

    vol = read_volume(path)
    if isinstance(vol, Series4D):
        raise DataError(f"{path}: mask must be a 3-D volume")
    return Mask(vol.grid, vol.values > threshold)
