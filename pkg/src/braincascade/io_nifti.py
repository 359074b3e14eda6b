"""Minimal NIfTI-1 reader and writer.

Supports single-file little-endian .nii (read also .nii.gz), 3D only, no
extensions, datatypes uint8 / int16 / float32. Written headers are bit-exact
per the NIfTI-1 layout: 348-byte header, 4 padding bytes, vox_offset 352.

On disk the first spatial dimension varies fastest (Fortran order, as per the
format); in memory volumes keep the package convention of axis 0 slowest.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from .volume import Kind, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

# NIfTI-1 datatype codes
DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

_DTYPES = {
    DT_UINT8: np.dtype("<u1"),
    DT_INT16: np.dtype("<i2"),
    DT_FLOAT32: np.dtype("<f4"),
}
_CODES = {"uint8": DT_UINT8, "int16": DT_INT16, "float32": DT_FLOAT32}


class NiftiError(Exception):
    """Malformed or unsupported NIfTI file."""


def _open_read(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_nifti(path, kind: Kind = Kind.INTENSITY) -> Volume:
    """Read a 3D volume from a .nii or .nii.gz file.

    Data is scaled by scl_slope/scl_inter when slope is nonzero. The kind tag
    comes from the caller; intensity by default.
    """
    with _open_read(path) as f:
        hdr = f.read(HEADER_SIZE)
        if len(hdr) < HEADER_SIZE:
            raise NiftiError(f"{path}: truncated header ({len(hdr)} bytes)")
        magic = hdr[344:348]
        if magic != MAGIC:
            raise NiftiError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        sizeof_hdr = struct.unpack_from("<i", hdr, 0)[0]
        if sizeof_hdr != HEADER_SIZE:
            raise NiftiError(f"{path}: sizeof_hdr={sizeof_hdr}, expected {HEADER_SIZE}")
        dim = struct.unpack_from("<8h", hdr, 40)
        ndim = dim[0]
        if not 1 <= ndim <= 3:
            raise NiftiError(f"{path}: only 3D volumes supported, dim[0]={ndim}")
        dims = tuple(dim[1 : ndim + 1]) + (1,) * (3 - ndim)
        if any(d <= 0 for d in dims):
            raise NiftiError(f"{path}: non-positive dims {dims}")
        datatype = struct.unpack_from("<h", hdr, 70)[0]
        if datatype not in _DTYPES:
            raise NiftiError(f"{path}: unsupported datatype code {datatype}")
        pixdim = struct.unpack_from("<8f", hdr, 76)
        spacing = tuple(p if p > 0 else 1.0 for p in pixdim[1:4])
        vox_offset = int(struct.unpack_from("<f", hdr, 108)[0])
        if vox_offset < VOX_OFFSET:
            raise NiftiError(f"{path}: vox_offset {vox_offset} < {VOX_OFFSET}")
        scl_slope, scl_inter = struct.unpack_from("<2f", hdr, 112)

        f.read(vox_offset - HEADER_SIZE)
        dtype = _DTYPES[datatype]
        nbytes = int(np.prod(dims)) * dtype.itemsize
        raw = f.read(nbytes)
        if len(raw) < nbytes:
            raise NiftiError(f"{path}: truncated data ({len(raw)} of {nbytes} bytes)")

    # file order: dims[0] fastest; internal order: axis 0 slowest
    data = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    if scl_slope != 0 and (scl_slope, scl_inter) != (1.0, 0.0):
        data = (data.astype(np.float32) * scl_slope + scl_inter).astype(np.float32)
    else:
        data = np.ascontiguousarray(data)
    return Volume(data, spacing, kind)


def write_nifti(vol: Volume, path, datatype: str | None = None) -> None:
    """Write a volume as an uncompressed single-file NIfTI-1 .nii.

    Default datatype: uint8 for masks and labels, float32 otherwise. Values
    not representable in the requested datatype are rejected.
    """
    if datatype is None:
        datatype = "uint8" if vol.kind in (Kind.MASK, Kind.LABEL) else "float32"
    if datatype not in _CODES:
        raise NiftiError(f"unsupported datatype {datatype!r}")
    code = _CODES[datatype]
    dtype = _DTYPES[code]

    data = vol.data
    if vol.kind is Kind.MASK and not np.isin(data, (0, 1)).all():
        raise NiftiError("mask volume contains values outside {0, 1}")
    if code in (DT_UINT8, DT_INT16):
        info = np.iinfo(dtype)
        if data.min() < info.min or data.max() > info.max:
            raise NiftiError(
                f"values [{data.min()}, {data.max()}] not representable as {datatype}"
            )
        if not np.issubdtype(data.dtype, np.integer) and not np.equal(np.mod(data, 1), 0).all():
            raise NiftiError(f"non-integer values cannot be written as {datatype}")

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *vol.dims, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)  # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, *vol.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    hdr[344:348] = MAGIC

    with open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(b"\x00\x00\x00\x00")  # extension flag: none
        f.write(np.asfortranarray(data.astype(dtype)).tobytes(order="F"))
