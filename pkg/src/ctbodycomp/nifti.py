"""NIfTI-1 single-file reader/writer for integer label volumes.

Only what a vertebra label volume needs: uint8/int16/uint16 voxels, affine
from the sform (qform quaternion as fallback, pixdim diagonal last), optional
gzip wrapping. Scale fields are ignored for integer labels.
"""

from __future__ import annotations

import gzip
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, DimensionMismatch, TruncatedVolume, UnsupportedDatatype

_HEADER_SIZE = 348
_MAGIC = b"n+1\x00"

_DTYPES = {2: np.uint8, 4: np.int16, 512: np.uint16}
_DTYPE_CODES = {np.dtype(np.uint8): (2, 8), np.dtype(np.int16): (4, 16),
                np.dtype(np.uint16): (512, 16)}


@dataclass(frozen=True)
class LabelVolume:
    """Integer label volume with a voxel-to-patient affine."""

    dims: tuple[int, int, int]
    voxels: np.ndarray  # shape (nx, ny, nz), integer dtype
    affine: np.ndarray  # 4x4 float64


def _quaternion_rotation(b: float, c: float, d: float) -> np.ndarray:
    """Rotation matrix from a unit quaternion with implicit positive a."""
    rem = 1.0 - (b * b + c * c + d * d)
    a = math.sqrt(rem) if rem > 0 else 0.0
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ],
        dtype=np.float64,
    )


def parse_nifti_labels(data: bytes) -> LabelVolume:
    """Parse .nii or .nii.gz bytes into a LabelVolume.

    Raises BadMagic, UnsupportedDatatype, DimensionMismatch, or
    TruncatedVolume; never a bare struct/zlib exception.
    """
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError, zlib.error) as exc:
            raise TruncatedVolume(f"gzip stream damaged: {exc}") from exc
    if len(data) < _HEADER_SIZE:
        raise TruncatedVolume(
            f"header needs {_HEADER_SIZE} bytes, got {len(data)}"
        )
    if data[344:348] != _MAGIC:
        raise BadMagic(f"magic {data[344:348]!r}, expected {_MAGIC!r}")
    (sizeof_hdr,) = struct.unpack_from("<i", data, 0)
    if sizeof_hdr != _HEADER_SIZE:
        raise BadMagic(f"sizeof_hdr {sizeof_hdr}, expected {_HEADER_SIZE}")

    dim = struct.unpack_from("<8h", data, 40)
    ndim = dim[0]
    if not (ndim == 3 or (ndim == 4 and dim[4] == 1)):
        raise DimensionMismatch(f"dim[0]={ndim} (dim={dim[1:5]}) unsupported")
    nx, ny, nz = int(dim[1]), int(dim[2]), int(dim[3])
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise DimensionMismatch(f"non-positive dims ({nx},{ny},{nz})")

    (datatype,) = struct.unpack_from("<h", data, 70)
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(datatype)
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder("<")

    pixdim = struct.unpack_from("<8f", data, 76)
    (vox_offset,) = struct.unpack_from("<f", data, 108)
    offset = int(vox_offset)
    if offset < _HEADER_SIZE:
        offset = _HEADER_SIZE + 4

    (qform_code,) = struct.unpack_from("<h", data, 252)
    (sform_code,) = struct.unpack_from("<h", data, 254)
    if sform_code > 0:
        rows = struct.unpack_from("<12f", data, 280)
        affine = np.eye(4)
        affine[0, :] = rows[0:4]
        affine[1, :] = rows[4:8]
        affine[2, :] = rows[8:12]
    elif qform_code > 0:
        qb, qc, qd = struct.unpack_from("<3f", data, 256)
        qx, qy, qz = struct.unpack_from("<3f", data, 268)
        rot = _quaternion_rotation(qb, qc, qd)
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        scales = np.array([pixdim[1], pixdim[2], qfac * pixdim[3]])
        affine = np.eye(4)
        affine[:3, :3] = rot * scales
        affine[:3, 3] = (qx, qy, qz)
    else:
        affine = np.diag([pixdim[1] or 1.0, pixdim[2] or 1.0, pixdim[3] or 1.0, 1.0])

    count = nx * ny * nz
    need = count * dtype.itemsize
    payload = data[offset : offset + need]
    if len(payload) < need:
        raise TruncatedVolume(
            f"voxel payload holds {len(payload)} bytes, expected {need}"
        )
    voxels = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz), order="F")
    voxels = np.ascontiguousarray(voxels)
    voxels.setflags(write=False)
    return LabelVolume(dims=(nx, ny, nz), voxels=voxels, affine=affine)


def serialize_nifti_labels(volume: LabelVolume, gzipped: bool = False) -> bytes:
    """Serialize a LabelVolume to .nii bytes (sform only, no extensions)."""
    voxels = np.asarray(volume.voxels)
    if voxels.dtype not in _DTYPE_CODES:
        voxels = voxels.astype(np.uint16 if voxels.min() >= 0 else np.int16)
    datatype, bitpix = _DTYPE_CODES[np.dtype(voxels.dtype)]
    nx, ny, nz = volume.dims

    spacing = [float(np.linalg.norm(volume.affine[:3, i])) or 1.0 for i in range(3)]
    header = bytearray(_HEADER_SIZE)
    struct.pack_into("<i", header, 0, _HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, datatype)
    struct.pack_into("<h", header, 72, bitpix)
    struct.pack_into("<8f", header, 76, 1.0, spacing[0], spacing[1], spacing[2],
                     0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(_HEADER_SIZE + 4))
    struct.pack_into("<h", header, 252, 0)  # qform_code
    struct.pack_into("<h", header, 254, 1)  # sform_code: scanner anatomical
    struct.pack_into("<12f", header, 280, *volume.affine[0, :], *volume.affine[1, :],
                     *volume.affine[2, :])
    header[344:348] = _MAGIC

    body = bytes(header) + b"\x00" * 4 + voxels.tobytes(order="F")
    if gzipped:
        return gzip.compress(body, compresslevel=6, mtime=0)
    return body
