"""NIfTI-1 reading, the internal volume container, and axis reorientation.

Internal container: one UTF-8 JSON header line terminated by ``\\n``
followed by the raw little-endian payload in x-fastest (Fortran) order.
The header carries ``shape``, ``dtype`` (``"f4"``, ``"f8"`` or ``"u8"``) and,
for volumes, ``spacing`` and ``affine``.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagic, HeaderParseError, ObliqueAffine, ShapeMismatch, TruncatedFile,
                     UnsupportedDatatype, UnsupportedDim)

NIFTI_HEADER_SIZE = 348
NIFTI_DTYPES = {4: np.dtype("<i2"), 16: np.dtype("<f4"), 64: np.dtype("<f8")}
CONTAINER_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "u8": np.dtype("u1")}


@dataclass
class Volume:
    """3D scalar grid with voxel spacing (mm) and a voxel-to-world affine."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeMismatch(f"volume data must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        if self.affine is None:
            self.affine = np.diag([*self.spacing, 1.0])
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4) or not np.array_equal(self.affine[3], [0, 0, 0, 1]):
            raise ValueError("affine must be 4x4 with bottom row (0, 0, 0, 1)")

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data):
        return Volume(data, self.spacing, self.affine.copy())


def mask(data, spacing=(1.0, 1.0, 1.0), affine=None):
    """Binary mask as a uint8 :class:`Volume`."""
    return Volume(np.asarray(data, dtype=bool).astype(np.uint8), spacing, affine)


# --- NIfTI-1 -----------------------------------------------------------------


def read_nifti(path):
    """Read an uncompressed little-endian single-file NIfTI-1 volume."""
    raw = Path(path).read_bytes()
    if len(raw) < NIFTI_HEADER_SIZE:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is shorter than a NIfTI-1 header")
    if raw[:2] == b"\x1f\x8b":
        raise BadMagic(f"{path}: gzip-compressed NIfTI is not supported")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise BadMagic(f"{path}: magic {magic!r} is not single-file NIfTI-1")
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        raise BadMagic(f"{path}: sizeof_hdr {sizeof_hdr} (big-endian or NIfTI-2 files are not supported)")
    dim = struct.unpack_from("<8h", raw, 40)
    (datatype,) = struct.unpack_from("<h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
    (sform_code,) = struct.unpack_from("<h", raw, 254)
    srow = np.array(struct.unpack_from("<12f", raw, 280), dtype=np.float64).reshape(3, 4)

    if datatype not in NIFTI_DTYPES:
        raise UnsupportedDatatype(f"{path}: NIfTI datatype code {datatype} is not supported")
    if dim[0] != 3:
        raise UnsupportedDim(f"{path}: dim[0] = {dim[0]}, only 3D volumes are supported")
    shape = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in shape):
        raise UnsupportedDim(f"{path}: invalid dimensions {shape}")
    dtype = NIFTI_DTYPES[datatype]
    offset = max(int(vox_offset), NIFTI_HEADER_SIZE)
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise TruncatedFile(f"{path}: expected {nbytes} data bytes at offset {offset}, "
                            f"file has {len(raw) - offset}")
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64)
    if scl_slope != 0 and np.isfinite(scl_slope):
        data = data * scl_slope + scl_inter
    spacing = tuple(abs(float(p)) if p else 1.0 for p in pixdim[1:4])
    if sform_code > 0:
        affine = np.vstack([srow, [0, 0, 0, 1]])
    else:
        affine = np.diag([*spacing, 1.0])
    return Volume(data.astype(np.float32), spacing, affine)


# --- internal container --------------------------------------------------------


def _dtype_tag(arr):
    if arr.dtype == np.uint8 or arr.dtype == bool:
        return "u8"
    if arr.dtype == np.float64:
        return "f8"
    return "f4"


def write_array(path, array, **meta):
    """Write any array to the internal container (``meta`` goes in the header)."""
    array = np.asarray(array)
    tag = _dtype_tag(array)
    header = {"shape": list(array.shape), "dtype": tag, **meta}
    payload = np.asarray(array, dtype=CONTAINER_DTYPES[tag]).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def read_array(path):
    """Return ``(array, header)`` from an internal container file."""
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise HeaderParseError(f"{path}: no header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
        dtype = CONTAINER_DTYPES[header["dtype"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise HeaderParseError(f"{path}: bad header ({exc})") from None
    payload = raw[newline + 1:]
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise HeaderParseError(f"{path}: header promises {expected} payload bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    return arr.astype(dtype.newbyteorder("="), copy=True), header


def write_volume(v, path):
    write_array(path, v.data, spacing=list(v.spacing), affine=v.affine.tolist())


def read_volume(path):
    data, header = read_array(path)
    if data.ndim != 3:
        raise HeaderParseError(f"{path}: expected a 3D volume, header shape {data.shape}")
    try:
        return Volume(data, header["spacing"], np.array(header["affine"], dtype=np.float64))
    except (KeyError, ValueError) as exc:
        raise HeaderParseError(f"{path}: bad volume header ({exc})") from None


def load_any(path):
    """NIfTI for ``.nii`` files, the internal container otherwise."""
    return read_nifti(path) if str(path).endswith(".nii") else read_volume(path)


# --- orientation ---------------------------------------------------------------


def reorient_to_canonical(v, tol=0.2):
    """Permute/flip axes so the affine's 3x3 block has a positive dominant diagonal."""
    rot = v.affine[:3, :3]
    norms = np.linalg.norm(rot, axis=0)
    if np.any(norms == 0):
        raise ObliqueAffine("affine has a zero column")
    cosines = rot / norms
    signed_perm = np.round(cosines)
    if (np.any(np.abs(cosines - signed_perm) > tol)
            or not np.array_equal(np.abs(signed_perm).sum(axis=0), [1, 1, 1])
            or not np.array_equal(np.abs(signed_perm).sum(axis=1), [1, 1, 1])):
        raise ObliqueAffine(f"affine is not axis-aligned within {tol}: cosines\n{cosines}")
    # voxel axis j points along world axis world_of[j] with sign sign_of[j]
    world_of = np.argmax(np.abs(signed_perm), axis=0)
    sign_of = signed_perm[world_of, np.arange(3)]
    order = np.argsort(world_of)  # new axis i is old axis order[i]
    data = v.data
    shape = data.shape
    transform = np.zeros((4, 4))
    transform[3, 3] = 1
    for new_axis, old_axis in enumerate(order):
        if sign_of[old_axis] < 0:
            transform[old_axis, new_axis] = -1
            transform[old_axis, 3] = shape[old_axis] - 1
        else:
            transform[old_axis, new_axis] = 1
    flips = tuple(int(j) for j in range(3) if sign_of[j] < 0)
    if flips:
        data = np.flip(data, axis=flips)
    data = np.ascontiguousarray(np.transpose(data, order))
    spacing = tuple(v.spacing[j] for j in order)
    return Volume(data, spacing, v.affine @ transform)
