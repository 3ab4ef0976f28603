"""Volumetric data containers, NIfTI-1 and FSL gradient-table I/O, normalization.

Only the subset of NIfTI-1 needed for 4D diffusion data is handled: single-file
images (``.nii`` or gzip-wrapped), 3 or 4 dimensions, int16 or float32 samples.
Header bytes that are not interpreted (orientation, description, extensions)
are kept verbatim on the :class:`Volume4D` and written back unchanged.
"""

from __future__ import annotations

import enum
import gzip
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .exceptions import EmptyShellError, FormatError, ShapeError, UnsupportedError

__all__ = [
    "Volume4D",
    "GradientTable",
    "Tissue",
    "TissueMask",
    "read_nifti",
    "write_nifti",
    "nifti_nbytes",
    "nifti_layout",
    "uncompressed_nifti_size",
    "read_gradient_table",
    "write_gradient_table",
    "normalize",
    "denormalize",
    "select_shell",
]

HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_GZIP_MAGIC = b"\x1f\x8b"

# NIfTI datatype code -> (numpy kind, bitpix)
_DTYPES = {
    4: ("i2", 16),
    16: ("f4", 32),
}

# byte offsets inside the 348-byte header
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL = 112
_OFF_MAGIC = 344


@dataclass(frozen=True)
class Volume4D:
    """A 4D image indexed ``data[x, y, z, measurement]``.

    Parameters
    ----------
    data : numpy.ndarray
        Float64 array with shape ``(nx, ny, nz, m)``.
    voxel_size : tuple of float
        Voxel spacing ``(dx, dy, dz)`` in mm.
    norm_bounds : tuple of float, optional
        ``(s_min, s_max)`` in native units when ``data`` is normalized.
    header : bytes, optional
        Raw NIfTI header plus extension bytes, carried through for write-back.
    """

    data: np.ndarray
    voxel_size: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    norm_bounds: Optional[Tuple[float, float]] = None
    header: Optional[bytes] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., np.newaxis]
        if data.ndim != 4 or min(data.shape) < 1:
            raise ShapeError(f"expected a non-empty 3D or 4D array, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        vs = tuple(float(v) for v in self.voxel_size)
        if len(vs) != 3:
            raise ShapeError("voxel_size must have three entries")
        object.__setattr__(self, "voxel_size", vs)
        if self.norm_bounds is not None:
            lo, hi = (float(b) for b in self.norm_bounds)
            object.__setattr__(self, "norm_bounds", (lo, hi))

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def spatial_dims(self) -> Tuple[int, int, int]:
        return self.dims[:3]

    @property
    def n_measurements(self) -> int:
        return self.dims[3]

    @property
    def is_normalized(self) -> bool:
        return self.norm_bounds is not None


@dataclass(frozen=True)
class GradientTable:
    """Diffusion weighting per measurement: b-values (s/mm^2) and unit directions."""

    bvals: np.ndarray
    bvecs: np.ndarray

    def __post_init__(self):
        bvals = np.asarray(self.bvals, dtype=np.float64).reshape(-1)
        bvecs = np.asarray(self.bvecs, dtype=np.float64)
        if bvecs.ndim != 2 or bvecs.shape[1] != 3 or bvecs.shape[0] != bvals.size:
            raise ShapeError(
                f"bvecs must have shape ({bvals.size}, 3), got {bvecs.shape}"
            )
        object.__setattr__(self, "bvals", bvals)
        object.__setattr__(self, "bvecs", bvecs)

    def __len__(self):
        return self.bvals.size

    def subset(self, index) -> "GradientTable":
        return GradientTable(self.bvals[index], self.bvecs[index])


class Tissue(enum.IntEnum):
    BACKGROUND = 0
    WM = 1
    GM = 2
    CSF = 3


@dataclass(frozen=True)
class TissueMask:
    """Per-voxel tissue labels, values drawn from :class:`Tissue`."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim == 4 and labels.shape[3] == 1:
            labels = labels[..., 0]
        if labels.ndim != 3:
            raise ShapeError(f"mask must be 3D, got shape {labels.shape}")
        rounded = np.rint(labels)
        if not np.all(np.isin(rounded, [t.value for t in Tissue])):
            raise FormatError("mask labels must be integers in {0, 1, 2, 3}")
        object.__setattr__(self, "labels", rounded.astype(np.int8))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.labels.shape)

    def select(self, label) -> np.ndarray:
        """Boolean array of voxels carrying ``label``.

        ``label`` may be a :class:`Tissue`, its name, or ``"brain"`` for every
        non-background voxel.
        """
        if isinstance(label, str):
            if label.lower() == "brain":
                return self.labels != Tissue.BACKGROUND
            label = Tissue[label.upper()]
        return self.labels == int(label)

    @classmethod
    def from_volume(cls, volume: Volume4D) -> "TissueMask":
        return cls(volume.data[..., 0])

    def to_volume(self, voxel_size=(1.0, 1.0, 1.0)) -> Volume4D:
        return Volume4D(self.labels.astype(np.float64), voxel_size)


# --------------------------------------------------------------------------
# NIfTI-1


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == _GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream: {exc}") from exc
    return raw


def _endianness(raw: bytes) -> str:
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"file too short for a NIfTI-1 header ({len(raw)} bytes)")
    for endian in "<>":
        if struct.unpack_from(endian + "i", raw, 0)[0] == HEADER_SIZE:
            return endian
    raise FormatError("sizeof_hdr is not 348; not a NIfTI-1 file")


def read_nifti(path) -> Volume4D:
    """Read a NIfTI-1 image into a float64 :class:`Volume4D`.

    3D images are returned with a single measurement. A non-zero ``scl_slope``
    is applied to the stored samples.
    """
    raw = _read_bytes(path)
    endian = _endianness(raw)
    magic = raw[_OFF_MAGIC:_OFF_MAGIC + 4]
    if magic != _MAGIC_SINGLE:
        raise FormatError(f"bad NIfTI magic {magic!r} (only single-file n+1 is supported)")

    dim = struct.unpack_from(endian + "8h", raw, _OFF_DIM)
    ndim = dim[0]
    if ndim not in (3, 4):
        raise UnsupportedError(f"{ndim}-dimensional images are not supported")
    shape = [int(d) for d in dim[1:ndim + 1]]
    if any(d < 1 for d in shape):
        raise FormatError(f"invalid dimensions {shape}")
    if ndim == 3:
        shape.append(1)

    datatype, bitpix = struct.unpack_from(endian + "2h", raw, _OFF_DATATYPE)
    if datatype not in _DTYPES:
        raise UnsupportedError(f"NIfTI datatype code {datatype} is not supported")
    kind, expected_bitpix = _DTYPES[datatype]
    if bitpix != expected_bitpix:
        raise FormatError(f"bitpix {bitpix} inconsistent with datatype {datatype}")

    pixdim = struct.unpack_from(endian + "8f", raw, _OFF_PIXDIM)
    vox_offset = int(struct.unpack_from(endian + "f", raw, _OFF_VOX_OFFSET)[0])
    slope, inter = struct.unpack_from(endian + "2f", raw, _OFF_SCL)
    if vox_offset < HEADER_SIZE:
        raise FormatError(f"vox_offset {vox_offset} lies inside the header")

    count = int(np.prod(shape))
    nbytes = count * bitpix // 8
    if len(raw) < vox_offset + nbytes:
        raise FormatError("file is shorter than its header claims")
    samples = np.frombuffer(raw, dtype=endian + kind, count=count, offset=vox_offset)
    data = samples.astype(np.float64).reshape(shape, order="F")
    if slope not in (0.0, 1.0) or (slope != 0.0 and inter != 0.0):
        data = data * slope + inter

    voxel_size = tuple(abs(float(p)) or 1.0 for p in pixdim[1:4])
    header = raw[:vox_offset] if endian == "<" else None
    return Volume4D(data, voxel_size, header=header)


def _fresh_header() -> bytearray:
    hdr = bytearray(HEADER_SIZE + 4)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, float(HEADER_SIZE + 4))
    hdr[_OFF_MAGIC:_OFF_MAGIC + 4] = _MAGIC_SINGLE
    return hdr


def _build_header(v: Volume4D) -> bytearray:
    if v.header is not None and len(v.header) >= HEADER_SIZE + 4:
        hdr = bytearray(v.header)
    else:
        hdr = _fresh_header()
    nx, ny, nz, m = v.dims
    ndim = 3 if m == 1 else 4
    struct.pack_into("<8h", hdr, _OFF_DIM, ndim, nx, ny, nz, m if m > 1 else 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, _OFF_DATATYPE, 16, 32)
    qfac = struct.unpack_from("<f", hdr, _OFF_PIXDIM)[0] or 1.0
    struct.pack_into("<4f", hdr, _OFF_PIXDIM, qfac, *v.voxel_size)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, float(len(hdr)))
    struct.pack_into("<2f", hdr, _OFF_SCL, 0.0, 0.0)
    hdr[_OFF_MAGIC:_OFF_MAGIC + 4] = _MAGIC_SINGLE
    return hdr


def write_nifti(v: Volume4D, path) -> None:
    """Write ``v`` as a little-endian float32 NIfTI-1 file.

    Paths ending in ``.gz`` are gzip-compressed (with a zero mtime, so output
    bytes depend only on the volume).
    """
    hdr = _build_header(v)
    body = np.asarray(v.data, dtype="<f4").tobytes(order="F")
    blob = bytes(hdr) + body
    path = os.fspath(path)
    if path.endswith(".gz"):
        blob = gzip.compress(blob, mtime=0)
    with open(path, "wb") as fh:
        fh.write(blob)


def nifti_nbytes(v: Volume4D) -> int:
    """Size in bytes of ``v`` written as an uncompressed float32 NIfTI-1 file."""
    return len(_build_header(v)) + 4 * v.data.size


def nifti_layout(path) -> Tuple[int, int]:
    """``(vox_offset, sample_bytes)`` of the NIfTI file at ``path``."""
    raw = _read_bytes(path)
    endian = _endianness(raw)
    dim = struct.unpack_from(endian + "8h", raw, _OFF_DIM)
    _, bitpix = struct.unpack_from(endian + "2h", raw, _OFF_DATATYPE)
    vox_offset = int(struct.unpack_from(endian + "f", raw, _OFF_VOX_OFFSET)[0])
    count = int(np.prod([d for d in dim[1:dim[0] + 1]]))
    return vox_offset, count * bitpix // 8


def uncompressed_nifti_size(path) -> int:
    """On-disk size of the file at ``path`` once any gzip wrapper is removed."""
    return sum(nifti_layout(path))


# --------------------------------------------------------------------------
# FSL bvals / bvecs


def _read_rows(path):
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    try:
        return [[float(x) for x in row] for row in rows]
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry: {exc}") from exc


def read_gradient_table(bvals_path, bvecs_path) -> GradientTable:
    """Parse FSL-style ``bvals`` (one row) and ``bvecs`` (three rows) files.

    Directions with non-zero norm are rescaled to unit length.
    """
    bval_rows = _read_rows(bvals_path)
    if len(bval_rows) != 1:
        raise FormatError(f"{bvals_path}: expected one row, found {len(bval_rows)}")
    bvals = np.array(bval_rows[0])
    vec_rows = _read_rows(bvecs_path)
    if len(vec_rows) != 3:
        raise FormatError(f"{bvecs_path}: expected three rows, found {len(vec_rows)}")
    lengths = {len(r) for r in vec_rows}
    if lengths != {bvals.size}:
        raise FormatError(
            f"row length mismatch: {bvals.size} b-values, bvecs rows of {sorted(lengths)}"
        )
    bvecs = np.array(vec_rows).T
    norms = np.linalg.norm(bvecs, axis=1)
    nonzero = norms > 0
    bvecs[nonzero] /= norms[nonzero, None]
    return GradientTable(bvals, bvecs)


def write_gradient_table(g: GradientTable, bvals_path, bvecs_path) -> None:
    with open(bvals_path, "w") as fh:
        fh.write(" ".join(f"{b:.10g}" for b in g.bvals) + "\n")
    with open(bvecs_path, "w") as fh:
        for row in g.bvecs.T:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


# --------------------------------------------------------------------------
# normalization and shell selection


def normalize(v: Volume4D) -> Volume4D:
    """Map all samples to [0, 1] with one global (min, max) pair.

    The recorded bounds are always in native units: normalizing an already
    normalized volume composes with its existing bounds, so the operation is
    idempotent. A constant volume maps to zeros with ``s_min == s_max``.
    """
    data = v.data
    lo = float(data.min())
    hi = float(data.max())
    span = hi - lo
    out = np.zeros_like(data) if span == 0 else (data - lo) / span
    if v.norm_bounds is None:
        bounds = (lo, hi)
    else:
        base, top = v.norm_bounds
        scale = top - base
        bounds = (base + lo * scale, base + hi * scale)
        if lo == 0.0 and hi == 1.0:
            bounds = v.norm_bounds
    return replace(v, data=out, norm_bounds=bounds)


def denormalize(v: Volume4D) -> Volume4D:
    """Inverse of :func:`normalize`; returns native-unit samples."""
    if v.norm_bounds is None:
        raise ValueError("volume carries no normalization bounds")
    lo, hi = v.norm_bounds
    return replace(v, data=lo + v.data * (hi - lo), norm_bounds=None)


def select_shell(v: Volume4D, g: GradientTable, b_target: float, tol: float = 0.0):
    """Return the measurements with ``|b - b_target| <= tol``.

    Returns
    -------
    (Volume4D, GradientTable)
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if len(g) != v.n_measurements:
        raise ShapeError(
            f"gradient table has {len(g)} rows but volume has {v.n_measurements} measurements"
        )
    idx = np.flatnonzero(np.abs(g.bvals - b_target) <= tol)
    if idx.size == 0:
        raise EmptyShellError(f"no measurement within {tol} of b={b_target}")
    return replace(v, data=v.data[..., idx]), g.subset(idx)
