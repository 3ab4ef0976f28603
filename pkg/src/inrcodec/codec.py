"""Binary container for trained networks, and decoding back to volumes.

Layout (little-endian)::

    magic "NRVC" | version u8 | mode u8 | variant u8 | quant u8 | backend u8
    | omega0 f32 | in_dim u8 | hidden_layers u8 | hidden_units u16 | out_dim u32
    | dims 4*u32 | voxel_size 3*f32 | norm_bounds 2*f64 | seed u64
    | n_networks u32 | payload_crc32 u32 | payload_len u64 | payload

The payload is the lossless-compressed concatenation of one quantized block
per network, in slice order. Each block stores, layer by layer, the weight
matrix row-major followed by the bias vector.
"""

from __future__ import annotations

import lzma
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import ConsistencyError, CorruptionError, FormatError, QuantizationOverflowError
from .network import NetworkParams, NetworkSpec, Variant, forward_chunked, param_count
from .sampling import GridMode, make_grid
from .volume import Volume4D, denormalize

__all__ = [
    "MAGIC",
    "VERSION",
    "CompressedArtifact",
    "quantize",
    "dequantize",
    "pack",
    "unpack",
    "decode",
    "compression_ratio",
    "register_backend",
]

MAGIC = b"NRVC"
VERSION = 1
HEADER = struct.Struct("<4sBBBBBfBBHI4I3f2dQIIQ")

QUANT_CODES = {"f16": 1, "f32": 2}
QUANT_NAMES = {v: k for k, v in QUANT_CODES.items()}
_QUANT_DTYPES = {"f16": np.dtype("<f2"), "f32": np.dtype("<f4")}
F16_MAX = 65504.0


@dataclass(frozen=True)
class Backend:
    name: str
    compress: Callable[[bytes], bytes]
    decompress: Callable[[bytes], bytes]


def _lzma_compress(data: bytes) -> bytes:
    return lzma.compress(data, format=lzma.FORMAT_ALONE, preset=9 | lzma.PRESET_EXTREME)


def _lzma_decompress(data: bytes) -> bytes:
    return lzma.decompress(data, format=lzma.FORMAT_ALONE)


_BACKENDS: Dict[int, Backend] = {
    0: Backend("none", bytes, bytes),
    1: Backend("lzma", _lzma_compress, _lzma_decompress),
    2: Backend("deflate", lambda d: zlib.compress(d, 9), zlib.decompress),
}


def register_backend(code: int, name: str, compress, decompress) -> None:
    """Add a lossless byte-stream back-end under container code ``code``."""
    if not 0 <= code <= 255:
        raise ValueError("backend code must fit in one byte")
    if code in _BACKENDS and _BACKENDS[code].name != name:
        raise ValueError(f"backend code {code} already used by {_BACKENDS[code].name!r}")
    _BACKENDS[code] = Backend(name, compress, decompress)


def backend_code(name) -> int:
    if isinstance(name, int):
        if name not in _BACKENDS:
            raise ValueError(f"unknown backend code {name}")
        return name
    for code, backend in _BACKENDS.items():
        if backend.name == name:
            return code
    raise ValueError(f"unknown backend {name!r}; choose from {[b.name for b in _BACKENDS.values()]}")


# --------------------------------------------------------------------------
# quantization


def quantize(params: NetworkParams, code: str = "f16") -> bytes:
    """Serialize parameters at the precision named by ``code`` (``f16``/``f32``)."""
    if code not in _QUANT_DTYPES:
        raise ValueError(f"unknown quantization {code!r}")
    flat = params.flat()
    if not np.all(np.isfinite(flat)):
        raise QuantizationOverflowError("parameters contain non-finite values")
    if code == "f16" and flat.size and np.max(np.abs(flat)) > F16_MAX:
        raise QuantizationOverflowError(
            f"parameter magnitude {np.max(np.abs(flat)):.6g} exceeds half-precision range"
        )
    return flat.astype(_QUANT_DTYPES[code]).tobytes()


def dequantize(blob: bytes, spec: NetworkSpec, code: str = "f16") -> NetworkParams:
    dtype = _QUANT_DTYPES[code]
    values = np.frombuffer(blob, dtype=dtype)
    return NetworkParams.from_flat(spec, values.astype(np.float64))


# --------------------------------------------------------------------------
# container


@dataclass(frozen=True)
class CompressedArtifact:
    mode: GridMode
    spec: NetworkSpec
    dims: Tuple[int, int, int, int]
    voxel_size: Tuple[float, float, float]
    norm_bounds: Tuple[float, float]
    seed: int
    n_networks: int
    quantization: str
    backend: str
    payload: bytes
    version: int = VERSION

    @property
    def checksum(self) -> int:
        return zlib.crc32(self.payload) & 0xFFFFFFFF

    def header_bytes(self) -> bytes:
        return HEADER.pack(
            MAGIC, self.version, int(self.mode), int(self.spec.variant),
            QUANT_CODES[self.quantization], backend_code(self.backend),
            self.spec.omega0, self.spec.in_dim, self.spec.hidden_layers,
            self.spec.hidden_units, self.spec.out_dim, *self.dims, *self.voxel_size,
            *self.norm_bounds, self.seed, self.n_networks, self.checksum, len(self.payload),
        )

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.payload

    def __len__(self):
        return HEADER.size + len(self.payload)

    @property
    def raw_payload_size(self) -> int:
        """Size of the quantized blocks before the lossless stage."""
        return param_count(self.spec) * _QUANT_DTYPES[self.quantization].itemsize * self.n_networks

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CompressedArtifact":
        if len(blob) < HEADER.size:
            if blob[:4] != MAGIC[:len(blob[:4])]:
                raise FormatError("not an NRVC container (bad magic)")
            raise CorruptionError(f"container truncated inside the header ({len(blob)} bytes)")
        fields = HEADER.unpack_from(blob, 0)
        (magic, version, mode, variant, quant, backend, omega0, in_dim, hidden_layers,
         hidden_units, out_dim, nx, ny, nz, m, dx, dy, dz, lo, hi, seed, n_networks,
         crc, payload_len) = fields
        if magic != MAGIC:
            raise FormatError(f"not an NRVC container (magic {magic!r})")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        try:
            mode = GridMode(mode)
            variant = Variant(variant)
            quant_name = QUANT_NAMES[quant]
            backend_name = _BACKENDS[backend].name
        except (ValueError, KeyError) as exc:
            raise FormatError(f"invalid header field: {exc}") from exc
        payload = blob[HEADER.size:]
        if len(payload) < payload_len:
            raise CorruptionError(
                f"payload truncated: header says {payload_len} bytes, found {len(payload)}"
            )
        if len(payload) > payload_len:
            raise CorruptionError(f"{len(payload) - payload_len} trailing bytes after payload")
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise CorruptionError("payload checksum mismatch")
        try:
            spec = NetworkSpec(in_dim, out_dim, hidden_layers, hidden_units, variant, omega0)
        except ValueError as exc:
            raise FormatError(f"invalid network description: {exc}") from exc
        return cls(mode, spec, (nx, ny, nz, m), (dx, dy, dz), (lo, hi), seed, n_networks,
                   quant_name, backend_name, bytes(payload), version)

    def save(self, path) -> int:
        blob = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(blob)
        return len(blob)

    @classmethod
    def load(cls, path) -> "CompressedArtifact":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def pack(networks: Sequence[NetworkParams], spec: NetworkSpec, mode, dims, voxel_size,
         norm_bounds, seed: int = 0, quantization: str = "f16",
         backend="lzma") -> CompressedArtifact:
    """Quantize every network and run the concatenation through the back-end."""
    mode = GridMode.parse(mode)
    if not networks:
        raise ValueError("nothing to pack")
    for k, params in enumerate(networks):
        try:
            params.check(spec)
        except Exception as exc:
            raise ConsistencyError(f"network {k} does not match the shared spec: {exc}") from exc
    code = backend_code(backend)
    raw = b"".join(quantize(p, quantization) for p in networks)
    payload = _BACKENDS[code].compress(raw)
    dims = tuple(int(d) for d in dims)
    if len(dims) == 3:
        dims = dims + (1,)
    return CompressedArtifact(
        mode, spec, dims, tuple(float(x) for x in voxel_size),
        tuple(float(x) for x in norm_bounds), int(seed), len(networks),
        quantization, _BACKENDS[code].name, payload,
    )


def _as_artifact(artifact) -> CompressedArtifact:
    if isinstance(artifact, CompressedArtifact):
        return artifact
    if isinstance(artifact, (bytes, bytearray, memoryview)):
        return CompressedArtifact.from_bytes(bytes(artifact))
    return CompressedArtifact.load(artifact)


def payload_bytes(artifact) -> bytes:
    """Decompressed quantized blocks of ``artifact``."""
    art = _as_artifact(artifact)
    try:
        raw = _BACKENDS[backend_code(art.backend)].decompress(art.payload)
    except (lzma.LZMAError, zlib.error, EOFError) as exc:
        raise CorruptionError(f"lossless stage failed: {exc}") from exc
    if len(raw) != art.raw_payload_size:
        raise CorruptionError(
            f"payload decompresses to {len(raw)} bytes, expected {art.raw_payload_size}"
        )
    return raw


def unpack(artifact):
    """Inverse of :func:`pack` up to quantization.

    Returns
    -------
    (NetworkSpec, dims, norm_bounds, list of NetworkParams)
    """
    art = _as_artifact(artifact)
    raw = payload_bytes(art)
    block = len(raw) // art.n_networks
    networks = [
        dequantize(raw[k * block:(k + 1) * block], art.spec, art.quantization)
        for k in range(art.n_networks)
    ]
    return art.spec, art.dims, art.norm_bounds, networks


def reconstruct(spec: NetworkSpec, networks: List[NetworkParams], dims, mode,
                n_jobs: int = 1) -> np.ndarray:
    """Evaluate networks on their grids and assemble the normalized 4D array."""
    mode = GridMode.parse(mode)
    nx, ny, nz, m = dims
    grid = make_grid(dims, mode)
    if mode is GridMode.VOLUME3D:
        if len(networks) != 1:
            raise FormatError(f"3D containers hold one network, found {len(networks)}")
        out = forward_chunked(spec, networks[0], grid.coords)
        return out.reshape(nx, ny, nz, m, order="F")
    if len(networks) != nz:
        raise FormatError(f"{nz} slices but {len(networks)} networks")
    if n_jobs == 1:
        slices = [forward_chunked(spec, p, grid.coords) for p in networks]
    else:
        from joblib import Parallel, delayed

        slices = Parallel(n_jobs=n_jobs)(
            delayed(forward_chunked)(spec, p, grid.coords) for p in networks
        )
    data = np.empty((nx, ny, nz, m))
    for z, s in enumerate(slices):
        data[:, :, z, :] = s.reshape(nx, ny, m, order="F")
    return data


def decode(artifact, n_jobs: int = 1, normalized: bool = False) -> Volume4D:
    """Rebuild the volume described by ``artifact`` (object, bytes or path).

    The result is in native units unless ``normalized`` is true.
    """
    art = _as_artifact(artifact)
    spec, dims, bounds, networks = unpack(art)
    data = reconstruct(spec, networks, dims, art.mode, n_jobs=n_jobs)
    v = Volume4D(data, art.voxel_size, norm_bounds=bounds)
    return v if normalized else denormalize(v)


def compression_ratio(original_bytes: int, artifact_bytes: int) -> float:
    """``original_bytes / artifact_bytes``."""
    if original_bytes <= 0 or artifact_bytes <= 0:
        raise ValueError("sizes must be positive")
    return original_bytes / artifact_bytes


def file_size(path) -> int:
    return os.path.getsize(path)
