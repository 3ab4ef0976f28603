"""Coordinate grids fed to the networks and slice decomposition of volumes.

Rows are flattened with x varying fastest, then y, then z.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .volume import Volume4D

__all__ = [
    "GridMode",
    "CoordinateGrid",
    "axis_coordinates",
    "index_to_coordinate",
    "make_grid",
    "slice_targets",
]


class GridMode(enum.IntEnum):
    SLICE2D = 0
    VOLUME3D = 1

    @classmethod
    def parse(cls, value) -> "GridMode":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.lower()
            if key in ("2d", "slice2d", "slice"):
                return cls.SLICE2D
            if key in ("3d", "volume3d", "volume"):
                return cls.VOLUME3D
            raise ValueError(f"unknown grid mode {value!r}")
        return cls(int(value))

    @property
    def in_dim(self) -> int:
        return 2 if self is GridMode.SLICE2D else 3


def axis_coordinates(n: int) -> np.ndarray:
    """``n`` evenly spaced values from -1 to 1; a single point sits at 0."""
    if n < 1:
        raise ValueError("axis length must be positive")
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def index_to_coordinate(position, n: int) -> np.ndarray:
    """Map (possibly fractional) voxel indices along an axis of length ``n`` to [-1, 1].

    Integer positions give bit-for-bit the values of :func:`axis_coordinates`.
    """
    pos = np.asarray(position, dtype=np.float64)
    if n == 1:
        return np.zeros_like(pos)
    # same arithmetic as numpy.linspace, including the exact endpoint
    out = pos * (2.0 / (n - 1)) + -1.0
    return np.where(pos == n - 1, 1.0, out)


@dataclass(frozen=True)
class CoordinateGrid:
    mode: GridMode
    shape: Tuple[int, ...]
    coords: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.coords.shape[0]

    def row_of(self, position: Sequence[int]) -> int:
        """Flat row index of a grid position (x fastest)."""
        row = 0
        stride = 1
        for p, n in zip(position, self.shape):
            if not 0 <= p < n:
                raise IndexError(f"position {tuple(position)} outside grid {self.shape}")
            row += int(p) * stride
            stride *= n
        return row

    def position_of(self, row: int) -> Tuple[int, ...]:
        if not 0 <= row < self.n_rows:
            raise IndexError(f"row {row} outside grid of {self.n_rows} rows")
        pos = []
        for n in self.shape:
            row, p = divmod(row, n)
            pos.append(p)
        return tuple(pos)


def make_grid(dims: Sequence[int], mode) -> CoordinateGrid:
    """Full raster grid over ``(nx, ny)`` or ``(nx, ny, nz)``.

    Extra entries of ``dims`` (z in 2D mode, the measurement count) are ignored.
    """
    mode = GridMode.parse(mode)
    shape = tuple(int(d) for d in dims[: mode.in_dim])
    if len(shape) != mode.in_dim or any(d < 1 for d in shape):
        raise ValueError(f"need {mode.in_dim} positive dims, got {tuple(dims)}")
    axes = [axis_coordinates(n) for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.reshape(-1, order="F") for m in mesh], axis=1)
    return CoordinateGrid(mode, shape, coords)


def slice_targets(v: Volume4D, z: int) -> np.ndarray:
    """``(nx*ny, m)`` matrix of the samples in slice ``z``, rows in grid order."""
    nx, ny, nz, m = v.dims
    if not 0 <= z < nz:
        raise IndexError(f"slice {z} out of range for nz={nz}")
    return v.data[:, :, z, :].reshape(nx * ny, m, order="F")


def volume_targets(v: Volume4D) -> np.ndarray:
    """``(nx*ny*nz, m)`` matrix of all samples in 3D grid order."""
    nx, ny, nz, m = v.dims
    return v.data.reshape(nx * ny * nz, m, order="F")
