"""Per-rank mesh storage with a ghost layer, and packing to contiguous buffers.

A packed message is the region's values flattened variable-major, then by
lexicographic cell index (last axis fastest). Sender and receiver traverse
their regions in the same order, so a recv region of the mirrored direction
lines up cell for cell with the neighbor's send region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .grid import BoundaryRegion


class LocalMesh:
    """``num_vars`` float64 fields over the owned cells plus ``ghost_width`` halo."""

    def __init__(self, owned_extents: Sequence[int], ghost_width: int = 1, num_vars: int = 3,
                 values: np.ndarray | None = None):
        if num_vars < 1:
            raise ValueError(f"num_vars must be >= 1, got {num_vars}")
        if ghost_width < 1:
            raise ValueError(f"ghost_width must be >= 1, got {ghost_width}")
        self.owned_extents = tuple(int(n) for n in owned_extents)
        self.ghost_width = ghost_width
        self.num_vars = num_vars
        shape = (num_vars,) + self.padded_extents
        if values is None:
            values = np.zeros(shape)
        elif values.shape != shape or values.dtype != np.float64:
            raise ValueError(f"values must be float64 of shape {shape}")
        self.values = np.ascontiguousarray(values)
        # kernels always see 3 spatial axes
        self._v4 = self.values.reshape(shape + (1,) * (4 - len(shape)))

    @property
    def padded_extents(self) -> tuple[int, ...]:
        return tuple(n + 2 * self.ghost_width for n in self.owned_extents)

    @property
    def owned(self) -> np.ndarray:
        g = self.ghost_width
        return self.values[(slice(None),) + tuple(slice(g, g + n) for n in self.owned_extents)]

    def ghost_mask(self) -> np.ndarray:
        """Boolean mask over padded cells, True in the ghost layer."""
        mask = np.ones(self.padded_extents, dtype=bool)
        g = self.ghost_width
        mask[tuple(slice(g, g + n) for n in self.owned_extents)] = False
        return mask

    def copy(self) -> "LocalMesh":
        return LocalMesh(self.owned_extents, self.ghost_width, self.num_vars, self.values.copy())


def part_size(logical_len: int, n_parts: int) -> int:
    if n_parts < 1:
        raise ValueError(f"n_parts must be >= 1, got {n_parts}")
    return -(-logical_len // n_parts)


@dataclass
class PackBuffer:
    """Contiguous message storage, padded so it divides into ``n_parts`` equal partitions."""

    logical_len: int
    n_parts: int = 1
    elements: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.logical_len < 0:
            raise ValueError("logical_len must be non-negative")
        self.part_size = part_size(self.logical_len, self.n_parts)
        if self.elements is None:
            self.elements = np.zeros(self.padded_len)
        elif self.elements.shape != (self.padded_len,):
            raise ValueError(f"elements must have length {self.padded_len}")

    @classmethod
    def for_region(cls, region: BoundaryRegion, num_vars: int, n_parts: int = 1) -> "PackBuffer":
        return cls(region.ncells * num_vars, n_parts)

    @property
    def padded_len(self) -> int:
        return self.n_parts * self.part_size

    def partition(self, p: int) -> np.ndarray:
        return self.elements[p * self.part_size:(p + 1) * self.part_size]


def _check(mesh: LocalMesh, region: BoundaryRegion, buf: PackBuffer, role: str):
    if region.role != role:
        raise ValueError(f"expected a {role} region, got {region.role}")
    want = region.ncells * mesh.num_vars
    if buf.logical_len != want:
        raise ValueError(f"buffer logical_len {buf.logical_len} != region size {want}")


def pack(mesh: LocalMesh, region: BoundaryRegion, buf: PackBuffer) -> None:
    """Copy the region into ``buf``; any padding is zeroed."""
    _check(mesh, region, buf, "send")
    lo, shape = region.box3
    kernels.pack_range(mesh._v4, lo, shape, buf.elements, 0, buf.padded_len)


def pack_slice(mesh: LocalMesh, region: BoundaryRegion, buf: PackBuffer,
               part_index: int, n_parts: int) -> None:
    """Pack only flat elements ``[part_index*ps, (part_index+1)*ps)``, ``ps = ceil(len/n_parts)``.

    Slots past ``logical_len`` are written as zero padding.
    """
    _check(mesh, region, buf, "send")
    if not 0 <= part_index < n_parts:
        raise ValueError(f"part_index {part_index} outside [0, {n_parts})")
    ps = part_size(buf.logical_len, n_parts)
    if buf.padded_len != n_parts * ps:
        raise ValueError(f"buffer padded_len {buf.padded_len} != {n_parts} x {ps}")
    lo, shape = region.box3
    kernels.pack_range(mesh._v4, lo, shape, buf.elements, part_index * ps, (part_index + 1) * ps)


def unpack(mesh: LocalMesh, region: BoundaryRegion, buf: PackBuffer) -> None:
    """Scatter the logical part of ``buf`` into the region's ghost cells."""
    _check(mesh, region, buf, "recv")
    lo, shape = region.box3
    kernels.unpack_range(mesh._v4, lo, shape, buf.elements, 0, buf.logical_len)
