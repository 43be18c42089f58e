"""Cartesian process grids, periodic neighbor lookup and halo region geometry.

Local cell indices are *padded* indices: owned cells along an axis occupy
``[ghost_width, ghost_width + extent)`` and the ghost layer sits on either side.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

Coords = Tuple[int, ...]
Offset = Tuple[int, ...]


@dataclass(frozen=True)
class ProcessGrid:
    """A Cartesian arrangement of ranks, row-major (last axis fastest)."""

    dims: Tuple[int, ...]
    periodic: Tuple[bool, ...]

    def __post_init__(self):
        if len(self.dims) not in (2, 3):
            raise ValueError(f"dimensionality must be 2 or 3, got {len(self.dims)}")
        if len(self.periodic) != len(self.dims):
            raise ValueError("periodic flags must match dims")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"grid axis lengths must be positive: {self.dims}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def coords(self, rank: int) -> Coords:
        if not 0 <= rank < self.size:
            raise ValueError(f"rank {rank} outside grid of size {self.size}")
        out = []
        for d in reversed(self.dims):
            out.append(rank % d)
            rank //= d
        return tuple(reversed(out))

    def rank(self, coords: Sequence[int]) -> int:
        if len(coords) != self.ndim or any(not 0 <= c < d for c, d in zip(coords, self.dims)):
            raise ValueError(f"coordinates {tuple(coords)} invalid for grid {self.dims}")
        r = 0
        for c, d in zip(coords, self.dims):
            r = r * d + c
        return r

    def __str__(self):
        return "x".join(str(d) for d in self.dims)


def _ordered_factorizations(n: int, k: int):
    if k == 1:
        yield (n,)
        return
    for f in range(1, n + 1):
        if n % f == 0:
            for rest in _ordered_factorizations(n // f, k - 1):
                yield (f,) + rest


def build_process_grid(num_ranks: int, dimensionality: int = 3,
                       periodic: bool | Sequence[bool] = True) -> ProcessGrid:
    """Factor ``num_ranks`` into the most cubic grid.

    The chosen factorization minimizes the longest axis. Ties go to the
    non-increasing arrangement, and among those to the lexicographically
    smallest one (``16 -> 4x2x2`` rather than ``4x4x1``).
    """
    if dimensionality not in (2, 3):
        raise ValueError(f"dimensionality must be 2 or 3, got {dimensionality}")
    if num_ranks < 1:
        raise ValueError(f"num_ranks must be >= 1, got {num_ranks}")
    candidates = [
        f for f in _ordered_factorizations(num_ranks, dimensionality)
        if all(a >= b for a, b in zip(f, f[1:]))
    ]
    dims = min(candidates, key=lambda f: (max(f), f))
    if isinstance(periodic, bool):
        periodic = (periodic,) * dimensionality
    return ProcessGrid(tuple(dims), tuple(bool(p) for p in periodic))


def neighbor_offsets(dimensionality: int) -> list[Offset]:
    """All non-zero offsets in {-1, 0, 1}^d in lexicographic order (26 in 3D, 8 in 2D)."""
    return [o for o in itertools.product((-1, 0, 1), repeat=dimensionality) if any(o)]


def offset_tag(offset: Offset) -> int:
    """Unique non-negative tag for a direction: its base-3 digit encoding."""
    t = 0
    for o in offset:
        t = t * 3 + (o + 1)
    return t


def neighbor_rank(grid: ProcessGrid, coords: Sequence[int], offset: Sequence[int]) -> Optional[int]:
    """Rank at ``coords + offset`` with periodic wraparound, or ``None`` off a closed edge."""
    target = []
    for c, o, d, p in zip(coords, offset, grid.dims, grid.periodic):
        t = c + o
        if not 0 <= t < d:
            if not p:
                return None
            t %= d
        target.append(t)
    return grid.rank(target)


@dataclass(frozen=True)
class BoundaryRegion:
    """A box of local (padded) cells, half-open per axis."""

    lo: Tuple[int, ...]
    hi: Tuple[int, ...]
    offset: Offset
    role: str  # "send" | "recv"

    @property
    def kind(self) -> str:
        nz = sum(1 for o in self.offset if o != 0)
        if nz == 1:
            return "face"
        return "corner" if nz == len(self.offset) else "edge"

    @cached_property
    def shape(self) -> Tuple[int, ...]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @cached_property
    def box3(self) -> tuple[Tuple[int, ...], Tuple[int, ...]]:
        """``(lo, shape)`` padded to three axes with a unit trailing axis."""
        pad = 3 - len(self.lo)
        return self.lo + (0,) * pad, self.shape + (1,) * pad

    @cached_property
    def ncells(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n

    @property
    def slices(self) -> Tuple[slice, ...]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))


def send_region(extents: Sequence[int], ghost_width: int, offset: Offset) -> BoundaryRegion:
    g = ghost_width
    lo, hi = [], []
    for n, o in zip(extents, offset):
        if o < 0:
            lo.append(g); hi.append(2 * g)
        elif o > 0:
            lo.append(n); hi.append(n + g)
        else:
            lo.append(g); hi.append(n + g)
    return BoundaryRegion(tuple(lo), tuple(hi), tuple(offset), "send")


def recv_region(extents: Sequence[int], ghost_width: int, offset: Offset) -> BoundaryRegion:
    g = ghost_width
    lo, hi = [], []
    for n, o in zip(extents, offset):
        if o < 0:
            lo.append(0); hi.append(g)
        elif o > 0:
            lo.append(n + g); hi.append(n + 2 * g)
        else:
            lo.append(g); hi.append(n + g)
    return BoundaryRegion(tuple(lo), tuple(hi), tuple(offset), "recv")


def boundary_regions(subdomain_extents: Sequence[int], ghost_width: int, grid: ProcessGrid,
                     coords: Sequence[int]) -> list[tuple[int, BoundaryRegion, BoundaryRegion]]:
    """Per present neighbor: ``(rank, send region, recv region)`` for the same direction.

    The send region holds owned cells destined for the neighbor at ``offset``;
    the recv region is the ghost block that neighbor fills (it sends its own
    ``-offset`` region). Send regions of different directions overlap at edges
    and corners and are shipped independently.
    """
    if len(subdomain_extents) != grid.ndim:
        raise ValueError("subdomain extents must match grid dimensionality")
    if ghost_width < 1:
        raise ValueError(f"ghost_width must be positive, got {ghost_width}")
    if any(n < ghost_width for n in subdomain_extents):
        raise ValueError(
            f"subdomain extents {tuple(subdomain_extents)} smaller than ghost width {ghost_width}")
    out = []
    for offset in neighbor_offsets(grid.ndim):
        peer = neighbor_rank(grid, coords, offset)
        if peer is None:
            continue
        out.append((peer, send_region(subdomain_extents, ghost_width, offset),
                    recv_region(subdomain_extents, ghost_width, offset)))
    return out
