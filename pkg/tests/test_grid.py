import itertools

import pytest
from hypothesis import given, settings, strategies as st

from halobench.grid import (ProcessGrid, boundary_regions, build_process_grid, neighbor_offsets,
                            neighbor_rank, offset_tag, recv_region, send_region)


def brute_force_grid(n, ndim):
    """Every ordered factorization; min longest axis, prefer non-increasing, then lexicographic."""
    cands = [f for f in itertools.product(range(1, n + 1), repeat=ndim)
             if _prod(f) == n]
    best = min(max(f) for f in cands)
    ties = [f for f in cands if max(f) == best]
    desc = [f for f in ties if list(f) == sorted(f, reverse=True)]
    return min(desc)


def _prod(xs):
    out = 1
    for x in xs:
        out *= x
    return out


@pytest.mark.parametrize("n,ndim,dims", [(8, 3, (2, 2, 2)), (1, 3, (1, 1, 1)), (12, 3, (3, 2, 2)),
                                         (8, 2, (4, 2)), (16, 3, (4, 2, 2))])
def test_build_process_grid_examples(n, ndim, dims):
    assert build_process_grid(n, ndim).dims == dims
    assert brute_force_grid(n, ndim) == dims


@pytest.mark.parametrize("n", range(1, 65))
@pytest.mark.parametrize("ndim", [2, 3])
def test_build_process_grid_matches_brute_force(n, ndim):
    grid = build_process_grid(n, ndim)
    assert grid.dims == brute_force_grid(n, ndim)
    assert grid.size == n


def test_build_process_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        build_process_grid(8, 4)
    with pytest.raises(ValueError):
        build_process_grid(0, 3)


@pytest.mark.parametrize("dims", [(2, 3, 4), (1, 1, 1), (5, 2)])
def test_coords_rank_bijection(dims):
    grid = ProcessGrid(dims, (True,) * len(dims))
    seen = {grid.coords(r) for r in range(grid.size)}
    assert len(seen) == grid.size
    assert all(grid.rank(grid.coords(r)) == r for r in range(grid.size))


def test_neighbor_rank_examples():
    g = build_process_grid(8, 3)
    assert neighbor_rank(g, (0, 0, 0), (-1, 0, 0)) == g.rank((1, 0, 0))
    one = build_process_grid(1, 3)
    assert all(neighbor_rank(one, (0, 0, 0), o) == 0 for o in neighbor_offsets(3))
    closed = ProcessGrid((2, 2), (False, False))
    assert neighbor_rank(closed, (0, 0), (-1, -1)) is None
    assert neighbor_rank(closed, (0, 0), (1, 1)) == closed.rank((1, 1))


def test_neighbor_offsets_counts():
    assert len(neighbor_offsets(3)) == 26
    assert len(neighbor_offsets(2)) == 8
    assert len({offset_tag(o) for o in neighbor_offsets(3)}) == 26


@settings(max_examples=200, deadline=None)
@given(dims=st.lists(st.integers(1, 4), min_size=2, max_size=3),
       periodic=st.lists(st.booleans(), min_size=3, max_size=3), data=st.data())
def test_neighbor_symmetry(dims, periodic, data):
    grid = ProcessGrid(tuple(dims), tuple(periodic[:len(dims)]))
    rank = data.draw(st.integers(0, grid.size - 1))
    offset = data.draw(st.sampled_from(neighbor_offsets(grid.ndim)))
    c = grid.coords(rank)
    r = neighbor_rank(grid, c, offset)
    if r is not None:
        back = neighbor_rank(grid, grid.coords(r), tuple(-o for o in offset))
        assert back == rank


def enumerate_cells(region):
    return set(itertools.product(*(range(l, h) for l, h in zip(region.lo, region.hi))))


def test_boundary_regions_total_cells_3d():
    grid = build_process_grid(1, 3)
    entries = boundary_regions((4, 4, 4), 1, grid, (0, 0, 0))
    assert len(entries) == 26
    by_formula = sum(s.ncells for _, s, _ in entries)
    by_enumeration = sum(len(enumerate_cells(s)) for _, s, _ in entries)
    assert by_formula == by_enumeration == 6 * 16 + 12 * 4 + 8 * 1 == 152


def test_right_edge_region_2d():
    s = send_region((4, 4), 1, (1, 0))
    # padded x index 4 is the last owned column; every owned y
    assert enumerate_cells(s) == {(4, y) for y in range(1, 5)}
    assert s.ncells == 4
    assert s.kind == "face"


@pytest.mark.parametrize("n", [1, 3, 6])
def test_corner_region_one_cell(n):
    s = send_region((n, n, n), 1, (1, -1, 1))
    assert s.ncells == 1 and s.kind == "corner"
    assert send_region((n, n, n), 1, (1, -1, 0)).kind == "edge"


@pytest.mark.parametrize("ext,g", [((4, 4, 4), 1), ((3, 5, 2), 2), ((4, 6), 1), ((5, 3), 3)])
def test_region_geometry_properties(ext, g):
    ndim = len(ext)
    grid = build_process_grid(1, ndim)
    owned = set(itertools.product(*(range(g, g + n) for n in ext)))
    padded = set(itertools.product(*(range(n + 2 * g) for n in ext)))
    shell = padded - owned
    recv_cells = []
    for _, s, r in boundary_regions(ext, g, grid, (0,) * ndim):
        assert enumerate_cells(s) <= owned
        assert not enumerate_cells(r) & owned
        mirror = send_region(ext, g, tuple(-o for o in s.offset))
        assert r.ncells == mirror.ncells == s.ncells
        assert mirror.shape == r.shape
        for n, o, width in zip(ext, s.offset, s.shape):
            assert width == (g if o else n)
        recv_cells.append(enumerate_cells(r))
    # recv regions tile the ghost shell exactly once
    assert sum(len(c) for c in recv_cells) == len(shell)
    assert set().union(*recv_cells) == shell


def test_boundary_regions_rejects_thin_subdomain():
    with pytest.raises(ValueError):
        boundary_regions((1, 4, 4), 2, build_process_grid(1, 3), (0, 0, 0))


def test_nonperiodic_neighbor_count():
    grid = ProcessGrid((2, 2, 2), (False,) * 3)
    assert len(boundary_regions((4, 4, 4), 1, grid, (0, 0, 0))) == 7
    assert recv_region((4, 4, 4), 1, (1, 1, 1)).lo == (5, 5, 5)
