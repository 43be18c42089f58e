import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from halobench import exchange as X
from halobench.comm import Comm, RequestStateError
from halobench.harness import BenchConfig, exchange_once, initial_mesh, launch, oracle_post_state
from halobench.meshdata import LocalMesh
from halobench.transport import World


def brute_force_oracle(cfg, meshes):
    """Per padded cell: locate the owning rank of the wrapped global cell and copy its value."""
    grid, g = cfg.grid, cfg.ghost_width
    out = []
    for rank, mesh in enumerate(meshes):
        coords = grid.coords(rank)
        want = mesh.values.copy()
        for cell in itertools.product(*(range(n + 2 * g) for n in cfg.extents)):
            gcell, ok = [], True
            for i, c, n, N, p in zip(cell, coords, cfg.extents, cfg.global_extents, grid.periodic):
                gi = c * n + i - g
                if not 0 <= gi < N:
                    if not p:
                        ok = False
                        break
                    gi %= N
                gcell.append(gi)
            if not ok:
                continue
            owner = grid.rank([gi // n for gi, n in zip(gcell, cfg.extents)])
            local = tuple(gi % n + g for gi, n in zip(gcell, cfg.extents))
            want[(slice(None),) + cell] = meshes[owner].values[(slice(None),) + local]
        out.append(want)
    return out


def cfg_for(ranks, cells, workers=1, **kw):
    kw.setdefault("dimensionality", len(cells))
    cfg = BenchConfig(ranks=ranks, n_workers=workers, iterations=1, runs=1, **kw)
    return BenchConfig(ranks=ranks, n_workers=workers, iterations=1, runs=1,
                       global_extents=tuple(d * c for d, c in zip(cfg.grid.dims, cells)), **kw)


def stamp(cfg, rank):
    m = LocalMesh(cfg.extents, cfg.ghost_width, cfg.num_vars)
    m.values[...] = -1
    coords = cfg.grid.coords(rank)
    g = cfg.ghost_width
    for cell in itertools.product(*(range(n) for n in cfg.extents)):
        gcell = [c * n + i for c, n, i in zip(coords, cfg.extents, cell)]
        for v in range(cfg.num_vars):
            m.values[(v,) + tuple(i + g for i in cell)] = v * 1000 + sum(
                gc * 100 ** k for k, gc in enumerate(reversed(gcell)))
    return m


@pytest.mark.parametrize("strategy", X.STRATEGIES)
def test_two_rank_stamped(strategy):
    cfg = cfg_for(2, (4, 4, 4), grid_dims=(2, 1, 1))
    meshes = exchange_once(cfg, [stamp(cfg, r) for r in range(2)], strategy)
    N = cfg.global_extents
    for rank, m in enumerate(meshes):
        for cell in itertools.product(*(range(n + 2) for n in cfg.extents)):
            gcell = [(c * n + i - 1) % NN for c, n, i, NN in
                     zip(cfg.grid.coords(rank), cfg.extents, cell, N)]
            for v in range(3):
                expect = v * 1000 + sum(gc * 100 ** k for k, gc in enumerate(reversed(gcell)))
                assert m.values[(v,) + cell] == expect


@pytest.mark.parametrize("strategy", X.STRATEGIES)
@pytest.mark.parametrize("workers", [1, 3])
def test_single_rank_self_exchange(strategy, workers):
    cfg = cfg_for(1, (3, 4, 5), workers)
    m = initial_mesh(cfg, 0)
    got = exchange_once(cfg, [m.copy()], strategy)[0].values
    v = m.values[:, 1:-1, 1:-1, 1:-1]
    want = np.pad(v, ((0, 0), (1, 1), (1, 1), (1, 1)), mode="wrap")
    np.testing.assert_array_equal(got, want)


@pytest.mark.parametrize("strategy", X.STRATEGIES)
def test_2x2x2_matches_brute_force(strategy):
    cfg = cfg_for(8, (4, 4, 4), 2, seed=11)
    meshes = [initial_mesh(cfg, r) for r in range(8)]
    want = brute_force_oracle(cfg, meshes)
    got = exchange_once(cfg, [m.copy() for m in meshes], strategy)
    for a, b in zip(got, want):
        assert a.values.tobytes() == b.tobytes()


@pytest.mark.parametrize("ranks,cells,periodic", [
    (4, (5, 3), True), (6, (3, 4), (True, False)), (8, (2, 3, 4), (False, True, False)),
    (3, (4, 4, 4), False)])
def test_harness_oracle_agrees_with_brute_force(ranks, cells, periodic):
    cfg = cfg_for(ranks, cells, periodic=periodic, seed=5)
    meshes = [initial_mesh(cfg, r) for r in range(ranks)]
    for a, b in zip(oracle_post_state(cfg, meshes), brute_force_oracle(cfg, meshes)):
        np.testing.assert_array_equal(a, b)
    for strategy in X.STRATEGIES:
        got = exchange_once(cfg, [m.copy() for m in meshes], strategy)
        for a, b in zip(got, brute_force_oracle(cfg, meshes)):
            np.testing.assert_array_equal(a.values, b)


def test_ghost_width_two():
    cfg = cfg_for(4, (4, 3, 5), 2, ghost_width=2, seed=1)
    meshes = [initial_mesh(cfg, r) for r in range(4)]
    want = brute_force_oracle(cfg, meshes)
    for strategy in X.STRATEGIES:
        got = exchange_once(cfg, [m.copy() for m in meshes], strategy)
        for a, b in zip(got, want):
            np.testing.assert_array_equal(a.values, b)


def test_persistent_lockstep_with_nonblocking_1000_iterations():
    cfg = cfg_for(2, (2, 2, 2), grid_dims=(2, 1, 1))
    world = World(2)
    mismatches = Counter()

    def rank_main(rank):
        comm = Comm(world.endpoints[rank])
        plan_nb = X.MessagePlan.build(cfg.grid, rank, cfg.extents)
        plan_p = X.MessagePlan.build(cfg.grid, rank, cfg.extents)
        a, b = initial_mesh(cfg, rank), initial_mesh(cfg, rank)
        with X.WorkerPool(1) as pool:
            reqs = X.persistent_init(plan_p, comm)
            assert comm.counters.start_calls == 0
            for it in range(1000):
                a.owned[...] += it
                b.owned[...] += it
                X.exchange_nonblocking(plan_nb, a, comm, pool)
                X.persistent_exchange(plan_p, b, reqs, pool)
                if a.values.tobytes() != b.values.tobytes():
                    mismatches[rank] += 1
            X.persistent_destroy(reqs)
            n = len(plan_p) * 2
            assert comm.counters.init_calls == n
            assert comm.counters.start_calls == 1000 * n
            assert comm.counters.request_setups == n + 1000 * n
        return a

    meshes = launch(world, rank_main, 60)
    assert not mismatches
    # and the final state is the exchange of the final owned values
    want = brute_force_oracle(cfg, [m.copy() for m in meshes])
    for m, w in zip(meshes, want):
        np.testing.assert_array_equal(m.values, w)


def run_counted(cfg, strategy, k):
    world = World(cfg.ranks)
    cfg = cfg.with_strategy(strategy)

    def rank_main(rank):
        comm = Comm(world.endpoints[rank])
        plan = X.MessagePlan.build(cfg.grid, rank, cfg.extents, n_parts=cfg.n_parts)
        mesh = initial_mesh(cfg, rank)
        with X.WorkerPool(cfg.n_workers) as pool:
            ex = X.Exchanger(strategy, plan, comm, pool)
            ex.init()
            for _ in range(k):
                ex.exchange(mesh)
            ex.destroy()
        return len(plan), comm.counters.snapshot()

    return launch(world, rank_main, 60)


@pytest.mark.parametrize("strategy", X.STRATEGIES)
def test_counters_after_k_iterations(strategy):
    cfg = cfg_for(2, (3, 3, 3), 2)
    k = 17
    for n_dirs, c in run_counted(cfg, strategy, k):
        n = 2 * n_dirs
        if strategy == "nonblocking":
            assert c["request_setups"] == k * n and c["init_calls"] == 0
        else:
            assert c["request_setups"] == c["init_calls"] == n
            assert c["start_calls"] == k * n
        assert c["pready_calls"] == (k * n_dirs * 2 if strategy == "partitioned" else 0)


def test_partitioned_single_part_identical_to_persistent():
    cfg = cfg_for(4, (3, 5, 2), 1, seed=2)
    meshes = [initial_mesh(cfg, r) for r in range(4)]
    a = exchange_once(cfg, [m.copy() for m in meshes], "persistent")
    b = exchange_once(cfg, [m.copy() for m in meshes], "partitioned")
    assert [m.values.tobytes() for m in a] == [m.values.tobytes() for m in b]


def test_partitioned_padding_never_leaks():
    cfg = cfg_for(2, (3, 5, 7), 4, seed=3)
    plan = X.MessagePlan.build(cfg.grid, 0, cfg.extents, n_parts=4)
    assert any(e.send_buf.logical_len % 4 for e in plan.entries)
    sentinel = 1.2345e308
    poisoned = Counter()

    def poison(env):
        ps = env.payload.shape[0]
        logical = {e.send_tag: e.send_buf.logical_len for e in plan.entries}[env.tag]
        tail = logical - env.part * ps
        if tail < ps:
            env.payload[max(tail, 0):] = sentinel
            poisoned[env.tag] += 1

    meshes = [initial_mesh(cfg, r) for r in range(2)]
    got = exchange_once(cfg, [m.copy() for m in meshes], "partitioned", observer=poison)
    assert poisoned
    assert not any((m.values == sentinel).any() for m in got)
    for a, b in zip(got, brute_force_oracle(cfg, meshes)):
        np.testing.assert_array_equal(a.values, b)


@pytest.mark.parametrize("schedule", list(itertools.permutations(range(3))))
def test_partitioned_adversarial_schedule(schedule):
    cfg = cfg_for(2, (4, 2, 5), 3, seed=4)
    meshes = [initial_mesh(cfg, r) for r in range(2)]
    got = exchange_once(cfg, [m.copy() for m in meshes], "partitioned", schedule=schedule)
    for a, b in zip(got, brute_force_oracle(cfg, meshes)):
        np.testing.assert_array_equal(a.values, b)


def test_partition_never_sent_before_packed(monkeypatch):
    cfg = cfg_for(2, (4, 3, 5), 4, seed=6)
    meshes = [initial_mesh(cfg, r) for r in range(2)]
    rank_of = {id(m): r for r, m in enumerate(meshes)}
    packed, shipped = Counter(), Counter()
    violations = []
    real = X.pack_slice

    def fenced(mesh, region, buf, part_index, n_parts):
        real(mesh, region, buf, part_index, n_parts)
        from halobench.grid import offset_tag
        packed[(rank_of[id(mesh)], offset_tag(region.offset), part_index)] += 1

    def check(env):
        key = (env.src, env.tag, env.part)
        shipped[key] += 1
        if packed[key] < shipped[key]:
            violations.append(key)

    monkeypatch.setattr(X, "pack_slice", fenced)
    exchange_once(cfg, meshes, "partitioned", exchanges=3, observer=check)
    assert shipped and not violations


@pytest.mark.parametrize("strategy", X.STRATEGIES)
def test_second_exchange_is_fixed_point(strategy):
    cfg = cfg_for(4, (3, 3, 3), 2, seed=8)
    meshes = exchange_once(cfg, [initial_mesh(cfg, r) for r in range(4)], strategy)
    once = [m.values.copy() for m in meshes]
    exchange_once(cfg, meshes, strategy)
    for a, b in zip(once, meshes):
        np.testing.assert_array_equal(a, b.values)


def seven_point(values, g=1):
    """In-place 7-point average on owned cells, fixed summation order."""
    c = values[:, g:-g, g:-g, g:-g]
    total = c.copy()
    for axis in (1, 2, 3):
        for shift in (-1, 1):
            sl = [slice(None), slice(g, -g), slice(g, -g), slice(g, -g)]
            sl[axis] = slice(g + shift, values.shape[axis] - g + shift)
            total = total + values[tuple(sl)]
    values[:, g:-g, g:-g, g:-g] = total / 7.0


def global_seven_point(glob):
    total = glob.copy()
    for axis in (1, 2, 3):
        for shift in (-1, 1):
            total = total + np.roll(glob, -shift, axis=axis)
    return total / 7.0


@pytest.mark.parametrize("strategy", X.STRATEGIES)
def test_jacobi_matches_global_reference(strategy):
    cfg = cfg_for(8, (4, 4, 4), 2, seed=9)
    meshes = [initial_mesh(cfg, r) for r in range(8)]
    glob = np.empty((3,) + cfg.global_extents)
    for r, m in enumerate(meshes):
        box = tuple(slice(c * n, (c + 1) * n) for c, n in zip(cfg.grid.coords(r), cfg.extents))
        glob[(slice(None),) + box] = m.owned
    steps = 10
    world = World(8)

    def rank_main(rank):
        comm = Comm(world.endpoints[rank])
        plan = X.MessagePlan.build(cfg.grid, rank, cfg.extents, n_parts=cfg.with_strategy(strategy).n_parts)
        with X.WorkerPool(2) as pool:
            ex = X.Exchanger(strategy, plan, comm, pool)
            ex.init()
            for _ in range(steps):
                ex.exchange(meshes[rank])
                seven_point(meshes[rank].values)
            ex.destroy()

    launch(world, rank_main, 60)
    for _ in range(steps):
        glob = global_seven_point(glob)
    for r, m in enumerate(meshes):
        box = tuple(slice(c * n, (c + 1) * n) for c, n in zip(cfg.grid.coords(r), cfg.extents))
        assert m.owned.tobytes() == np.ascontiguousarray(glob[(slice(None),) + box]).tobytes()


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(ranks=st.sampled_from([1, 2, 4, 8]), cells=st.tuples(*[st.integers(1, 5)] * 3),
       workers=st.integers(1, 4), seed=st.integers(0, 1000))
def test_cross_strategy_equivalence_property(ranks, cells, workers, seed):
    cfg = cfg_for(ranks, cells, workers, seed=seed)
    meshes = [initial_mesh(cfg, r) for r in range(ranks)]
    want = oracle_post_state(cfg, meshes)
    for strategy in X.STRATEGIES:
        got = exchange_once(cfg, [m.copy() for m in meshes], strategy)
        assert [m.values.tobytes() for m in got] == [w.tobytes() for w in want]


@pytest.mark.parametrize("strategy", X.STRATEGIES)
def test_2d_exchange(strategy):
    cfg = cfg_for(6, (4, 5), 2, seed=10)
    meshes = [initial_mesh(cfg, r) for r in range(6)]
    got = exchange_once(cfg, [m.copy() for m in meshes], strategy)
    for a, b in zip(got, brute_force_oracle(cfg, meshes)):
        np.testing.assert_array_equal(a.values, b)


def test_persistent_exchange_after_destroy_is_state_error():
    world = World(1)
    cfg = cfg_for(1, (2, 2, 2))
    comm = Comm(world.endpoints[0])
    plan = X.MessagePlan.build(cfg.grid, 0, cfg.extents)
    mesh = initial_mesh(cfg, 0)
    with X.WorkerPool(1) as pool:
        ex = X.Exchanger("persistent", plan, comm, pool)
        with pytest.raises(RequestStateError):
            ex.exchange(mesh)
        ex.init()
        ex.destroy()
        with pytest.raises(RequestStateError):
            ex.exchange(mesh)


def test_init_destroy_without_exchange():
    world = World(1)
    cfg = cfg_for(1, (2, 2, 2))
    comm = Comm(world.endpoints[0])
    for strategy, n_parts in (("persistent", 1), ("partitioned", 2)):
        plan = X.MessagePlan.build(cfg.grid, 0, cfg.extents, n_parts=n_parts)
        reqs = (X.persistent_init(plan, comm) if strategy == "persistent"
                else X.partitioned_init(plan, comm))
        assert all(r.state == "initialized" for r in reqs)
        for r in reqs:
            r.free()


def test_partitioned_requires_one_part_per_worker():
    world = World(1)
    cfg = cfg_for(1, (2, 2, 2))
    plan = X.MessagePlan.build(cfg.grid, 0, cfg.extents, n_parts=2)
    comm = Comm(world.endpoints[0])
    reqs = X.partitioned_init(plan, comm)
    with pytest.raises(ValueError):
        X.partitioned_init(plan, comm, n_parts=3)
    with X.WorkerPool(3) as pool, pytest.raises(ValueError):
        X.partitioned_exchange(plan, initial_mesh(cfg, 0), reqs, pool)


def test_plan_shape():
    cfg = cfg_for(8, (4, 4, 4))
    plan = X.MessagePlan.build(cfg.grid, 3, cfg.extents, n_parts=4)
    assert len(plan) == 26
    assert len({e.send_tag for e in plan.entries}) == 26
    for e in plan.entries:
        assert e.send_buf.padded_len == e.n_parts * e.part_size
    assert plan.max_message_scalars == 48


def test_worker_pool_validation():
    with pytest.raises(ValueError):
        X.WorkerPool(0)
    with pytest.raises(ValueError):
        X.WorkerPool(3, schedule=[0, 0, 1])
    seen = []
    X.WorkerPool(3, schedule=[2, 0, 1]).run(seen.append)
    assert seen == [2, 0, 1]
    with X.WorkerPool(4) as pool:
        got = []
        pool.run(got.append)
        assert sorted(got) == [0, 1, 2, 3]
