"""Benchmark and verification driver.

Every run builds a fresh world of rank threads. A rank sets up its mesh and
strategy, enters a global barrier, times ``iterations`` exchanges with a
monotonic clock, then tears its requests down. Init and destroy sit outside
the timed region. A run's time is the slowest rank's time, and a report
averages over ``runs``.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .comm import Comm
from .exchange import STRATEGIES, Exchanger, MessagePlan, WorkerPool
from .grid import ProcessGrid, build_process_grid
from .meshdata import LocalMesh, unpack
from .transport import AbortedError, Envelope, World

logger = logging.getLogger(__name__)

CSV_HEADER = ("strategy,ranks,grid,workers,parts,vars,cells_per_rank,message_scalars,iterations,"
              "run,seconds_total,seconds_per_exchange,init_calls,start_calls,pready_calls,"
              "request_setups")

PAD_SENTINEL = -7.0e300


class ConfigError(ValueError):
    pass


class WatchdogTimeout(RuntimeError):
    def __init__(self, timeout: float, unmatched: list[str]):
        self.unmatched = unmatched
        shown = "; ".join(unmatched[:20]) or "none (ranks blocked outside messaging)"
        more = f" (+{len(unmatched) - 20} more)" if len(unmatched) > 20 else ""
        super().__init__(f"no progress for {timeout}s; unmatched messages: {shown}{more}")


@dataclass
class BenchConfig:
    ranks: int = 8
    global_extents: Optional[tuple[int, ...]] = None
    grid_dims: Optional[tuple[int, ...]] = None
    dimensionality: Optional[int] = None
    n_workers: int = 4
    strategy: str = "nonblocking"
    iterations: int = 1000
    runs: int = 3
    num_vars: int = 3
    ghost_width: int = 1
    periodic: bool | tuple[bool, ...] = True
    seed: int = 0
    mode: str = "bench"
    timeout: float = 30.0
    cells_per_rank_default: int = 16

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.mode not in ("bench", "verify"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("ranks", "n_workers", "runs", "num_vars", "ghost_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        ndim = self.dimensionality
        for given in (self.global_extents, self.grid_dims):
            if given is not None:
                if ndim is not None and len(given) != ndim:
                    raise ConfigError("cells, grid and dimensionality disagree")
                ndim = len(given)
        ndim = ndim or 3
        if ndim not in (2, 3):
            raise ConfigError(f"dimensionality must be 2 or 3, got {ndim}")
        self.dimensionality = ndim
        periodic = self.periodic
        if isinstance(periodic, bool):
            periodic = (periodic,) * ndim
        if len(periodic) != ndim:
            raise ConfigError("periodic flags must match dimensionality")
        self.periodic = tuple(periodic)
        if self.grid_dims is not None:
            if int(np.prod(self.grid_dims)) != self.ranks:
                raise ConfigError(f"grid {self.grid_dims} does not hold {self.ranks} ranks")
            self.grid = ProcessGrid(tuple(self.grid_dims), self.periodic)
        else:
            self.grid = build_process_grid(self.ranks, ndim, self.periodic)
        if self.global_extents is None:
            self.global_extents = tuple(d * self.cells_per_rank_default for d in self.grid.dims)
        if any(n % d for n, d in zip(self.global_extents, self.grid.dims)):
            raise ConfigError(
                f"global extents {self.global_extents} not divisible by grid {self.grid.dims}")
        self.extents = tuple(n // d for n, d in zip(self.global_extents, self.grid.dims))
        if any(n < self.ghost_width for n in self.extents):
            raise ConfigError(f"per-rank extents {self.extents} smaller than ghost width")

    @property
    def n_parts(self) -> int:
        return self.n_workers if self.strategy == "partitioned" else 1

    def with_strategy(self, strategy: str) -> "BenchConfig":
        return replace(self, strategy=strategy)


@dataclass
class RunRecord:
    run: int
    seconds_total: float
    rank_seconds: list[float]
    counters: dict[str, int]
    timed_counter_delta: dict[str, int]

    def seconds_per_exchange(self, iterations: int) -> float:
        return self.seconds_total / iterations if iterations else 0.0


@dataclass
class TimingReport:
    config: BenchConfig
    runs: list[RunRecord]
    message_scalars: int
    n_messages: int
    checksum: str

    @property
    def mean_seconds(self) -> float:
        return float(np.mean([r.seconds_total for r in self.runs])) if self.runs else 0.0

    @property
    def mean_seconds_per_exchange(self) -> float:
        it = self.config.iterations
        return self.mean_seconds / it if it else 0.0


def _noop(_event):
    pass


def launch(world: World, target: Callable[[int], object], timeout: float) -> list:
    """Run ``target(rank)`` on one thread per rank and collect the results.

    Raises :class:`WatchdogTimeout` naming unmatched messages once no message
    has been delivered and no barrier completed for ``timeout`` seconds, or
    re-raises the first rank failure.
    """
    results: list = [None] * world.size
    errors: list[Optional[BaseException]] = [None] * world.size

    def body(rank):
        try:
            results[rank] = target(rank)
        except BaseException as exc:  # noqa: BLE001 - re-raised on the caller thread
            errors[rank] = exc
            world.abort()

    threads = [threading.Thread(target=body, args=(r,), name=f"rank{r}", daemon=True)
               for r in range(world.size)]
    for t in threads:
        t.start()
    last, stalled_since = world.progress, time.monotonic()
    poll = min(0.5, timeout / 10)
    for t in threads:
        while t.is_alive():
            t.join(poll)
            now, progress = time.monotonic(), world.progress
            if progress != last:
                last, stalled_since = progress, now
            elif now - stalled_since > timeout:
                unmatched = world.unmatched()
                world.abort()
                for u in threads:
                    u.join(1.0)
                raise WatchdogTimeout(timeout, unmatched)
    primary = [e for e in errors if e is not None and not isinstance(e, AbortedError)]
    if primary:
        raise primary[0]
    aborted = [e for e in errors if e is not None]
    if aborted:
        raise aborted[0]
    return results


def initial_mesh(cfg: BenchConfig, rank: int, seed: int | None = None) -> LocalMesh:
    """Random owned values (dyadic, exact) and a ghost layer of -1."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, rank])
    mesh = LocalMesh(cfg.extents, cfg.ghost_width, cfg.num_vars)
    mesh.values[...] = -1.0
    mesh.owned[...] = rng.integers(0, 1 << 20, size=mesh.owned.shape) / 1024.0
    return mesh


def stamped_mesh(cfg: BenchConfig, rank: int) -> LocalMesh:
    """Owned cells hold ``var * 1e9 + flat global cell index``; ghosts hold -1."""
    mesh = LocalMesh(cfg.extents, cfg.ghost_width, cfg.num_vars)
    mesh.values[...] = -1.0
    coords = cfg.grid.coords(rank)
    axes = [np.arange(c * n, (c + 1) * n) for c, n in zip(coords, cfg.extents)]
    flat = np.ravel_multi_index(np.meshgrid(*axes, indexing="ij"), cfg.global_extents)
    for v in range(cfg.num_vars):
        mesh.owned[v] = v * 1e9 + flat
    return mesh


def oracle_post_state(cfg: BenchConfig, meshes: Sequence[LocalMesh]) -> list[np.ndarray]:
    """Post-exchange padded arrays computed from one global array, with no messaging."""
    grid, g = cfg.grid, cfg.ghost_width
    glob = np.empty((cfg.num_vars,) + tuple(cfg.global_extents))
    for rank, mesh in enumerate(meshes):
        coords = grid.coords(rank)
        box = tuple(slice(c * n, (c + 1) * n) for c, n in zip(coords, cfg.extents))
        glob[(slice(None),) + box] = mesh.owned
    out = []
    for rank, mesh in enumerate(meshes):
        coords = grid.coords(rank)
        idx, ok = [], []
        for c, n, N, p in zip(coords, cfg.extents, cfg.global_extents, grid.periodic):
            gi = c * n + np.arange(n + 2 * g) - g
            ok.append((gi >= 0) & (gi < N) | p)
            idx.append(gi % N)
        expected = mesh.values.copy()
        mask = np.ones(mesh.padded_extents, dtype=bool)
        for a, valid in enumerate(ok):
            shape = [1] * len(ok)
            shape[a] = -1
            mask = mask & valid.reshape(shape)
        gathered = glob[(slice(None),) + np.ix_(*idx)]
        expected[:, mask] = gathered[:, mask]
        out.append(expected)
    return out


def first_divergence(got: Sequence[np.ndarray], want: Sequence[np.ndarray]):
    """``(rank, var, cell)`` of the first mismatch in rank/var/lexicographic order, else None."""
    for rank, (a, b) in enumerate(zip(got, want)):
        diff = np.argwhere(a != b)
        if diff.size:
            first = tuple(int(i) for i in diff[0])
            return rank, first[0], first[1:]
    return None


def exchange_once(cfg: BenchConfig, meshes: list[LocalMesh], strategy: str, *,
                  exchanges: int = 1, observer: Callable[[Envelope], None] | None = None,
                  unpack_fn=unpack, schedule: Sequence[int] | None = None) -> list[LocalMesh]:
    """Run ``exchanges`` halo exchanges of ``strategy`` in place on per-rank meshes."""
    cfg = cfg.with_strategy(strategy)
    world = World(cfg.ranks)
    if observer is not None:
        world.observers.append(observer)

    def rank_main(rank):
        comm = Comm(world.endpoints[rank])
        plan = MessagePlan.build(cfg.grid, rank, cfg.extents, cfg.ghost_width, cfg.num_vars,
                                 cfg.n_parts)
        with WorkerPool(cfg.n_workers, schedule) as pool:
            ex = Exchanger(strategy, plan, comm, pool, unpack_fn=unpack_fn)
            ex.init()
            for _ in range(exchanges):
                ex.exchange(meshes[rank])
            ex.destroy()
        return comm.counters.snapshot()

    launch(world, rank_main, cfg.timeout)
    return meshes


def state_checksum(meshes: Sequence[LocalMesh]) -> str:
    h = hashlib.sha256()
    for m in meshes:
        h.update(np.ascontiguousarray(m.values).tobytes())
    return h.hexdigest()


def run_benchmark(cfg: BenchConfig, trace: list | None = None) -> TimingReport:
    """Time ``cfg.runs`` runs of ``cfg.iterations`` exchanges each.

    When ``trace`` is given, every rank appends ``(run, rank, event)`` tuples
    with events ``init``, ``barrier``, ``timer_start``, ``exchange``,
    ``timer_stop``, ``destroy``.
    """
    records = []
    checksum = ""
    plan0 = MessagePlan.build(cfg.grid, 0, cfg.extents, cfg.ghost_width, cfg.num_vars, cfg.n_parts)
    for run in range(1, cfg.runs + 1):
        world = World(cfg.ranks)
        meshes = [initial_mesh(cfg, r) for r in range(cfg.ranks)]

        def rank_main(rank, run=run, world=world, meshes=meshes):
            emit = (lambda ev: trace.append((run, rank, ev))) if trace is not None else _noop
            comm = Comm(world.endpoints[rank])
            plan = MessagePlan.build(cfg.grid, rank, cfg.extents, cfg.ghost_width, cfg.num_vars,
                                     cfg.n_parts)
            mesh = meshes[rank]
            with WorkerPool(cfg.n_workers) as pool:
                ex = Exchanger(cfg.strategy, plan, comm, pool)
                ex.init()
                emit("init")
                world.barrier()
                emit("barrier")
                before = comm.counters.snapshot()
                emit("timer_start")
                t0 = time.perf_counter()
                for _ in range(cfg.iterations):
                    ex.exchange(mesh)
                    emit("exchange")
                elapsed = time.perf_counter() - t0
                emit("timer_stop")
                after = comm.counters.snapshot()
                ex.destroy()
                emit("destroy")
            delta = {k: after[k] - before[k] for k in after}
            return elapsed, comm.counters.snapshot(), delta

        results = launch(world, rank_main, cfg.timeout)
        seconds = [r[0] for r in results]
        records.append(RunRecord(run, max(seconds), seconds, results[0][1], results[0][2]))
        checksum = state_checksum(meshes)
        logger.info("%s run %d: %.6fs", cfg.strategy, run, max(seconds))
    return TimingReport(cfg, records, plan0.max_message_scalars, len(plan0), checksum)


@dataclass
class CheckResult:
    name: str
    strategy: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def first_failure(self) -> Optional[CheckResult]:
        return next((c for c in self.checks if not c.passed), None)

    def summary(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name} [{c.strategy}] {c.detail}".rstrip()
                 for c in self.checks]
        return "\n".join(lines)


def _compare(name, strategy, got, want) -> CheckResult:
    div = first_divergence([m.values for m in got], want)
    if div is None:
        return CheckResult(name, strategy, True)
    rank, var, cell = div
    return CheckResult(name, strategy, False,
                       f"first divergence at rank {rank}, var {var}, cell {cell}: "
                       f"got {got[rank].values[(var,) + cell]!r}, "
                       f"expected {want[rank][(var,) + cell]!r}")


def run_verification(cfg: BenchConfig, strategies: Sequence[str] = STRATEGIES,
                     unpack_fn=unpack) -> VerificationReport:
    """Check every strategy against communication-free oracles at ``cfg``'s scale.

    * stamped: ghosts must hold the global-index stamp of the wrapped cell.
    * differential: random meshes must match the global-array oracle exactly.
    * padding: poisoned padding in every partitioned message must never reach a mesh.

    ``unpack_fn`` is a fault-injection hook for testing the verifier itself.
    """
    report = VerificationReport()
    ranks = range(cfg.ranks)
    stamped = [stamped_mesh(cfg, r) for r in ranks]
    want_stamped = oracle_post_state(cfg, stamped)
    randomized = [initial_mesh(cfg, r) for r in ranks]
    want_random = oracle_post_state(cfg, randomized)
    for strategy in strategies:
        got = exchange_once(cfg, [m.copy() for m in stamped], strategy, unpack_fn=unpack_fn)
        report.checks.append(_compare("stamped", strategy, got, want_stamped))
        got = exchange_once(cfg, [m.copy() for m in randomized], strategy, unpack_fn=unpack_fn)
        report.checks.append(_compare("differential", strategy, got, want_random))

    if "partitioned" in strategies:
        padded = [0]
        logical_by_tag = {
            e.send_tag: e.send_buf.logical_len
            for r in ranks
            for e in MessagePlan.build(cfg.grid, r, cfg.extents, cfg.ghost_width,
                                       cfg.num_vars).entries
        }

        def poison(env: Envelope):
            # the final partition carries the padding; overwrite it in flight
            if env.part == env.n_parts - 1:
                logical = logical_by_tag[env.tag]
                tail = logical - env.part * env.payload.shape[0]
                if tail < env.payload.shape[0]:
                    padded[0] += 1
                    env.payload[max(tail, 0):] = PAD_SENTINEL

        got = exchange_once(cfg, [m.copy() for m in randomized], "partitioned", observer=poison,
                            unpack_fn=unpack_fn)
        leaked = sum(int(np.count_nonzero(m.values == PAD_SENTINEL)) for m in got)
        res = _compare("padding", "partitioned", got, want_random)
        if leaked:
            res = CheckResult("padding", "partitioned", False,
                              f"{leaked} padding sentinels reached mesh cells")
        elif res.passed:
            res.detail = f"{padded[0]} padded partitions poisoned"
        report.checks.append(res)
    return report


def csv_rows(report: TimingReport) -> list[dict]:
    cfg = report.config
    rows = []
    for rec in report.runs:
        c = rec.counters
        rows.append({
            "strategy": cfg.strategy,
            "ranks": cfg.ranks,
            "grid": str(cfg.grid),
            "workers": cfg.n_workers,
            "parts": cfg.n_parts,
            "vars": cfg.num_vars,
            "cells_per_rank": "x".join(str(n) for n in cfg.extents),
            "message_scalars": report.message_scalars,
            "iterations": cfg.iterations,
            "run": rec.run,
            "seconds_total": f"{rec.seconds_total:.9f}",
            "seconds_per_exchange": f"{rec.seconds_per_exchange(cfg.iterations):.9e}",
            "init_calls": c["init_calls"],
            "start_calls": c["start_calls"],
            "pready_calls": c["pready_calls"],
            "request_setups": c["request_setups"],
        })
    return rows


def emit_csv(report: TimingReport, path: str | os.PathLike) -> None:
    """Append one row per run; the header is written only to a new or empty file."""
    fieldnames = CSV_HEADER.split(",")
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        if new:
            writer.writeheader()
        writer.writerows(csv_rows(report))
