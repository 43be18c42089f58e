"""Halo-exchange strategies: non-blocking, persistent and partitioned.

All three follow pack -> communicate -> unpack and leave every ghost cell
equal to the matching owned boundary cell of its neighbor. They differ in how
requests are created and when partitions are released:

* non-blocking: parallel pack, isend all, irecv all, wait all, parallel unpack.
* persistent: requests built once; each exchange is pack, start all, wait all, unpack.
* partitioned: requests built once with one partition per worker; each exchange
  starts all requests *before* packing, and every worker packs its slice of
  each send buffer and marks that partition ready straight away.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from . import comm as C
from .grid import BoundaryRegion, ProcessGrid, boundary_regions, offset_tag
from .meshdata import LocalMesh, PackBuffer, pack, pack_slice, unpack

STRATEGIES = ("nonblocking", "persistent", "partitioned")


@dataclass
class MessageEntry:
    peer: int
    offset: tuple[int, ...]
    send_tag: int
    recv_tag: int
    send_region: BoundaryRegion
    recv_region: BoundaryRegion
    send_buf: PackBuffer
    recv_buf: PackBuffer

    @property
    def n_parts(self) -> int:
        return self.send_buf.n_parts

    @property
    def part_size(self) -> int:
        return self.send_buf.part_size


@dataclass
class MessagePlan:
    """Everything a rank needs to talk to its neighbors, one entry per direction."""

    rank: int
    entries: list[MessageEntry]
    num_vars: int
    n_parts: int

    @classmethod
    def build(cls, grid: ProcessGrid, rank: int, extents: Sequence[int], ghost_width: int = 1,
              num_vars: int = 3, n_parts: int = 1) -> "MessagePlan":
        entries = []
        for peer, send, recv in boundary_regions(extents, ghost_width, grid, grid.coords(rank)):
            mirror = tuple(-o for o in send.offset)
            entries.append(MessageEntry(
                peer=peer,
                offset=send.offset,
                # the neighbor at +o ships its -o region to us under tag(-o)
                send_tag=offset_tag(send.offset),
                recv_tag=offset_tag(mirror),
                send_region=send,
                recv_region=recv,
                send_buf=PackBuffer.for_region(send, num_vars, n_parts),
                recv_buf=PackBuffer.for_region(recv, num_vars, n_parts),
            ))
        return cls(rank, entries, num_vars, n_parts)

    def __len__(self):
        return len(self.entries)

    @property
    def max_message_scalars(self) -> int:
        return max((e.send_buf.logical_len for e in self.entries), default=0)


class WorkerPool:
    """Per-rank packing workers. The calling thread acts as worker 0.

    ``schedule`` forces the workers to run one at a time in the given order,
    which tests use to pin adversarial interleavings.
    """

    def __init__(self, n_workers: int, schedule: Optional[Sequence[int]] = None):
        if n_workers < 1:
            raise ValueError(f"n_workers must be >= 1, got {n_workers}")
        if schedule is not None and sorted(schedule) != list(range(n_workers)):
            raise ValueError(f"schedule must be a permutation of range({n_workers})")
        self.n_workers = n_workers
        self.schedule = list(schedule) if schedule is not None else None
        self._executor = None
        if n_workers > 1 and self.schedule is None:
            self._executor = ThreadPoolExecutor(n_workers - 1, thread_name_prefix="pack")

    def run(self, fn: Callable[[int], None]):
        if self.schedule is not None:
            for w in self.schedule:
                fn(w)
            return
        futures = [self._executor.submit(fn, w) for w in range(1, self.n_workers)] \
            if self._executor else []
        try:
            fn(0)
        finally:
            for f in futures:
                f.result()

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _pack_all(plan: MessagePlan, mesh: LocalMesh, pool: WorkerPool):
    entries, n = plan.entries, pool.n_workers

    def work(w):
        for e in entries[w::n]:
            pack(mesh, e.send_region, e.send_buf)

    pool.run(work)


def _unpack_all(plan: MessagePlan, mesh: LocalMesh, pool: WorkerPool, unpack_fn=unpack):
    entries, n = plan.entries, pool.n_workers

    def work(w):
        for e in entries[w::n]:
            unpack_fn(mesh, e.recv_region, e.recv_buf)

    pool.run(work)


def exchange_nonblocking(plan: MessagePlan, mesh: LocalMesh, comm: C.Comm, pool: WorkerPool,
                         timeout: float | None = None, unpack_fn=unpack):
    _pack_all(plan, mesh, pool)
    requests = [comm.isend(e.peer, e.send_tag, e.send_buf.elements) for e in plan.entries]
    requests += [comm.irecv(e.peer, e.recv_tag, e.recv_buf.elements) for e in plan.entries]
    C.wait_all(requests, timeout)
    _unpack_all(plan, mesh, pool, unpack_fn)


def persistent_init(plan: MessagePlan, comm: C.Comm) -> list[C.PersistentRequest]:
    """Sends first, then receives; no data moves."""
    requests = [comm.send_init(e.peer, e.send_tag, e.send_buf.elements) for e in plan.entries]
    requests += [comm.recv_init(e.peer, e.recv_tag, e.recv_buf.elements) for e in plan.entries]
    return requests


def persistent_exchange(plan: MessagePlan, mesh: LocalMesh, requests: list[C.PersistentRequest],
                        pool: WorkerPool, timeout: float | None = None, unpack_fn=unpack):
    _pack_all(plan, mesh, pool)
    C.start_all(requests)
    C.wait_all(requests, timeout)
    _unpack_all(plan, mesh, pool, unpack_fn)


def persistent_destroy(requests: list[C.PersistentRequest]):
    for r in requests:
        C.request_free(r)


def partitioned_init(plan: MessagePlan, comm: C.Comm,
                     n_parts: int | None = None) -> list[C.PartitionedRequest]:
    n_parts = plan.n_parts if n_parts is None else n_parts
    if n_parts != plan.n_parts:
        raise ValueError(f"plan buffers are laid out for {plan.n_parts} partitions, not {n_parts}")
    requests = [comm.psend_init(e.peer, e.send_tag, e.send_buf.elements, n_parts)
                for e in plan.entries]
    requests += [comm.precv_init(e.peer, e.recv_tag, e.recv_buf.elements, n_parts)
                 for e in plan.entries]
    return requests


def partitioned_exchange(plan: MessagePlan, mesh: LocalMesh, requests: list[C.PartitionedRequest],
                         pool: WorkerPool, timeout: float | None = None, unpack_fn=unpack):
    n_parts = plan.n_parts
    if pool.n_workers != n_parts:
        raise ValueError(f"{pool.n_workers} workers cannot drive {n_parts} partitions")
    entries = plan.entries
    sends = requests[:len(entries)]
    C.pstart_all(requests)

    def work(w):
        for e, req in zip(entries, sends):
            pack_slice(mesh, e.send_region, e.send_buf, w, n_parts)
            req.pready(w)

    pool.run(work)
    C.wait_all(requests, timeout)
    _unpack_all(plan, mesh, pool, unpack_fn)


def partitioned_destroy(requests: list[C.PartitionedRequest]):
    for r in requests:
        C.prequest_free(r)


class Exchanger:
    """Binds one strategy to a rank's plan, comm and pool behind init/exchange/destroy."""

    def __init__(self, strategy: str, plan: MessagePlan, comm: C.Comm, pool: WorkerPool,
                 timeout: float | None = None, unpack_fn=unpack):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        self.strategy = strategy
        self.plan = plan
        self.comm = comm
        self.pool = pool
        self.timeout = timeout
        self.unpack_fn = unpack_fn
        self.requests = None

    def init(self):
        if self.strategy == "persistent":
            self.requests = persistent_init(self.plan, self.comm)
        elif self.strategy == "partitioned":
            self.requests = partitioned_init(self.plan, self.comm)

    def exchange(self, mesh: LocalMesh):
        if self.strategy == "nonblocking":
            exchange_nonblocking(self.plan, mesh, self.comm, self.pool, self.timeout, self.unpack_fn)
            return
        if self.requests is None:
            raise C.RequestStateError(f"{self.strategy} exchange before init")
        if self.strategy == "persistent":
            persistent_exchange(self.plan, mesh, self.requests, self.pool, self.timeout,
                                self.unpack_fn)
        else:
            partitioned_exchange(self.plan, mesh, self.requests, self.pool, self.timeout,
                                 self.unpack_fn)

    def destroy(self):
        if self.strategy == "persistent":
            persistent_destroy(self.requests)
        elif self.strategy == "partitioned":
            partitioned_destroy(self.requests)
