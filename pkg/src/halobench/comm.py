"""Non-blocking, persistent and partitioned requests on top of :mod:`halobench.transport`.

Each rank owns one :class:`Comm`. Request lifecycles are explicit state
machines; an illegal transition raises :class:`RequestStateError` instead of
silently misbehaving.

Persistent::

    initialized --start--> started --wait--> inactive --start--> ...
    initialized | inactive --free--> freed

Partitioned requests follow the same machine. A started send partition only
leaves the rank when :meth:`PartitionedRequest.pready` is called for it; each
partition travels as its own sub-message keyed by partition index, and the
receiver places it at ``index * part_size``.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .transport import AbortedError, DeadlockError, Endpoint, TransferHandle

INITIALIZED = "initialized"
STARTED = "started"
INACTIVE = "inactive"
ACTIVE = "active"
COMPLETE = "complete"
FREED = "freed"


class RequestStateError(RuntimeError):
    """A request operation was called in a state that does not allow it."""


@dataclass
class CommCounters:
    init_calls: int = 0
    start_calls: int = 0
    pready_calls: int = 0
    request_setups: int = 0
    waits: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    def add(self, name: str, k: int = 1):
        with self._lock:
            setattr(self, name, getattr(self, name) + k)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {f.name: getattr(self, f.name) for f in fields(self)}


class Request:
    direction: str
    state: str

    def __init__(self, comm: "Comm", direction: str, peer: int, tag: int, buffer: np.ndarray):
        if direction not in ("send", "recv"):
            raise ValueError(direction)
        comm.endpoint.world._check_rank(peer)
        self.comm = comm
        self.direction = direction
        self.peer = peer
        self.tag = tag
        self.buffer = buffer

    def __repr__(self):
        return (f"<{type(self).__name__} {self.direction} rank {self.comm.rank}"
                f"{'->' if self.direction == 'send' else '<-'}{self.peer} tag {self.tag} {self.state}>")


class NonblockingRequest(Request):
    """A one-shot transfer; it is released when its wait completes."""

    def __init__(self, comm, direction, peer, tag, buffer):
        super().__init__(comm, direction, peer, tag, buffer)
        ep = comm.endpoint
        if direction == "send":
            self._handle = ep.post_send(peer, tag, buffer)
        else:
            self._handle = ep.post_recv(peer, tag, buffer.shape[0], out=buffer)
        self.state = ACTIVE
        comm.counters.add("request_setups")

    def wait(self, timeout: float | None = None):
        if self.state == COMPLETE:
            return
        self._handle.wait(timeout)
        self.state = COMPLETE
        self.comm.counters.add("waits")

    def test(self) -> bool:
        return self._handle.done


class PersistentRequest(Request):
    def __init__(self, comm, direction, peer, tag, buffer):
        super().__init__(comm, direction, peer, tag, buffer)
        self.state = INITIALIZED
        self._handle: TransferHandle | None = None
        comm.counters.add("init_calls")
        comm.counters.add("request_setups")

    def _check_startable(self):
        if self.state not in (INITIALIZED, INACTIVE):
            raise RequestStateError(f"cannot start {self!r}")

    def start(self):
        self._check_startable()
        self.state = STARTED
        self.comm.counters.add("start_calls")
        ep = self.comm.endpoint
        if self.direction == "send":
            self._handle = ep.post_send(self.peer, self.tag, self.buffer)
        else:
            self._handle = ep.post_recv(self.peer, self.tag, self.buffer.shape[0], out=self.buffer)

    def wait(self, timeout: float | None = None):
        if self.state != STARTED:
            raise RequestStateError(f"cannot wait on {self!r}")
        self._handle.wait(timeout)
        self.state = INACTIVE
        self.comm.counters.add("waits")

    def free(self):
        if self.state in (STARTED, FREED):
            raise RequestStateError(f"cannot free {self!r}")
        self.state = FREED
        self.buffer = None


class PartitionedRequest(PersistentRequest):
    """A persistent message split into ``n_parts`` equal partitions."""

    def __init__(self, comm, direction, peer, tag, buffer, n_parts: int):
        if n_parts < 1:
            raise ValueError(f"n_parts must be >= 1, got {n_parts}")
        if buffer.shape[0] % n_parts:
            raise ValueError(
                f"buffer length {buffer.shape[0]} is not padded to a multiple of {n_parts} partitions")
        super().__init__(comm, direction, peer, tag, buffer)
        self.n_parts = n_parts
        self.part_size = buffer.shape[0] // n_parts
        self._flags = [False] * n_parts  # ready (send) or unused (recv)
        self._n_ready = 0
        self._handles: list[TransferHandle | None] = [None] * n_parts
        self._cond = threading.Condition()
        self._generation = 0

    def _part(self, p: int) -> np.ndarray:
        return self.buffer[p * self.part_size:(p + 1) * self.part_size]

    def _check_index(self, p: int):
        if not 0 <= p < self.n_parts:
            raise IndexError(f"partition {p} outside [0, {self.n_parts})")

    def start(self):
        self._check_startable()
        with self._cond:
            self._flags = [False] * self.n_parts
            self._n_ready = 0
            self._handles = [None] * self.n_parts
            self._generation += 1
            self.state = STARTED
        self.comm.counters.add("start_calls")
        if self.direction == "recv":
            ep = self.comm.endpoint
            for p in range(self.n_parts):
                self._handles[p] = ep.post_recv(self.peer, self.tag, self.part_size,
                                                out=self._part(p), part=p, n_parts=self.n_parts)

    def pready(self, p: int):
        """Release send partition ``p``; its data must already be in the buffer."""
        if self.direction != "send":
            raise RequestStateError(f"pready on receive request {self!r}")
        self._check_index(p)
        with self._cond:
            if self.state != STARTED:
                raise RequestStateError(f"pready({p}) on {self!r}")
            if self._flags[p]:
                raise RequestStateError(f"partition {p} of {self!r} already marked ready")
            self._flags[p] = True
        self._handles[p] = self.comm.endpoint.post_send(
            self.peer, self.tag, self._part(p), part=p, n_parts=self.n_parts)
        self.comm.counters.add("pready_calls")
        with self._cond:
            self._n_ready += 1
            if self._n_ready == self.n_parts:
                self._cond.notify_all()

    def parrived(self, p: int) -> bool:
        """True once receive partition ``p`` of the current generation is in the buffer."""
        if self.direction != "recv":
            raise RequestStateError(f"parrived on send request {self!r}")
        self._check_index(p)
        if self.state not in (STARTED, INACTIVE) or self._generation == 0:
            raise RequestStateError(f"parrived({p}) on {self!r}")
        h = self._handles[p]
        if not h.done:
            return False
        if h.error is not None:
            raise h.error
        return True

    def wait(self, timeout: float | None = None):
        if self.state != STARTED:
            raise RequestStateError(f"cannot wait on {self!r}")
        deadline = None if timeout is None else time.monotonic() + timeout
        if self.direction == "send":
            world = self.comm.endpoint.world
            with self._cond:
                while self._n_ready < self.n_parts:
                    self._cond.wait(0.05)
                    if world.aborted:
                        raise AbortedError(f"aborted while waiting on {self!r}")
                    if deadline is not None and time.monotonic() > deadline:
                        missing = [p for p, f in enumerate(self._flags) if not f]
                        raise DeadlockError(f"{self!r}: partitions {missing} never marked ready")
        for h in self._handles:
            h.wait(None if deadline is None else max(0.0, deadline - time.monotonic()))
        self.state = INACTIVE
        self.comm.counters.add("waits")


class Comm:
    """Per-rank request factory and counter owner."""

    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint
        self.rank = endpoint.rank
        self.counters = CommCounters()

    def isend(self, peer: int, tag: int, buffer: np.ndarray) -> NonblockingRequest:
        return NonblockingRequest(self, "send", peer, tag, buffer)

    def irecv(self, peer: int, tag: int, buffer: np.ndarray) -> NonblockingRequest:
        return NonblockingRequest(self, "recv", peer, tag, buffer)

    def send_init(self, peer: int, tag: int, buffer: np.ndarray) -> PersistentRequest:
        return PersistentRequest(self, "send", peer, tag, buffer)

    def recv_init(self, peer: int, tag: int, buffer: np.ndarray) -> PersistentRequest:
        return PersistentRequest(self, "recv", peer, tag, buffer)

    def psend_init(self, peer: int, tag: int, buffer: np.ndarray, n_parts: int) -> PartitionedRequest:
        return PartitionedRequest(self, "send", peer, tag, buffer, n_parts)

    def precv_init(self, peer: int, tag: int, buffer: np.ndarray, n_parts: int) -> PartitionedRequest:
        return PartitionedRequest(self, "recv", peer, tag, buffer, n_parts)


def start_all(requests: Sequence[PersistentRequest]):
    """Start every request; nothing is started if any one of them is not startable."""
    for r in requests:
        r._check_startable()
    for r in requests:
        r.start()


pstart_all = start_all


def wait_all(requests: Iterable[Request], timeout: float | None = None):
    deadline = None if timeout is None else time.monotonic() + timeout
    for r in requests:
        r.wait(None if deadline is None else max(0.0, deadline - time.monotonic()))


def pready(request: PartitionedRequest, part_index: int):
    request.pready(part_index)


def parrived(request: PartitionedRequest, part_index: int) -> bool:
    return request.parrived(part_index)


def request_free(request: PersistentRequest):
    request.free()


prequest_free = request_free
