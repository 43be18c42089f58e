"""In-process message passing between ranks that run as threads of one process.

Sends are buffered: the payload is copied and deposited at the destination
endpoint before :func:`Endpoint.post_send` returns, so a send handle is always
complete. Matching happens inside the posting call (caller-driven progress)
on the key ``(src, tag, part)``, oldest first, which gives MPI's
non-overtaking order per ``(src, dst, tag)``.

``part`` and ``n_parts`` are a side channel used by partitioned requests;
ordinary messages leave them as ``None``.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

logger = logging.getLogger(__name__)

_POLL = 0.05


class TransportError(RuntimeError):
    pass


class TruncationError(TransportError):
    """An envelope was longer than the matching receive's capacity."""


class PartitionMismatchError(TransportError):
    """Sender and receiver disagree on the partition count of a message."""


class DeadlockError(TransportError):
    """A wait exceeded its timeout; the message names what is still unmatched."""


class AbortedError(TransportError):
    """The world was aborted while this call was blocked."""


@dataclass
class Envelope:
    src: int
    dst: int
    tag: int
    seq: int
    payload: np.ndarray
    part: Optional[int] = None
    n_parts: Optional[int] = None


_COMPLETED = threading.Event()
_COMPLETED.set()


class TransferHandle:
    """Completion token for one posted send or receive."""

    __slots__ = ("world", "kind", "peer", "tag", "part", "count", "error", "_out", "_event")

    def __init__(self, world: "World", kind: str, peer: int, tag: int, part=None, out=None,
                 count: int | None = None):
        self.world = world
        self.kind = kind
        self.peer = peer
        self.tag = tag
        self.part = part
        self.error: Optional[BaseException] = None
        self._out = out
        if count is None:
            self.count = 0
            self._event = threading.Event()
        else:  # born complete: buffered sends
            self.count = count
            self._event = _COMPLETED

    @property
    def done(self) -> bool:
        return self._event.is_set()

    @property
    def data(self) -> np.ndarray:
        """Received elements (receive handles only)."""
        return self._out[:self.count]

    def _complete(self, count: int = 0, error: BaseException | None = None):
        self.count = count
        self.error = error
        self._event.set()

    def wait(self, timeout: float | None = None) -> "TransferHandle":
        if not self._event.is_set():
            deadline = None if timeout is None else time.monotonic() + timeout
            while not self._event.wait(_POLL):
                if self.world.aborted:
                    raise AbortedError(f"aborted while waiting on {self!r}")
                if deadline is not None and time.monotonic() > deadline:
                    raise DeadlockError(
                        f"{self!r} did not complete within {timeout}s; unmatched: "
                        + "; ".join(self.world.unmatched()))
        if self.error is not None:
            raise self.error
        return self

    def __repr__(self):
        part = "" if self.part is None else f" part={self.part}"
        return f"<{self.kind} peer={self.peer} tag={self.tag}{part}>"


@dataclass
class _RecvDescriptor:
    handle: TransferHandle
    out: np.ndarray
    n_parts: Optional[int]


class Endpoint:
    """One rank's mailbox. Safe to call from several workers of that rank at once."""

    def __init__(self, world: "World", rank: int):
        self.world = world
        self.rank = rank
        self._lock = threading.Lock()
        self._inbox: dict[tuple, deque] = defaultdict(deque)
        self._pending: dict[tuple, deque] = defaultdict(deque)
        self._seq: dict[tuple, int] = defaultdict(int)
        self.delivered = 0

    def post_send(self, dst: int, tag: int, payload, part: int | None = None,
                  n_parts: int | None = None) -> TransferHandle:
        self.world._check_rank(dst)
        if tag < 0:
            raise ValueError(f"tag must be non-negative, got {tag}")
        data = np.array(payload, dtype=np.float64, copy=True).reshape(-1)
        env = Envelope(self.rank, dst, tag, -1, data, part, n_parts)
        self.world.endpoints[dst]._deliver(env)
        return TransferHandle(self.world, "send", dst, tag, part, count=data.shape[0])

    def post_recv(self, src: int, tag: int, capacity: int, out: np.ndarray | None = None,
                  part: int | None = None, n_parts: int | None = None) -> TransferHandle:
        self.world._check_rank(src)
        if capacity < 0:
            raise ValueError(f"capacity must be non-negative, got {capacity}")
        if out is None:
            out = np.empty(capacity)
        elif out.shape[0] < capacity:
            raise ValueError("receive buffer smaller than capacity")
        handle = TransferHandle(self.world, "recv", src, tag, part, out[:capacity])
        desc = _RecvDescriptor(handle, out[:capacity], n_parts)
        key = (src, tag, part)
        with self._lock:
            queue = self._inbox.get(key)
            env = queue.popleft() if queue else None
            if env is None:
                self._pending[key].append(desc)
        if env is not None:
            self._fill(desc, env)
        return handle

    def _deliver(self, env: Envelope):
        for observer in self.world.observers:
            observer(env)
        key = (env.src, env.tag, env.part)
        with self._lock:
            seq_key = (env.src, env.tag)
            env.seq = self._seq[seq_key]
            self._seq[seq_key] += 1
            self.delivered += 1
            queue = self._pending.get(key)
            desc = queue.popleft() if queue else None
            if desc is None:
                self._inbox[key].append(env)
        if desc is not None:
            self._fill(desc, env)

    @staticmethod
    def _fill(desc: _RecvDescriptor, env: Envelope):
        handle = desc.handle
        n = env.payload.shape[0]
        if desc.n_parts != env.n_parts:
            handle._complete(0, PartitionMismatchError(
                f"rank {env.dst} expects {desc.n_parts} partitions from rank {env.src} "
                f"tag {env.tag}, sender uses {env.n_parts}"))
        elif n > desc.out.shape[0]:
            handle._complete(0, TruncationError(
                f"message of {n} elements from rank {env.src} tag {env.tag} exceeds "
                f"receive capacity {desc.out.shape[0]}"))
        else:
            desc.out[:n] = env.payload
            handle._complete(n)

    def unmatched(self) -> list[str]:
        out = []
        with self._lock:
            for (src, tag, part), q in self._pending.items():
                for _ in q:
                    out.append(f"rank {self.rank} recv from {src} tag {tag}"
                               + ("" if part is None else f" part {part}"))
            for (src, tag, part), q in self._inbox.items():
                for _ in q:
                    out.append(f"rank {self.rank} unreceived from {src} tag {tag}"
                               + ("" if part is None else f" part {part}"))
        return out


class Barrier:
    """Reusable group barrier; ``generation`` counts completed rounds."""

    def __init__(self, world: "World", parties: int):
        self.world = world
        self.parties = parties
        self.generation = 0
        self._count = 0
        self._cond = threading.Condition()

    def wait(self, timeout: float | None = None) -> int:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            gen = self.generation
            self._count += 1
            if self._count == self.parties:
                self._count = 0
                self.generation += 1
                self._cond.notify_all()
                return gen
            while self.generation == gen:
                self._cond.wait(_POLL)
                if self.generation != gen:
                    break
                if self.world.aborted:
                    raise AbortedError("aborted inside barrier")
                if deadline is not None and time.monotonic() > deadline:
                    raise DeadlockError(
                        f"barrier generation {gen}: {self._count}/{self.parties} arrived")
        return gen


class World:
    """A group of ``size`` endpoints sharing one barrier."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError(f"world size must be >= 1, got {size}")
        self.size = size
        self.endpoints = [Endpoint(self, r) for r in range(size)]
        self.barrier_ = Barrier(self, size)
        self.observers: list[Callable[[Envelope], None]] = []
        self._aborted = threading.Event()

    def _check_rank(self, rank: int):
        if not 0 <= rank < self.size:
            raise ValueError(f"rank {rank} outside world of size {self.size}")

    def barrier(self, timeout: float | None = None) -> int:
        return self.barrier_.wait(timeout)

    @property
    def aborted(self) -> bool:
        return self._aborted.is_set()

    @property
    def progress(self) -> int:
        """Monotone count of deliveries and completed barriers; stalls only when ranks hang."""
        return sum(ep.delivered for ep in self.endpoints) + self.barrier_.generation

    def abort(self):
        """Wake every blocked wait in this world with :class:`AbortedError`."""
        self._aborted.set()

    def unmatched(self) -> list[str]:
        out = []
        for ep in self.endpoints:
            out.extend(ep.unmatched())
        return out
