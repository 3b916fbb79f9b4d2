"""In-process simulated cluster and the communication primitives built on it.

Every logical rank runs in its own thread and owns a :class:`CommContext`.
Payloads are serialized on send and deserialized on receive, so ranks never
share mutable state.  All collectives are composed from point-to-point
messages; the per-rank :class:`Counters` therefore report their true cost.

A real message-passing runtime can be slotted in by providing an object with
the same ``rank``/``size``/``send``/``recv`` and collective methods.
"""
from __future__ import annotations

import collections
import dataclasses
import logging
import pickle
import threading
import time
from typing import Any, Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0

_REDUCE_OPS = {
    "sum": np.add,
    "max": np.maximum,
    "min": np.minimum,
}


class ClusterError(RuntimeError):
    """Base class for failures surfaced by :func:`run_cluster`."""


class RankFailure(ClusterError):
    """A rank's program raised; the original exception is ``__cause__``."""

    def __init__(self, rank: int, exc: BaseException):
        super().__init__(f"rank {rank} failed: {type(exc).__name__}: {exc}")
        self.rank = rank
        self.exc = exc


class DeadlockError(ClusterError):
    """A receive or collective did not complete within the timeout."""

    def __init__(self, rank: int, operation: str, missing: Sequence[int], timeout: float):
        missing = sorted(missing)
        super().__init__(
            f"rank {rank} timed out after {timeout:g}s in {operation}; "
            f"ranks that never entered: {missing}"
        )
        self.rank = rank
        self.operation = operation
        self.missing = missing


class ClusterAborted(ClusterError):
    """Raised in surviving ranks once another rank has failed."""


@dataclasses.dataclass
class Counters:
    messages_sent: int = 0
    bytes_sent: int = 0
    messages_received: int = 0
    collectives_entered: int = 0

    def snapshot(self) -> "Counters":
        return dataclasses.replace(self)

    def __sub__(self, other: "Counters") -> "Counters":
        return Counters(
            *(getattr(self, f.name) - getattr(other, f.name) for f in dataclasses.fields(self))
        )


class _Mailbox:
    # Messages are matched on (source, tag); each such stream is FIFO.

    def __init__(self, cluster: "SimulatedCluster"):
        self._cluster = cluster
        self._cond = threading.Condition()
        self._queues: dict[tuple[int, Any], collections.deque] = collections.defaultdict(
            collections.deque
        )

    def put(self, src: int, tag: Any, data: bytes) -> None:
        with self._cond:
            self._queues[(src, tag)].append(data)
            self._cond.notify_all()

    def get(self, src: int, tag: Any, timeout: float) -> bytes | None:
        deadline = time.monotonic() + timeout
        key = (src, tag)
        with self._cond:
            while True:
                q = self._queues.get(key)
                if q:
                    data = q.popleft()
                    if not q:
                        del self._queues[key]
                    return data
                if self._cluster.aborted:
                    raise ClusterAborted("cluster aborted by a failing rank")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)

    def wake(self) -> None:
        with self._cond:
            self._cond.notify_all()


class SimulatedCluster:
    """A fixed set of ranks with per-destination mailboxes."""

    def __init__(self, size: int, timeout: float = DEFAULT_TIMEOUT):
        if size < 1:
            raise ValueError(f"cluster size must be >= 1, got {size}")
        self.size = size
        self.timeout = timeout
        self.aborted = False
        self._mailboxes = [_Mailbox(self) for _ in range(size)]
        # seq -> collective name, per rank; only used for deadlock diagnostics
        self._entries: list[dict[int, str]] = [{} for _ in range(size)]
        self._entries_lock = threading.Lock()
        self.contexts = [CommContext(self, r) for r in range(size)]

    def _record_entry(self, rank: int, seq: int, name: str) -> None:
        with self._entries_lock:
            self._entries[rank][seq] = name

    def _missing_for(self, seq: int, name: str) -> list[int]:
        with self._entries_lock:
            return [r for r in range(self.size) if self._entries[r].get(seq) != name]

    def abort(self) -> None:
        self.aborted = True
        for box in self._mailboxes:
            box.wake()

    def run(self, program: Callable[..., Any], *args: Any) -> list[Any]:
        results: list[Any] = [None] * self.size
        failures: list[tuple[float, int, BaseException]] = []
        lock = threading.Lock()

        def target(rank: int) -> None:
            ctx = self.contexts[rank]
            outer = getattr(_local, "ctx", None)
            _local.ctx = ctx
            try:
                results[rank] = program(ctx, *args)
            except BaseException as exc:  # noqa: BLE001 - re-raised in the controller
                with lock:
                    failures.append((time.monotonic(), rank, exc))
                self.abort()
            finally:
                _local.ctx = outer

        if self.size == 1:
            target(0)
        else:
            threads = [
                threading.Thread(target=target, args=(r,), name=f"rank-{r}", daemon=True)
                for r in range(self.size)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

        if failures:
            real = [f for f in failures if not isinstance(f[2], ClusterAborted)]
            _, rank, exc = min(real or failures, key=lambda f: (f[0], f[1]))
            if isinstance(exc, DeadlockError):
                raise exc
            raise RankFailure(rank, exc) from exc
        return results


_local = threading.local()


def current_context() -> "CommContext":
    """Context of the calling rank; outside a cluster, a private one-rank context."""
    ctx = getattr(_local, "ctx", None)
    if ctx is None:
        ctx = getattr(_local, "serial", None)
        if ctx is None:
            ctx = SimulatedCluster(1).contexts[0]
            _local.serial = ctx
    return ctx


def run_cluster(
    size: int,
    program: Callable[..., Any],
    *args: Any,
    timeout: float = DEFAULT_TIMEOUT,
) -> list[Any]:
    """Run ``program(ctx, *args)`` on ``size`` ranks and return results by rank."""
    return SimulatedCluster(size, timeout=timeout).run(program, *args)


def _combine(op: str, a: Any, b: Any) -> Any:
    if a is None:
        return b
    if b is None:
        return a
    return _REDUCE_OPS[op](a, b)


class CommContext:
    """One rank's view of the cluster.

    Confined to a single thread at a time.  Collective calls must be made
    in the same order by every rank; any mismatch surfaces as a
    :class:`DeadlockError` once the timeout expires.
    """

    def __init__(self, cluster: SimulatedCluster, rank: int):
        self.cluster = cluster
        self.rank = rank
        self.size = cluster.size
        self.counters = Counters()
        self._seq = 0

    def __repr__(self) -> str:
        return f"CommContext(rank={self.rank}, size={self.size})"

    # -- point-to-point --------------------------------------------------

    def _send(self, dest: int, payload: Any, tag: Any) -> None:
        if not 0 <= dest < self.size:
            raise ValueError(f"invalid destination rank {dest}")
        data = pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL)
        self.counters.messages_sent += 1
        self.counters.bytes_sent += len(data)
        self.cluster._mailboxes[dest].put(self.rank, tag, data)

    def _recv(self, src: int, tag: Any, operation: str, missing: Callable[[], list[int]]) -> Any:
        if not 0 <= src < self.size:
            raise ValueError(f"invalid source rank {src}")
        timeout = self.cluster.timeout
        data = self.cluster._mailboxes[self.rank].get(src, tag, timeout)
        if data is None:
            raise DeadlockError(self.rank, operation, missing(), timeout)
        self.counters.messages_received += 1
        return pickle.loads(data)

    def send(self, dest: int, payload: Any, tag: int = 0) -> None:
        self._send(dest, payload, ("p2p", tag))

    def recv(self, src: int, tag: int = 0) -> Any:
        return self._recv(src, ("p2p", tag), f"recv from {src}", lambda: [src])

    # -- collectives ----------------------------------------------------

    def _enter(self, name: str) -> tuple:
        seq = self._seq
        self._seq += 1
        self.counters.collectives_entered += 1
        self.cluster._record_entry(self.rank, seq, name)
        return ("coll", seq, name)

    def _crecv(self, src: int, tag: tuple) -> Any:
        _, seq, name = tag
        return self._recv(
            src, tag, f"{name} (collective #{seq})",
            lambda: self.cluster._missing_for(seq, name),
        )

    def barrier(self) -> None:
        tag = self._enter("barrier")
        if self.rank == 0:
            for r in range(1, self.size):
                self._crecv(r, tag)
            for r in range(1, self.size):
                self._send(r, None, tag)
        else:
            self._send(0, None, tag)
            self._crecv(0, tag)

    def broadcast(self, root: int, payload: Any = None) -> Any:
        tag = self._enter("broadcast")
        return self._bcast(root, payload, tag)

    def _bcast(self, root: int, payload: Any, tag: tuple) -> Any:
        if self.rank == root:
            for r in range(self.size):
                if r != root:
                    self._send(r, payload, tag)
            return payload
        return self._crecv(root, tag)

    def gather(self, root: int, local: Any) -> list[Any] | None:
        """Collect ``local`` from every rank at ``root`` (rank order); ``None`` elsewhere."""
        tag = self._enter("gather")
        if self.rank != root:
            self._send(root, local, tag)
            return None
        return [local if r == root else self._crecv(r, tag) for r in range(self.size)]

    def allgather(self, local: Any) -> list[Any]:
        tag = self._enter("allgather")
        for r in range(self.size):
            if r != self.rank:
                self._send(r, local, tag)
        return [local if r == self.rank else self._crecv(r, tag) for r in range(self.size)]

    def allreduce(self, op: str, local: Any) -> Any:
        """Reduce with ``op`` in {'sum', 'max', 'min'}; ``None`` contributes nothing.

        Contributions are folded in rank order at rank 0 and the result is
        broadcast, so every rank sees bit-identical values.
        """
        if op not in _REDUCE_OPS:
            raise ValueError(f"unknown reduction {op!r}")
        tag = self._enter("allreduce")
        if self.rank == 0:
            acc = local
            for r in range(1, self.size):
                acc = _combine(op, acc, self._crecv(r, tag))
            return self._bcast(0, acc, tag)
        self._send(0, local, tag)
        return self._bcast(0, None, tag)

    def exscan(self, op: str, local: Any) -> Any:
        """Exclusive prefix reduction; rank 0 receives the additive identity.

        Implemented as a chain so it costs ``size - 1`` messages.
        """
        if op != "sum":
            raise ValueError("exscan supports only 'sum'")
        tag = self._enter("exscan")
        if self.rank == 0:
            prefix = np.zeros_like(local) if isinstance(local, np.ndarray) else type(local)(0)
        else:
            prefix = self._crecv(self.rank - 1, tag)
        if self.rank + 1 < self.size:
            self._send(self.rank + 1, prefix + local, tag)
        return prefix

    def alltoallv(self, buffers: Sequence[Any]) -> list[Any]:
        """Send ``buffers[d]`` to rank ``d``; return what every source sent here."""
        if len(buffers) != self.size:
            raise ValueError(f"expected {self.size} buffers, got {len(buffers)}")
        tag = self._enter("alltoallv")
        for r in range(self.size):
            if r != self.rank:
                self._send(r, buffers[r], tag)
        return [buffers[r] if r == self.rank else self._crecv(r, tag) for r in range(self.size)]
