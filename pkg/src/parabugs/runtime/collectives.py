"""Collective communication inside one chain's worker group.

A :class:`Communicator` only has to provide :meth:`Communicator.exchange`
(every rank contributes one float vector and receives all of them in
rank order).  The reduce and gather operations are built on top of it,
so their arithmetic is identical on every backend:

* :func:`all_reduce_sum` adds the contributions in fixed rank order
  ``0, 1, ..., C-1``, never in tree order, so the sum is bit-reproducible.
* :func:`all_gather` returns the per-rank vectors unchanged.

Two backends exist.  :class:`ThreadGroup` runs ranks as threads of one
process; :class:`ProcessGroup` uses forked processes with a shared-memory
double buffer.  Both synchronise with a barrier and slot the payloads
into one of two halves of a buffer that alternate between collectives,
so a fast rank can publish its next payload while a slow one is still
reading the previous exchange.
"""

from __future__ import annotations

import threading

import numpy as np

from ..errors import ChainAborted

DEFAULT_TIMEOUT = 3600.0


class Communicator:
    """Base class: one rank's endpoint of a worker group."""

    def __init__(self, rank, size):
        self.rank = int(rank)
        self.size = int(size)
        self.n_collectives = 0

    @property
    def is_lead(self):
        return self.rank == 0

    def exchange(self, payload):
        self.n_collectives += 1
        if self.size == 1:
            return [np.asarray(payload, dtype=float)]
        return self._exchange(np.asarray(payload, dtype=float))

    def _exchange(self, payload):
        raise NotImplementedError


class SoloCommunicator(Communicator):
    def __init__(self):
        super().__init__(0, 1)


def all_reduce_sum(group, value):
    """Sum of every rank's ``value``, accumulated in rank order."""
    parts = group.exchange(np.array([value], dtype=float))
    total = 0.0
    for p in parts:
        total += float(p[0])
    return total


def all_gather(group, values):
    """List of every rank's value vector, indexed by rank."""
    return group.exchange(values)


# ----------------------------------------------------------------------
# threads


class ThreadGroup:
    """Shared context for the ranks of one group running as threads."""

    def __init__(self, size, timeout=DEFAULT_TIMEOUT):
        self.size = int(size)
        self.barrier = threading.Barrier(self.size, timeout=timeout)
        self.slots = [[None] * self.size, [None] * self.size]

    def communicator(self, rank):
        return ThreadCommunicator(self, rank)

    def abort(self):
        self.barrier.abort()


class ThreadCommunicator(Communicator):
    def __init__(self, group, rank):
        super().__init__(rank, group.size)
        self.group = group
        self.parity = 0

    def _exchange(self, payload):
        slots = self.group.slots[self.parity]
        slots[self.rank] = payload
        try:
            self.group.barrier.wait()
        except threading.BrokenBarrierError:
            raise ChainAborted("a worker in this chain failed") from None
        out = list(slots)
        self.parity ^= 1
        return out


# ----------------------------------------------------------------------
# processes


class ProcessGroup:
    """Shared-memory context for ranks running as forked processes.

    ``capacity`` is the longest payload any collective will carry.
    """

    def __init__(self, ctx, size, capacity, timeout=DEFAULT_TIMEOUT):
        self.size = int(size)
        self.capacity = max(int(capacity), 1)
        self.timeout = timeout
        self.barrier = ctx.Barrier(self.size)
        self.data = ctx.RawArray("d", 2 * self.size * self.capacity)
        self.lengths = ctx.RawArray("q", 2 * self.size)

    def communicator(self, rank):
        return ProcessCommunicator(self, rank)

    def abort(self):
        self.barrier.abort()


class ProcessCommunicator(Communicator):
    def __init__(self, group, rank):
        super().__init__(rank, group.size)
        self.group = group
        self.parity = 0
        size, cap = group.size, group.capacity
        self._data = np.frombuffer(group.data, dtype=np.float64).reshape(2, size, cap)
        self._lengths = np.frombuffer(group.lengths, dtype=np.int64).reshape(2, size)

    def _exchange(self, payload):
        n = len(payload)
        if n > self.group.capacity:
            raise ChainAborted(f"payload of {n} values exceeds buffer capacity")
        half = self.parity
        self._data[half, self.rank, :n] = payload
        self._lengths[half, self.rank] = n
        try:
            self.group.barrier.wait(self.group.timeout)
        except threading.BrokenBarrierError:
            raise ChainAborted("a worker in this chain failed") from None
        out = [
            self._data[half, r, : self._lengths[half, r]].copy() for r in range(self.size)
        ]
        self.parity ^= 1
        return out
