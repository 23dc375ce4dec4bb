"""Simulated distributed runtime over an N-dimensional worker grid.

Workers are threads running the same program (SPMD) and interacting only
through blocking collectives -- All-Reduce, All-Gather, Reduce-Scatter --
plus point-to-point mailboxes.  Reductions always combine contributions in
ascending rank order, so results are bitwise deterministic regardless of
scheduling.  Word counters track the communication volume of every
collective; no latency model is simulated.

Rank linearization follows the tensor layout: rank = p_1 + P_1 p_2 + ...
with the mode-1 coordinate varying fastest.  The mode-n slice of a worker
is the set of workers sharing its n-th coordinate (P/P_n of them).
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np


def block_partition(length: int, parts: int):
    """Balanced contiguous block lengths: first (length % parts) blocks get
    the extra element."""
    if length < 0 or parts < 1:
        raise ValueError(f"bad partition request: length={length}, parts={parts}")
    base, extra = divmod(length, parts)
    return DistMap([base + 1 if k < extra else base for k in range(parts)])


class DistMap:
    """Contiguous block partition of [0, I): block lengths and offsets."""

    __slots__ = ("lengths", "offsets")

    def __init__(self, lengths):
        self.lengths = tuple(int(x) for x in lengths)
        if any(x < 0 for x in self.lengths):
            raise ValueError("block lengths must be nonnegative")
        offs = [0]
        for x in self.lengths:
            offs.append(offs[-1] + x)
        self.offsets = tuple(offs)

    @property
    def total(self) -> int:
        return self.offsets[-1]

    @property
    def parts(self) -> int:
        return len(self.lengths)

    def block(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])


@dataclass
class CommCounters:
    """Per-worker tallies of collective calls, words moved, and wall time."""

    calls: dict = field(default_factory=dict)
    words_in: dict = field(default_factory=dict)
    words_out: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)

    def record(self, name: str, words_in: int, words_out: int, elapsed: float):
        self.calls[name] = self.calls.get(name, 0) + 1
        self.words_in[name] = self.words_in.get(name, 0) + words_in
        self.words_out[name] = self.words_out.get(name, 0) + words_out
        self.seconds[name] = self.seconds.get(name, 0.0) + elapsed

    def snapshot(self) -> dict:
        return {
            "calls": dict(self.calls),
            "words_in": dict(self.words_in),
            "words_out": dict(self.words_out),
        }

    def total_words(self) -> int:
        return sum(self.words_in.values()) + sum(self.words_out.values())

    def merged_with(self, other: "CommCounters") -> "CommCounters":
        out = CommCounters()
        for src in (self, other):
            for name, c in src.calls.items():
                out.calls[name] = out.calls.get(name, 0) + c
                out.words_in[name] = out.words_in.get(name, 0) + src.words_in.get(name, 0)
                out.words_out[name] = out.words_out.get(name, 0) + src.words_out.get(name, 0)
                out.seconds[name] = out.seconds.get(name, 0.0) + src.seconds.get(name, 0.0)
        return out


class _Rendezvous:
    """Slot exchange for one group: post, wait, read, wait, go."""

    def __init__(self, size: int):
        self.slots = [None] * size
        self._enter = threading.Barrier(size)
        self._leave = threading.Barrier(size)

    def exchange(self, index: int, value):
        self.slots[index] = value
        self._enter.wait()
        view = list(self.slots)
        self._leave.wait()
        return view

    def abort(self):
        self._enter.abort()
        self._leave.abort()


class Group:
    """Ordered set of global ranks sharing a rendezvous."""

    def __init__(self, ranks):
        self.ranks = tuple(sorted(ranks))
        self.index = {r: k for k, r in enumerate(self.ranks)}
        self.rendezvous = _Rendezvous(len(self.ranks))

    @property
    def size(self) -> int:
        return len(self.ranks)


class Grid:
    """P_1 x ... x P_N grid of simulated workers and their slice groups."""

    def __init__(self, shape):
        self.shape = tuple(int(p) for p in shape)
        if any(p < 1 for p in self.shape):
            raise ValueError(f"grid dims must be positive, got {self.shape}")
        self.total = int(np.prod(self.shape))
        self.all_procs = Group(range(self.total))
        # slice_groups[n][c] = workers whose n-th coordinate equals c
        self.slice_groups = []
        for n, pn in enumerate(self.shape):
            groups = [[] for _ in range(pn)]
            for rank in range(self.total):
                groups[self.coord_of(rank)[n]].append(rank)
            self.slice_groups.append([Group(g) for g in groups])

    def coord_of(self, rank: int):
        coord = []
        for p in self.shape:
            rank, c = divmod(rank, p)
            coord.append(c)
        return tuple(coord)

    def rank_of(self, coord) -> int:
        rank = 0
        stride = 1
        for c, p in zip(coord, self.shape):
            if not 0 <= c < p:
                raise ValueError(f"coordinate {coord} outside grid {self.shape}")
            rank += c * stride
            stride *= p
        return rank

    def slice_group(self, mode: int, coord: int) -> Group:
        return self.slice_groups[mode][coord]

    def _abort_all(self):
        self.all_procs.rendezvous.abort()
        for groups in self.slice_groups:
            for g in groups:
                g.rendezvous.abort()

    def run(self, fn, *args):
        """Execute ``fn(worker, *args)`` on every rank; list of results.

        The first worker exception aborts all pending collectives and is
        re-raised in the caller.
        """
        workers = [Worker(rank, self) for rank in range(self.total)]
        self._workers = workers
        results = [None] * self.total
        failures = [None] * self.total

        def main(w):
            try:
                results[w.rank] = fn(w, *args)
            except threading.BrokenBarrierError:
                pass
            except BaseException as exc:  # propagate to the caller
                failures[w.rank] = exc
                self._abort_all()

        threads = [
            threading.Thread(target=main, args=(w,), name=f"worker-{w.rank}")
            for w in workers
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for exc in failures:
            if exc is not None:
                raise exc
        return results


class Worker:
    """Execution context of one rank: coordinates, counters, collectives."""

    def __init__(self, rank: int, grid: Grid):
        self.rank = rank
        self.grid = grid
        self.coord = grid.coord_of(rank)
        self.counters = CommCounters()
        self.recorder = None
        self.mailbox = queue.Queue()
        self._pending = []

    def _record(self, category: str, elapsed: float):
        if self.recorder is not None:
            self.recorder(category, elapsed)

    # -- point-to-point plumbing ------------------------------------------

    def send(self, dst: int, payload):
        self.grid._workers[dst].mailbox.put((self.rank, payload))

    def recv(self, src: int = None):
        if src is not None:
            for k, (s, p) in enumerate(self._pending):
                if s == src:
                    self._pending.pop(k)
                    return p
        while True:
            s, p = self.mailbox.get()
            if src is None or s == src:
                return p
            self._pending.append((s, p))

    # -- collectives -------------------------------------------------------

    def all_reduce(self, group: Group, local, op: str = "sum"):
        """Elementwise reduction in ascending rank order, same result for
        every member."""
        t0 = time.perf_counter()
        scalar = np.ndim(local) == 0
        arr = np.atleast_1d(np.asarray(local, dtype=np.float64))
        slots = group.rendezvous.exchange(group.index[self.rank], arr)
        if any(s.shape != slots[0].shape for s in slots):
            raise ValueError("all_reduce length mismatch across group")
        if op == "sum":
            out = slots[0].copy()
            for s in slots[1:]:
                out += s
        elif op == "min":
            out = slots[0].copy()
            for s in slots[1:]:
                np.minimum(out, s, out=out)
        elif op == "max":
            out = slots[0].copy()
            for s in slots[1:]:
                np.maximum(out, s, out=out)
        else:
            raise ValueError(f"unknown reduction {op!r}")
        elapsed = time.perf_counter() - t0
        self.counters.record("AllReduce", arr.size, arr.size, elapsed)
        self._record("AllReduce", elapsed)
        return float(out[0]) if scalar else out

    def all_gather(self, group: Group, local: np.ndarray) -> np.ndarray:
        """Concatenation of the members' arrays in ascending rank order."""
        t0 = time.perf_counter()
        arr = np.asarray(local, dtype=np.float64)
        slots = group.rendezvous.exchange(group.index[self.rank], arr)
        out = np.concatenate(slots, axis=0)
        elapsed = time.perf_counter() - t0
        self.counters.record("AllGather", arr.size, out.size, elapsed)
        self._record("AllGather", elapsed)
        return out

    def reduce_scatter(self, group: Group, local: np.ndarray, parts: DistMap) -> np.ndarray:
        """Rank-ordered elementwise sum, then this member's row block."""
        t0 = time.perf_counter()
        arr = np.asarray(local, dtype=np.float64)
        if parts.parts != group.size:
            raise ValueError(
                f"partition has {parts.parts} blocks for a group of {group.size}"
            )
        if parts.total != arr.shape[0]:
            raise ValueError(
                f"partition covers {parts.total} rows, local array has {arr.shape[0]}"
            )
        slots = group.rendezvous.exchange(group.index[self.rank], arr)
        if any(s.shape != slots[0].shape for s in slots):
            raise ValueError("reduce_scatter length mismatch across group")
        total = slots[0].copy()
        for s in slots[1:]:
            total += s
        out = total[parts.block(group.index[self.rank])].copy()
        elapsed = time.perf_counter() - t0
        self.counters.record("ReduceScatter", arr.size, out.size, elapsed)
        self._record("ReduceScatter", elapsed)
        return out
