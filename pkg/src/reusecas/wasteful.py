"""Allocate-per-operation descriptor provider with epoch reclamation.

The comparison baseline: every ``create_new`` allocates a fresh heap
record, handles never go stale (reads are unconditional), and storage is
reclaimed by a minimal blocking epoch scheme:

* A global epoch counter advances only when every non-quiescent process
  has announced the current epoch. Advancement is attempted every 64
  operation entries per process, amortizing the scan.
* Each process brackets every public operation with ``op_enter``/
  ``op_exit``; while outside any operation it is *quiescent* and never
  blocks advancement (a stalled process inside an operation delays frees
  but never corrupts — blocking reclamation).
* ``retire`` defers a record to its owner's limbo list stamped with the
  epoch current at retirement; the record is freed once the global epoch
  has advanced by two, at which point no operation that could still reach
  it can be running: a reference to the record can only be held by an
  operation that started before the record was unlinked, and two epoch
  advances require every such operation to have finished.

Footprint accounting mirrors the reusing provider's: per-process counters
of allocated/freed bytes with a running maximum, so both providers report
through the same meter.

With ``debug_canary=True`` freed records are replaced by a canary
sentinel instead of being dropped, so any read-after-free surfaces as
:class:`UseAfterFreeError` rather than silent reuse.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Sequence

from .descriptors import (
    ContractError,
    DescriptorType,
    FootprintCounters,
    MAX_PROCESSES,
    SEQ_BITS_MAX,
    aggregate_footprint,
    handle_owner,
    handle_seq,
    pack_handle,
)

#: How many operation entries a process performs between epoch-advance
#: attempts.
ADVANCE_PERIOD = 64

_SEQ_MASK = (1 << SEQ_BITS_MAX) - 1

#: Canary sentinel installed in place of freed records in debug mode.
_CANARY = object()


class UseAfterFreeError(RuntimeError):
    """A freed (canaried) descriptor record was dereferenced."""


class _Record:
    """One heap-allocated descriptor."""

    __slots__ = ("immutables", "mutables", "lock", "nbytes")

    def __init__(self, immutables: tuple[int, ...], mutables: int, nbytes: int):
        self.immutables = immutables
        self.mutables = mutables
        self.lock = threading.Lock()
        self.nbytes = nbytes


class WastefulProvider:
    """Descriptor provider that allocates per operation and reclaims by epochs."""

    def __init__(self, debug_canary: bool = False):
        self.debug_canary = debug_canary
        self._records: list[dict[int, object]] = []  # per process: seq -> _Record
        self._next_seq: list[int] = []
        self._limbo: list[deque] = []  # per process: (retire_epoch, seq, nbytes)
        self._counters: list[FootprintCounters] = []
        self._depth: list[int] = []
        self._enters: list[int] = []
        self._announced: list[int] = []  # (epoch << 1) | quiescent bit
        self._local_epoch: list[int] = []
        self._global_epoch = 0
        self._advance_lock = threading.Lock()
        self._registry_lock = threading.Lock()
        self.trace = None
        self.interrupt = None

    # -- registration --------------------------------------------------------

    def register_process(self) -> int:
        with self._registry_lock:
            if len(self._records) >= MAX_PROCESSES:
                raise ContractError(f"process limit {MAX_PROCESSES} reached")
            p = len(self._records)
            self._records.append({})
            self._next_seq.append(0)
            self._limbo.append(deque())
            self._counters.append(FootprintCounters())
            self._depth.append(0)
            self._enters.append(0)
            self._announced.append(1)  # epoch 0, quiescent
            self._local_epoch.append(0)
            return p

    def process_count(self) -> int:
        return len(self._records)

    # -- descriptor ADT --------------------------------------------------------

    def create_new(
        self,
        dtype: DescriptorType,
        p: int,
        immutables: Sequence[int],
        mutables: Sequence[int] = (),
    ) -> int:
        """Allocate a fresh descriptor record; the handle never goes stale."""
        if not 0 <= p < len(self._records):
            raise ContractError(f"process id {p} is not registered")
        dtype.check_immutable_values(immutables)
        mut_word = dtype.pack_mutable_values(mutables)
        seq = self._next_seq[p]
        self._next_seq[p] = (seq + 1) & _SEQ_MASK
        record = _Record(tuple(immutables), mut_word, dtype.record_bytes)
        self._records[p][seq] = record
        self._counters[p].on_malloc(record.nbytes)
        return pack_handle(p, seq)

    def _record(self, handle: int) -> _Record:
        owner = handle_owner(handle)
        seq = handle_seq(handle)
        record = self._records[owner].get(seq)
        if record is None:
            raise ContractError(
                f"descriptor {handle:#x} was reclaimed while still reachable"
            )
        if record is _CANARY:
            raise UseAfterFreeError(
                f"descriptor {handle:#x} dereferenced after free (canary hit)"
            )
        return record  # type: ignore[return-value]

    def read_field(self, dtype: DescriptorType, handle: int, fname: str, default=None):
        """Read one field; never reports staleness (``default`` is unused)."""
        record = self._record(handle)
        if dtype.is_immutable(fname):
            return record.immutables[dtype.immutable_position(fname)]
        return dtype.mutable_value(record.mutables, fname)

    def read_immutables(self, dtype: DescriptorType, handle: int):
        """All immutable fields; never ``None``."""
        return self._record(handle).immutables

    def write_field(
        self, dtype: DescriptorType, handle: int, fname: str, value: int
    ) -> None:
        shift, mask = dtype.mutable_layout(fname)
        record = self._record(handle)
        with record.lock:
            record.mutables = (record.mutables & ~(mask << shift)) | (
                (value & mask) << shift
            )

    def cas_field(
        self, dtype: DescriptorType, handle: int, fname: str, expected: int, new: int
    ):
        """CAS a mutable field; returns ``new`` on success, the witnessed
        conflicting value otherwise (never ``None``)."""
        shift, mask = dtype.mutable_layout(fname)
        record = self._record(handle)
        with record.lock:
            current = (record.mutables >> shift) & mask
            if current != expected:
                return current
            record.mutables = (record.mutables & ~(mask << shift)) | (
                (new & mask) << shift
            )
            return new

    # -- epoch-based reclamation -------------------------------------------

    def op_enter(self, p: int) -> None:
        """Enter an operation (reentrant); announces the current epoch."""
        depth = self._depth[p] + 1
        self._depth[p] = depth
        if depth == 1:
            epoch = self._global_epoch
            self._announced[p] = epoch << 1  # active
            if self._local_epoch[p] != epoch:
                self._local_epoch[p] = epoch
                self._collect(p, epoch)
        count = self._enters[p] + 1
        self._enters[p] = count
        if count % ADVANCE_PERIOD == 0:
            self.try_epoch_advance(p)

    def op_exit(self, p: int) -> None:
        """Leave an operation; at depth zero the process becomes quiescent."""
        depth = self._depth[p] - 1
        if depth < 0:
            raise ContractError(f"unbalanced op_exit for process {p}")
        self._depth[p] = depth
        if depth == 0:
            self._announced[p] |= 1  # quiescent

    def retire(self, dtype: DescriptorType, p: int, handle: int) -> None:
        """Defer freeing of ``handle`` (owned by ``p``) to a safe epoch."""
        if handle_owner(handle) != p:
            raise ContractError("a descriptor may only be retired by its owner")
        record = self._record(handle)
        self._limbo[p].append((self._global_epoch, handle_seq(handle), record.nbytes))

    def try_epoch_advance(self, p: int) -> bool:
        """Advance the global epoch if every process permits it.

        A process blocks advancement while it is inside an operation it
        entered under an older epoch. Returns True if the epoch moved.
        """
        epoch = self._global_epoch
        for announced in self._announced:
            if not (announced & 1) and (announced >> 1) != epoch:
                return False
        with self._advance_lock:
            if self._global_epoch == epoch:
                self._global_epoch = epoch + 1
        self._collect(p, self._global_epoch)
        return True

    def _collect(self, p: int, epoch: int) -> None:
        """Free ``p``'s limbo records retired two or more epochs ago."""
        limbo = self._limbo[p]
        records = self._records[p]
        counters = self._counters[p]
        while limbo and limbo[0][0] <= epoch - 2:
            _, seq, nbytes = limbo.popleft()
            if self.debug_canary:
                records[seq] = _CANARY
            else:
                del records[seq]
            counters.on_free(nbytes)

    @property
    def global_epoch(self) -> int:
        return self._global_epoch

    def live_record_count(self, p: int) -> int:
        """Records of process ``p`` not yet freed (canaries excluded)."""
        return sum(1 for r in self._records[p].values() if r is not _CANARY)

    # -- spec'd aliases for the reclamation hooks ----------------------------

    def epoch_enter(self, p: int) -> None:
        self.op_enter(p)

    def epoch_exit(self, p: int) -> None:
        self.op_exit(p)

    # -- accounting -----------------------------------------------------------

    def footprint_counters(self) -> list[FootprintCounters]:
        return list(self._counters)

    def footprint_bytes(self) -> int:
        return aggregate_footprint(self._counters)
