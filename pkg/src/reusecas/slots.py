"""Reusing descriptor provider: one permanent slot per (type, process).

Instead of allocating a descriptor per operation, each process owns a
single slot per descriptor type and recycles it: starting a new operation
bumps the slot's sequence number, which *invalidates* every handle minted
for the previous incarnation. Handles embed the sequence number, so any
reader can detect staleness and the ADT reads below report it (``default``
/ ``None``) instead of returning torn data.

Slot layout: the sequence number and all mutable fields share one atomic
``mutables`` word (sequence at bit 16, mutable fields in the low 14 bits),
so a field CAS and a validity check are a single-word operation. Immutable
fields live beside it and are rewritten only while the sequence number is
odd, i.e. mid-``create_new``, when no handle can validate.

Write protocol (the concurrency-correctness core):

* Only the owner writes the sequence number, inside ``create_new``
  (observation: single-writer seqs need no CAS loop).
* Every store to ``mutables`` — the owner's two sequence bumps and any
  thread's field CAS — happens under the slot's lock, so a field CAS can
  never resurrect a sequence number it raced with. Loads of ``mutables``
  and of immutable words stay lockless (GIL-atomic), keeping all read
  paths wait-free.
* Handles are even; a slot is odd exactly while its owner is initializing
  it, which makes half-initialized state unobservable through the ADT.

Sequence arithmetic is modulo ``2**seq_bits`` *by design*: shrinking
``seq_bits`` makes handle reuse (the ABA hazard this scheme otherwise
excludes) reachable, which the wraparound experiment measures.
"""

from __future__ import annotations

import threading
from typing import Sequence

from .descriptors import (
    ContractError,
    DescriptorType,
    FootprintCounters,
    MAX_PROCESSES,
    MUTABLE_MASK,
    SEQ_BITS_MAX,
    SEQ_BITS_MIN,
    SEQ_SHIFT,
    SchemaError,
    aggregate_footprint,
    handle_owner,
    handle_seq,
    pack_handle,
)

#: Accounted bytes per slot: padded to two cache lines to avoid false
#: sharing between adjacent owners' slots.
SLOT_BYTES = 128


class _Slot:
    """One process's reusable descriptor of one type."""

    __slots__ = ("mutables", "immutables", "lock")

    def __init__(self, immutable_count: int):
        self.mutables = 0  # packed (seq << 16) | mutable fields
        self.immutables = [0] * immutable_count
        self.lock = threading.Lock()


class SlotProvider:
    """Descriptor provider backed by per-(type, process) reusable slots."""

    def __init__(self, seq_bits: int = SEQ_BITS_MAX):
        if not SEQ_BITS_MIN <= seq_bits <= SEQ_BITS_MAX:
            raise ContractError(
                f"seq_bits must be in [{SEQ_BITS_MIN}, {SEQ_BITS_MAX}], got {seq_bits}"
            )
        self.seq_bits = seq_bits
        self._seq_mask = (1 << seq_bits) - 1
        self._tables: dict[DescriptorType, list[_Slot | None]] = {}
        self._nprocs = 0
        self._registry_lock = threading.Lock()
        self._counters: list[FootprintCounters] = []
        #: Optional test hook: called as trace(point, info_dict) at named
        #: internal points. Never set on benchmark paths.
        self.trace = None
        #: Optional abort hook polled inside retry loops; may raise.
        self.interrupt = None

    # -- registration ------------------------------------------------------

    def register_process(self) -> int:
        """Assign the next dense process id (to one worker thread)."""
        with self._registry_lock:
            if self._nprocs >= MAX_PROCESSES:
                raise ContractError(f"process limit {MAX_PROCESSES} reached")
            p = self._nprocs
            self._nprocs += 1
            self._counters.append(FootprintCounters())
            for slots in self._tables.values():
                slots.append(None)
            return p

    def process_count(self) -> int:
        return self._nprocs

    # -- slot access --------------------------------------------------------

    def _slots_for(self, dtype: DescriptorType) -> list:
        slots = self._tables.get(dtype)
        if slots is None:
            with self._registry_lock:
                slots = self._tables.get(dtype)
                if slots is None:
                    slots = [None] * self._nprocs
                    self._tables[dtype] = slots
        return slots

    def _slot(self, dtype: DescriptorType, owner: int) -> _Slot:
        slots = self._tables.get(dtype)
        slot = slots[owner] if slots is not None and owner < len(slots) else None
        if slot is None:
            raise ContractError(
                f"no {dtype.name!r} descriptor exists for process {owner}"
            )
        return slot

    def current_seq(self, dtype: DescriptorType, owner: int) -> int:
        """Current sequence number of a slot (diagnostic/test accessor)."""
        return self._slot(dtype, owner).mutables >> SEQ_SHIFT

    # -- descriptor ADT ------------------------------------------------------

    def create_new(
        self,
        dtype: DescriptorType,
        p: int,
        immutables: Sequence[int],
        mutables: Sequence[int] = (),
    ) -> int:
        """Recycle process ``p``'s slot into a fresh descriptor incarnation.

        Contract: callable only by the thread registered as ``p`` (slots
        are single-writer); a foreign or unregistered id is rejected.
        Returns an (even-sequence) handle; all prior handles of this
        (type, process) become invalid at the first sequence bump.
        """
        if not 0 <= p < self._nprocs:
            raise ContractError(f"process id {p} is not registered")
        dtype.check_immutable_values(immutables)
        mut_word = dtype.pack_mutable_values(mutables)
        slots = self._slots_for(dtype)
        slot = slots[p]
        if slot is None:
            # Lazy materialization on the owner's first use; the only
            # allocation this provider ever makes for the type.
            slot = _Slot(dtype.immutable_count)
            slots[p] = slot
            self._counters[p].on_malloc(SLOT_BYTES)
        mask = self._seq_mask
        with slot.lock:
            # Sole writer of seq is this owner, but the bump must not race
            # with a concurrent field CAS on the same word.
            old = slot.mutables
            seq = (old >> SEQ_SHIFT) + 1 & mask  # odd: invalidates all handles
            slot.mutables = (seq << SEQ_SHIFT) | (old & MUTABLE_MASK)
        trace = self.trace
        if trace is not None:
            trace("slots:initializing", {"dtype": dtype, "p": p, "seq": seq})
        slot.immutables[:] = immutables
        seq = seq + 1 & mask  # back to even: handles of this incarnation validate
        with slot.lock:
            slot.mutables = (seq << SEQ_SHIFT) | mut_word
        return pack_handle(p, seq)

    def read_field(self, dtype: DescriptorType, handle: int, fname: str, default=None):
        """Read one field; returns ``default`` if the handle is stale."""
        owner = handle_owner(handle)
        hseq = handle_seq(handle)
        slot = self._slot(dtype, owner)
        if dtype.is_immutable(fname):
            value = slot.immutables[dtype.immutable_position(fname)]
        else:
            value = dtype.mutable_value(slot.mutables, fname)
        # Validity is decided after the field read: a matching sequence
        # number proves the value belonged to this handle's incarnation.
        if (slot.mutables >> SEQ_SHIFT) != hseq:
            return default
        return value

    def read_immutables(self, dtype: DescriptorType, handle: int):
        """Snapshot all immutable fields, or ``None`` if the handle is stale.

        The post-copy sequence check rejects any snapshot that could mix
        fields from two incarnations.
        """
        owner = handle_owner(handle)
        slot = self._slot(dtype, owner)
        values = tuple(slot.immutables)
        if (slot.mutables >> SEQ_SHIFT) != handle_seq(handle):
            return None
        return values

    def write_field(
        self, dtype: DescriptorType, handle: int, fname: str, value: int
    ) -> None:
        """Set a mutable field, as a no-op if the handle is stale."""
        shift, mask = dtype.mutable_layout(fname)
        if not 0 <= value <= mask:
            raise SchemaError(f"value {value!r} exceeds width of field {fname!r}")
        owner = handle_owner(handle)
        hseq = handle_seq(handle)
        slot = self._slot(dtype, owner)
        interrupt = self.interrupt
        while True:
            if interrupt is not None:
                interrupt()
            observed = slot.mutables
            if (observed >> SEQ_SHIFT) != hseq:
                return
            updated = (observed & ~(mask << shift)) | (value << shift)
            with slot.lock:
                if slot.mutables == observed:
                    slot.mutables = updated
                    return
            # Lost a race with another mutables update; retry against the
            # new word (the staleness check reruns first).

    def cas_field(
        self, dtype: DescriptorType, handle: int, fname: str, expected: int, new: int
    ):
        """CAS a mutable field.

        Returns ``None`` if the handle is stale, the witnessed conflicting
        value on compare failure, or ``new`` on success.
        """
        shift, mask = dtype.mutable_layout(fname)
        if not 0 <= new <= mask:
            raise SchemaError(f"value {new!r} exceeds width of field {fname!r}")
        owner = handle_owner(handle)
        hseq = handle_seq(handle)
        slot = self._slot(dtype, owner)
        interrupt = self.interrupt
        while True:
            if interrupt is not None:
                interrupt()
            observed = slot.mutables
            if (observed >> SEQ_SHIFT) != hseq:
                return None
            current = (observed >> shift) & mask
            if current != expected:
                return current
            updated = (observed & ~(mask << shift)) | (new << shift)
            with slot.lock:
                if slot.mutables == observed:
                    slot.mutables = updated
                    return new

    # -- reclamation hooks (nothing to reclaim) ------------------------------

    def op_enter(self, p: int) -> None:
        return None

    def op_exit(self, p: int) -> None:
        return None

    def retire(self, dtype: DescriptorType, p: int, handle: int) -> None:
        return None

    # -- accounting ----------------------------------------------------------

    def footprint_counters(self) -> list[FootprintCounters]:
        return list(self._counters)

    def footprint_bytes(self) -> int:
        return aggregate_footprint(self._counters)
