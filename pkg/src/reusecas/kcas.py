"""k-word compare-and-swap built on DCSS and a descriptor provider.

``kcas`` atomically compares-and-swaps ``k`` distinct cells: if every
cell holds its expected value, all are replaced; otherwise none are (as
observed through ``kcas_read``/``read``). The algorithm is the classic
two-phase descriptor protocol:

* Phase 1 (*locking*): publish the k-CAS descriptor handle into each
  target cell with DCSS, guarded on the operation's own ``state`` field
  still being ``UNDECIDED`` — so a finished operation can never acquire
  new cells. Cells are taken in ascending (array id, index) order by
  every participant; a conflicting k-CAS found in a cell is helped
  recursively and the entry retried; a plain value mismatch decides the
  outcome as ``FAILED``. The phase ends by CASing ``state`` from
  ``UNDECIDED`` to the local outcome — only the first decider wins.
* Phase 2 (*release*): re-read ``state`` and replace the handle in every
  cell with the new value (``SUCCEEDED``) or the expected value
  (otherwise). Every participant sweeps all k cells, so the last one out
  always cleans up.

Any thread that reads a k-CAS-tagged word helps that operation to
completion before retrying its own work. Under the reusing provider, a
helper's descriptor reads may report staleness (``None``); staleness
proves the operation already terminated and its handle was removed from
every cell, so the helper returns immediately and writes nothing.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

from .cells import (
    ArrayRegistry,
    CellArray,
    TAG_DCSS,
    TAG_KCAS,
    TAG_MASK,
    WORD_MASK,
    flag,
    is_flagged,
    pack_cell_ref,
    unflag,
)
from .descriptors import ContractError, DescriptorType, KcasState, kcas_type
from .dcss import Dcss

#: Default bound on entries per operation (descriptor layouts are fixed
#: at construction, so the maximum must be chosen up front).
KMAX_DEFAULT = 16


class KcasEntry(NamedTuple):
    """One cell of a k-CAS: replace ``expected`` with ``new`` at (array, index)."""

    array: CellArray
    index: int
    expected: int
    new: int


class Kcas:
    """k-CAS operations bound to one array registry and descriptor provider."""

    def __init__(
        self,
        registry: ArrayRegistry,
        provider,
        kmax: int = KMAX_DEFAULT,
        *,
        interrupt=None,
    ):
        if kmax < 1:
            raise ContractError(f"kmax must be >= 1, got {kmax}")
        self._registry = registry
        self._provider = provider
        self.kmax = kmax
        self._dtype: DescriptorType = kcas_type(kmax)
        #: The DCSS instance used for phase-1 locking; shares the provider
        #: and registry, and resolves this type's state guards.
        self.dcss = Dcss(registry, provider, kcas_dtype=self._dtype, interrupt=interrupt)
        #: Optional test hook: trace(point, info_dict).
        self.trace = None
        #: Optional abort hook polled in unbounded loops; may raise.
        self.interrupt = interrupt

    @property
    def dtype(self) -> DescriptorType:
        return self._dtype

    # -- public operations ---------------------------------------------------

    def kcas(self, p: int, entries: Sequence[KcasEntry]) -> bool:
        """Atomically swap all entries, or none.

        Entries must name distinct cells; they are processed in ascending
        (array id, index) order regardless of argument order.
        """
        k = len(entries)
        if not 1 <= k <= self.kmax:
            raise ContractError(f"k must be in [1, {self.kmax}], got {k}")
        ordered = sorted(entries, key=lambda e: (e[0].array_id, e[1]))
        immutables = [k]
        previous = None
        for array, index, expected, new in ordered:
            if self._registry.get(array.array_id) is not array:
                raise ContractError("entry names an array outside this registry")
            if not 0 <= index < array.size:
                raise IndexError(f"entry index {index} out of range")
            key = (array.array_id, index)
            if key == previous:
                raise ContractError(f"duplicate cell {key} in k-CAS entries")
            previous = key
            for value, name in ((expected, "expected"), (new, "new")):
                if not 0 <= value <= WORD_MASK:
                    raise ContractError(f"{name} is not a 64-bit word")
                if value & TAG_MASK:
                    raise ContractError(f"{name} must have clear tag bits")
            immutables += [pack_cell_ref(array.array_id, index), expected, new]
        immutables += [0] * (3 * (self.kmax - k))
        provider = self._provider
        provider.op_enter(p)
        try:
            des = provider.create_new(
                self._dtype, p, immutables, (KcasState.UNDECIDED,)
            )
            fdes = flag(des, TAG_KCAS)
            succeeded = self._help(p, fdes)
            provider.retire(self._dtype, p, des)
            return succeeded
        finally:
            provider.op_exit(p)

    def read(self, p: int, arr: CellArray, index: int) -> int:
        """Read a cell as an application value, helping any operation met."""
        provider = self._provider
        provider.op_enter(p)
        try:
            interrupt = self.interrupt
            while True:
                if interrupt is not None:
                    interrupt()
                result = self.dcss.read(p, arr, index)
                if is_flagged(result, TAG_KCAS):
                    self._help(p, result)
                    continue
                return result
        finally:
            provider.op_exit(p)

    # -- helping ----------------------------------------------------------------

    def _help(self, p: int, fdes: int) -> bool:
        """Run the operation behind ``fdes`` to completion (both phases).

        Returns whether the operation succeeded. Stale descriptor reads
        (``None``) mean the operation already terminated; the helper then
        returns immediately — it must not touch shared memory on stale
        evidence. The owner's own call never observes staleness.
        """
        provider = self._provider
        dtype = self._dtype
        des = unflag(fdes, TAG_KCAS)
        trace = self.trace
        if trace is not None:
            trace("kcas_help:start", {"p": p, "fdes": fdes})
        values = provider.read_immutables(dtype, des)
        if values is None:
            return False
        k = values[0]
        state = provider.read_field(dtype, des, "state", None)
        if state is None:
            return False
        if state == KcasState.UNDECIDED:
            outcome = KcasState.SUCCEEDED
            interrupt = self.interrupt
            # Phase-1 operands come from the descriptor we just snapshotted
            # (validated when the operation was submitted), so locking goes
            # through the DCSS core directly rather than re-validating the
            # same operands once per cell.
            dcss_run = self.dcss._run
            i = 0
            while i < k:
                if interrupt is not None:
                    interrupt()
                base = 1 + 3 * i
                addr, expected = values[base], values[base + 1]
                array, index = self._registry.resolve(addr)
                if trace is not None:
                    trace("kcas_help:locking", {"p": p, "fdes": fdes, "i": i})
                value = dcss_run(
                    p, fdes, KcasState.UNDECIDED, array, index, addr, expected, fdes
                )
                if is_flagged(value, TAG_KCAS):
                    if value != fdes:
                        # A different k-CAS holds this cell: finish it,
                        # then retry the same entry.
                        self._help(p, value)
                        continue
                    # Already locked for this operation (by us or a racer).
                elif value != expected:
                    outcome = KcasState.FAILED
                    break
                i += 1
            if trace is not None:
                trace("kcas_help:decided", {"p": p, "fdes": fdes, "outcome": outcome})
            provider.cas_field(
                dtype, des, "state", KcasState.UNDECIDED, outcome
            )
        state = provider.read_field(dtype, des, "state", None)
        if state is None:
            return False
        succeeded = state == KcasState.SUCCEEDED
        if trace is not None:
            trace("kcas_help:release", {"p": p, "fdes": fdes, "succeeded": succeeded})
        for i in range(k):
            base = 1 + 3 * i
            addr, expected, new = values[base], values[base + 1], values[base + 2]
            array, index = self._registry.resolve(addr)
            array.cas(index, fdes, new if succeeded else expected)
        return succeeded
