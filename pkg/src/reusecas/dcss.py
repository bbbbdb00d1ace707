"""Double-compare single-swap over cell arrays.

``dcss`` atomically installs ``n2`` into cell ``a2`` iff ``a2`` holds
``e2`` *and* a guard location holds ``e1``. The guard (operand 1) is
either another cell (:class:`CellRef`) or the 2-bit state field of a
k-CAS descriptor (:class:`KcasStateRef`) — the hook the k-CAS algorithm
uses to make cell locking conditional on its own outcome still being
undecided.

Protocol: the caller publishes a descriptor handle into ``a2`` with a
tagged CAS; from that point any thread that stumbles on the tagged word
*helps*: it re-derives the operands from the descriptor and finishes the
operation (install ``n2`` on guard match, restore ``e2`` otherwise) with
a CAS that expects the exact tagged handle, so exactly one finisher wins.
The publisher helps itself once after a successful publish and retries
its publish CAS after helping any conflicting descriptor it displaced.

Descriptor reads go through the provider, so under the reusing provider a
helper may find the descriptor already recycled: ``read_immutables``
reports staleness and the helper returns without touching shared memory —
a stale descriptor proves the operation already finished and was cleaned
up. Reading the guard state of a recycled k-CAS descriptor defaults to
``SUCCEEDED`` for the same reason: a k-CAS whose descriptor was recycled
has terminated, so it can no longer be ``UNDECIDED`` (which is all the
comparison needs to know).

The default help routine snapshots all operands at once
(``help_style="immutables"``); ``help_style="fieldwise"`` re-reads them
field by field with a staleness default per read. The fieldwise form
exists as an internal double for equivalence testing, not for use.
"""

from __future__ import annotations

from typing import NamedTuple, Union

from .cells import (
    ArrayRegistry,
    CellArray,
    TAG_DCSS,
    TAG_KCAS,
    WORD_MASK,
    flag,
    is_flagged,
    pack_cell_ref,
    unflag,
)
from .descriptors import (
    ContractError,
    DCSS_TYPE,
    DescriptorType,
    KcasState,
)


class CellRef(NamedTuple):
    """A (array, index) cell location used as a DCSS operand."""

    array: CellArray
    index: int


class KcasStateRef(NamedTuple):
    """Guard operand naming the state field of a k-CAS descriptor."""

    handle: int


Operand1 = Union[CellRef, KcasStateRef]


class DcssOperands(NamedTuple):
    """The five operands of one DCSS invocation."""

    a1: Operand1
    e1: int
    a2: CellRef
    e2: int
    n2: int


class Dcss:
    """DCSS operations bound to one array registry and descriptor provider."""

    def __init__(
        self,
        registry: ArrayRegistry,
        provider,
        *,
        kcas_dtype: DescriptorType | None = None,
        help_style: str = "immutables",
        interrupt=None,
    ):
        if help_style not in ("immutables", "fieldwise"):
            raise ContractError(f"unknown help style {help_style!r}")
        self._registry = registry
        self._provider = provider
        #: Schema used to resolve KcasStateRef guards; set by the k-CAS
        #: layer that owns this instance.
        self._kcas_dtype = kcas_dtype
        self._help = (
            self._help_immutables if help_style == "immutables" else self._help_fieldwise
        )
        #: Optional test hook: trace(point, info_dict).
        self.trace = None
        #: Optional abort hook polled in unbounded loops; may raise.
        self.interrupt = interrupt

    # -- public operations ---------------------------------------------------

    def dcss(self, p: int, operands: DcssOperands) -> int:
        """Double-compare single-swap.

        Returns ``e2`` when the swap took effect (both comparisons held,
        or the guard failed after the descriptor was already published —
        in which case ``a2`` is restored to ``e2`` and still reads as
        having held it). Any other return is the conflicting content of
        ``a2`` and means no swap by this invocation.
        """
        a1, e1, a2, e2, n2 = operands
        addr1 = self._encode_operand1(a1)
        array2, index2 = a2
        if self._registry.get(array2.array_id) is not array2:
            raise ContractError("a2 names an array outside this registry")
        addr2 = pack_cell_ref(array2.array_id, index2)
        # A cell guard must be a different cell: the guard is evaluated
        # after the descriptor is published into a2, so an aliased guard
        # would read the descriptor word instead of an application value.
        if addr1 == addr2:
            raise ContractError("a1 must not alias a2")
        for value, name in ((e1, "e1"), (e2, "e2"), (n2, "n2")):
            if not 0 <= value <= WORD_MASK:
                raise ContractError(f"{name} is not a 64-bit word")
        # e2/n2 may be k-CAS-tagged (cell locking stores k-CAS handles) but
        # never DCSS-tagged: a descriptor of this layer is not a cell value.
        if is_flagged(e2, TAG_DCSS) or is_flagged(n2, TAG_DCSS):
            raise ContractError("e2/n2 must not carry the DCSS tag")
        return self._run(p, addr1, e1, array2, index2, addr2, e2, n2)

    def _run(
        self,
        p: int,
        addr1: int,
        e1: int,
        array2: CellArray,
        index2: int,
        addr2: int,
        e2: int,
        n2: int,
    ) -> int:
        """Publish loop over pre-validated operands.

        Split from :meth:`dcss` so k-CAS phase-1 locking, whose operands
        are re-derived from an already-validated descriptor on every lock
        attempt, does not repeat the operand checks per cell.
        """
        provider = self._provider
        provider.op_enter(p)
        try:
            des = provider.create_new(DCSS_TYPE, p, (addr1, e1, addr2, e2, n2))
            fdes = flag(des, TAG_DCSS)
            interrupt = self.interrupt
            while True:
                if interrupt is not None:
                    interrupt()
                result = array2.cas(index2, e2, fdes)
                if is_flagged(result, TAG_DCSS):
                    # Another DCSS holds the cell: finish it, then retry.
                    self._help(p, result)
                    continue
                break
            if result == e2:
                trace = self.trace
                if trace is not None:
                    trace("dcss:published", {"p": p, "fdes": fdes})
                self._help(p, fdes)
            provider.retire(DCSS_TYPE, p, des)
            return result
        finally:
            provider.op_exit(p)

    def read(self, p: int, arr: CellArray, index: int) -> int:
        """Read a cell, finishing any DCSS found in it first.

        The result never carries the DCSS tag (a k-CAS-tagged word is
        returned verbatim; that layer is not this primitive's business).
        """
        provider = self._provider
        provider.op_enter(p)
        try:
            interrupt = self.interrupt
            while True:
                if interrupt is not None:
                    interrupt()
                result = arr.read(index)
                if is_flagged(result, TAG_DCSS):
                    self._help(p, result)
                    continue
                return result
        finally:
            provider.op_exit(p)

    # -- helping ----------------------------------------------------------------

    def _encode_operand1(self, a1: Operand1) -> int:
        if isinstance(a1, KcasStateRef):
            return flag(a1.handle, TAG_KCAS)
        if isinstance(a1, CellRef):
            if self._registry.get(a1.array.array_id) is not a1.array:
                raise ContractError("a1 names an array outside this registry")
            if not 0 <= a1.index < a1.array.size:
                raise IndexError(f"a1 index {a1.index} out of range")
            return pack_cell_ref(a1.array.array_id, a1.index)
        raise ContractError(f"unsupported operand-1 {a1!r}")

    def _operand1_value(self, addr1: int):
        """Current value of the guard operand.

        For a k-CAS state guard, a recycled descriptor reads as
        ``SUCCEEDED``: the operation terminated, which in particular means
        it is no longer ``UNDECIDED``.
        """
        if is_flagged(addr1, TAG_KCAS):
            dtype = self._kcas_dtype
            if dtype is None:
                raise ContractError(
                    "k-CAS state guard used without a k-CAS schema bound"
                )
            return self._provider.read_field(
                dtype, unflag(addr1, TAG_KCAS), "state", KcasState.SUCCEEDED
            )
        array1, index1 = self._registry.resolve(addr1)
        return array1.read(index1)

    def _help_immutables(self, p: int, fdes: int) -> None:
        """Finish the DCSS behind ``fdes`` from an operand snapshot.

        A stale snapshot (``None``) proves the operation already finished
        and its handle left every cell, so there is nothing to do — and
        nothing may be written.
        """
        des = unflag(fdes, TAG_DCSS)
        trace = self.trace
        if trace is not None:
            trace("dcss_help:start", {"p": p, "fdes": fdes})
        values = self._provider.read_immutables(DCSS_TYPE, des)
        if values is None:
            return
        addr1, e1, addr2, e2, n2 = values
        array2, index2 = self._registry.resolve(addr2)
        new = n2 if self._operand1_value(addr1) == e1 else e2
        if trace is not None:
            trace("dcss_help:before_unlock", {"p": p, "fdes": fdes, "new": new})
        array2.cas(index2, fdes, new)

    def _help_fieldwise(self, p: int, fdes: int) -> None:
        """Field-at-a-time variant of the help routine (test double).

        Each read carries a staleness default; the first stale read aborts
        the help with no shared-memory effect. Equivalent to the snapshot
        form because immutable fields never change within an incarnation.
        """
        des = unflag(fdes, TAG_DCSS)
        provider = self._provider
        trace = self.trace
        if trace is not None:
            trace("dcss_help:start", {"p": p, "fdes": fdes})
        addr1 = provider.read_field(DCSS_TYPE, des, "addr1", None)
        if addr1 is None:
            return
        e1 = provider.read_field(DCSS_TYPE, des, "exp1", None)
        if e1 is None:
            return
        value1 = self._operand1_value(addr1)
        addr2 = provider.read_field(DCSS_TYPE, des, "addr2", None)
        if addr2 is None:
            return
        if value1 == e1:
            new = provider.read_field(DCSS_TYPE, des, "new2", None)
        else:
            new = provider.read_field(DCSS_TYPE, des, "exp2", None)
        if new is None:
            return
        array2, index2 = self._registry.resolve(addr2)
        if trace is not None:
            trace("dcss_help:before_unlock", {"p": p, "fdes": fdes, "new": new})
        array2.cas(index2, fdes, new)
