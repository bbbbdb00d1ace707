"""Descriptor model shared by both descriptor providers.

A *descriptor* publishes the operands of an in-flight lock-free operation
so any thread can finish the operation on its owner's behalf. Descriptors
here are named by plain-word *handles* so they can be stored in cells:

* bits 0-1: tag space (clear in a handle; set when published in a cell),
* bits 2-15: owner process id (14 bits),
* bits 16-63: sequence number (up to 48 bits).

Each descriptor type fixes a schema: an ordered list of immutable word
fields (written once per incarnation by the owner) and a small set of
mutable bit fields that share a single atomic word so they can be updated
by CAS. Mutable fields are budgeted at 14 bits total, leaving room for
the sequence number that the reusing provider packs into the same word.

Providers implement a common surface:

* ``register_process() -> pid`` — dense ids, one per worker thread;
* ``create_new(dtype, p, immutables, mutables) -> handle``;
* ``read_field / read_immutables / write_field / cas_field`` — the
  descriptor ADT (reads may report invalidity on the reusing provider);
* ``op_enter(p) / op_exit(p) / retire(dtype, p, handle)`` — reclamation
  hooks (no-ops for the reusing provider);
* footprint accounting via per-process :class:`FootprintCounters`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Protocol, Sequence

from .cells import WORD_MASK

OWNER_SHIFT = 2
OWNER_BITS = 14
OWNER_MASK = (1 << OWNER_BITS) - 1
MAX_PROCESSES = 1 << OWNER_BITS

SEQ_SHIFT = 16
SEQ_BITS_MAX = 48
SEQ_BITS_MIN = 2

#: Mutable subfields share the low bits of the mutables word, below the
#: sequence number; 14 bits total (bits 14-15 stay spare).
MUTABLE_BITS_MAX = 14
MUTABLE_MASK = (1 << MUTABLE_BITS_MAX) - 1


class SchemaError(ValueError):
    """A value list or field name does not match a descriptor type schema."""


class ContractError(ValueError):
    """An operation was invoked outside its documented contract."""


def pack_handle(owner: int, seq: int) -> int:
    """Pack (owner, seq) into a handle word with clear tag bits."""
    return (seq << SEQ_SHIFT) | (owner << OWNER_SHIFT)


def handle_owner(handle: int) -> int:
    return (handle >> OWNER_SHIFT) & OWNER_MASK


def handle_seq(handle: int) -> int:
    return handle >> SEQ_SHIFT


class KcasState(IntEnum):
    """2-bit outcome field of a k-CAS descriptor."""

    UNDECIDED = 0
    SUCCEEDED = 1
    FAILED = 2


@dataclass(frozen=True)
class DescriptorType:
    """Schema of one descriptor type: field names, kinds, and bit widths.

    ``immutable_fields`` are whole 64-bit words, in slot order.
    ``mutable_fields`` are (name, bit width) pairs packed from bit 0 of the
    shared mutables word upward.
    """

    name: str
    immutable_fields: tuple[str, ...]
    mutable_fields: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        names = list(self.immutable_fields) + [n for n, _ in self.mutable_fields]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field names in type {self.name!r}")
        total = sum(width for _, width in self.mutable_fields)
        if total > MUTABLE_BITS_MAX:
            raise SchemaError(
                f"type {self.name!r} uses {total} mutable bits; "
                f"budget is {MUTABLE_BITS_MAX}"
            )
        if any(width < 1 for _, width in self.mutable_fields):
            raise SchemaError("mutable field widths must be >= 1")
        imm_index = {n: i for i, n in enumerate(self.immutable_fields)}
        mut_layout = {}
        shift = 0
        for n, width in self.mutable_fields:
            mut_layout[n] = (shift, (1 << width) - 1)
            shift += width
        object.__setattr__(self, "_imm_index", imm_index)
        object.__setattr__(self, "_mut_layout", mut_layout)

    # -- schema queries ---------------------------------------------------

    @property
    def immutable_count(self) -> int:
        return len(self.immutable_fields)

    @property
    def record_bytes(self) -> int:
        """Heap bytes of one allocate-per-operation record of this type.

        Type-sized, like a C struct: one 8-byte word per immutable field
        plus one packed mutables word.
        """
        return 8 * (len(self.immutable_fields) + 1)

    def immutable_position(self, fname: str) -> int:
        try:
            return self._imm_index[fname]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaError(f"{self.name!r} has no immutable field {fname!r}") from None

    def is_immutable(self, fname: str) -> bool:
        return fname in self._imm_index  # type: ignore[attr-defined]

    def mutable_layout(self, fname: str) -> tuple[int, int]:
        """(shift, mask) of a mutable field within the mutables word."""
        try:
            return self._mut_layout[fname]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaError(f"{self.name!r} has no mutable field {fname!r}") from None

    # -- value packing ----------------------------------------------------

    def check_immutable_values(self, values: Sequence[int]) -> None:
        if len(values) != len(self.immutable_fields):
            raise SchemaError(
                f"{self.name!r} takes {len(self.immutable_fields)} immutable "
                f"values, got {len(values)}"
            )
        for v in values:
            if not 0 <= v <= WORD_MASK:
                raise SchemaError(f"immutable value {v!r} is not a 64-bit word")

    def pack_mutable_values(self, values: Sequence[int]) -> int:
        """Pack the mutable-field value list (schema order) into one word."""
        if len(values) != len(self.mutable_fields):
            raise SchemaError(
                f"{self.name!r} takes {len(self.mutable_fields)} mutable "
                f"values, got {len(values)}"
            )
        word = 0
        for (fname, _), v in zip(self.mutable_fields, values):
            shift, mask = self._mut_layout[fname]  # type: ignore[attr-defined]
            if not 0 <= v <= mask:
                raise SchemaError(
                    f"value {v!r} exceeds width of mutable field {fname!r}"
                )
            word |= int(v) << shift
        return word

    def mutable_value(self, mut_word: int, fname: str) -> int:
        shift, mask = self.mutable_layout(fname)
        return (mut_word >> shift) & mask

    def replace_mutable(self, mut_word: int, fname: str, value: int) -> int:
        shift, mask = self.mutable_layout(fname)
        if not 0 <= value <= mask:
            raise SchemaError(f"value {value!r} exceeds width of mutable field {fname!r}")
        return (mut_word & ~(mask << shift)) | (int(value) << shift)


#: DCSS descriptors: five immutable operand words, no mutable fields.
DCSS_TYPE = DescriptorType(
    "dcss", ("addr1", "exp1", "addr2", "exp2", "new2"), ()
)


@lru_cache(maxsize=None)
def kcas_type(kmax: int) -> DescriptorType:
    """k-CAS descriptor schema for operations of up to ``kmax`` entries.

    Immutable layout: entry count, then (addr, expected, new) word triples
    for ``kmax`` entries (unused trailing triples are zero). One 2-bit
    mutable ``state`` field holds the operation outcome.
    """
    if kmax < 1:
        raise SchemaError(f"kmax must be >= 1, got {kmax}")
    fields = ["count"]
    for i in range(kmax):
        fields += [f"addr{i}", f"exp{i}", f"new{i}"]
    return DescriptorType(f"kcas{kmax}", tuple(fields), (("state", 2),))


@dataclass
class FootprintCounters:
    """Per-process descriptor-memory accounting.

    ``max_footprint`` is the running maximum of (allocated - freed) bytes,
    updated at every allocation; the aggregate footprint of a run is the
    sum of the per-process maxima.
    """

    total_malloc: int = 0
    total_free: int = 0
    max_footprint: int = 0

    def on_malloc(self, nbytes: int) -> None:
        self.total_malloc += nbytes
        live = self.total_malloc - self.total_free
        if live > self.max_footprint:
            self.max_footprint = live

    def on_free(self, nbytes: int) -> None:
        self.total_free += nbytes


def aggregate_footprint(counters: Sequence[FootprintCounters]) -> int:
    """Aggregate footprint in bytes: sum of per-process running maxima."""
    return sum(c.max_footprint for c in counters)


class DescriptorProvider(Protocol):
    """Common surface of the reusing and allocate-per-operation providers."""

    def register_process(self) -> int: ...

    def process_count(self) -> int: ...

    def create_new(
        self,
        dtype: DescriptorType,
        p: int,
        immutables: Sequence[int],
        mutables: Sequence[int] = (),
    ) -> int: ...

    def read_field(self, dtype: DescriptorType, handle: int, fname: str, default=None): ...

    def read_immutables(self, dtype: DescriptorType, handle: int): ...

    def write_field(self, dtype: DescriptorType, handle: int, fname: str, value: int) -> None: ...

    def cas_field(self, dtype: DescriptorType, handle: int, fname: str, expected: int, new: int): ...

    def op_enter(self, p: int) -> None: ...

    def op_exit(self, p: int) -> None: ...

    def retire(self, dtype: DescriptorType, p: int, handle: int) -> None: ...

    def footprint_counters(self) -> list[FootprintCounters]: ...

    def footprint_bytes(self) -> int: ...
