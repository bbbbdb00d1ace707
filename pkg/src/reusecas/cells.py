"""Shared atomic word cells with two reserved low-order tag bits.

Cells hold 64-bit application words. Two tag bits are reserved so that
synchronization primitives can temporarily publish descriptor handles in
cells: bit 0 marks a DCSS descriptor handle and bit 1 marks a k-CAS
descriptor handle. Application values must keep both bits clear (the
benchmark stores counters shifted left by two).

Atomicity model: CPython's GIL makes single list-item loads and stores
atomic, so ``read`` is a plain (wait-free) load. Compare-and-swap needs a
read-compare-write critical section, implemented with striped locks; the
combination behaves as if sequentially consistent, which is the contract
every caller in this package assumes.
"""

from __future__ import annotations

import threading

WORD_BITS = 64
WORD_MASK = (1 << WORD_BITS) - 1

#: Tag bit marking a word as a DCSS descriptor handle.
TAG_DCSS = 0b01
#: Tag bit marking a word as a k-CAS descriptor handle.
TAG_KCAS = 0b10
TAG_MASK = TAG_DCSS | TAG_KCAS

#: Packed cell references: bits 0-1 clear, bits 2-33 index, bits 34-63 array id.
_REF_INDEX_BITS = 32
_REF_INDEX_MASK = (1 << _REF_INDEX_BITS) - 1
_REF_ARRAY_BITS = WORD_BITS - 2 - _REF_INDEX_BITS

_N_STRIPES = 64  # power of two; CAS lock striping granularity


class EncodingError(ValueError):
    """A word cannot be tagged or packed as requested."""


def flag(handle: int, kind: int) -> int:
    """Tag ``handle`` with ``kind`` (``TAG_DCSS`` or ``TAG_KCAS``).

    The handle's tag space (both low bits) must be clear.
    """
    if kind not in (TAG_DCSS, TAG_KCAS):
        raise EncodingError(f"unknown tag kind {kind!r}")
    if handle & TAG_MASK:
        raise EncodingError(f"word {handle:#x} already has tag bits set")
    return handle | kind


def unflag(word: int, kind: int) -> int:
    """Clear tag bit ``kind`` from ``word`` (unchanged if not set)."""
    return word & ~kind


def is_flagged(word: int, kind: int) -> bool:
    """True if ``word`` carries tag bit ``kind``."""
    return (word & kind) != 0


def pack_cell_ref(array_id: int, index: int) -> int:
    """Pack an (array id, index) pair into a word with clear tag bits."""
    if not 0 <= index <= _REF_INDEX_MASK:
        raise EncodingError(f"cell index {index} out of packable range")
    if not 0 <= array_id < (1 << _REF_ARRAY_BITS):
        raise EncodingError(f"array id {array_id} out of packable range")
    return ((array_id << _REF_INDEX_BITS) | index) << 2


def unpack_cell_ref(word: int) -> tuple[int, int]:
    """Inverse of :func:`pack_cell_ref`; returns (array_id, index)."""
    body = word >> 2
    return body >> _REF_INDEX_BITS, body & _REF_INDEX_MASK


class CellArray:
    """Fixed-size array of 64-bit word cells supporting read and CAS."""

    __slots__ = ("array_id", "size", "_cells", "_locks")

    def __init__(self, array_id: int, size: int, fill: int = 0):
        if size < 1:
            raise ValueError(f"array size must be >= 1, got {size}")
        if not 0 <= fill <= WORD_MASK:
            raise ValueError(f"fill value {fill:#x} is not a 64-bit word")
        if not 0 <= array_id < (1 << _REF_ARRAY_BITS):
            raise ValueError(f"array id {array_id} out of range")
        self.array_id = array_id
        self.size = size
        self._cells = [fill] * size
        self._locks = [threading.Lock() for _ in range(_N_STRIPES)]

    def __len__(self) -> int:
        return self.size

    def read(self, index: int) -> int:
        """Atomic load of one cell."""
        if not 0 <= index < self.size:
            raise IndexError(f"cell index {index} out of range [0, {self.size})")
        return self._cells[index]

    def cas(self, index: int, expected: int, new: int) -> int:
        """Atomic compare-and-swap; returns the witnessed prior value.

        The cell is set to ``new`` iff it held ``expected``; the value read
        under the lock is returned either way, so ``result == expected``
        signals success.
        """
        if not 0 <= index < self.size:
            raise IndexError(f"cell index {index} out of range [0, {self.size})")
        if not 0 <= new <= WORD_MASK:
            raise ValueError(f"new value {new:#x} is not a 64-bit word")
        cells = self._cells
        with self._locks[index & (_N_STRIPES - 1)]:
            current = cells[index]
            if current == expected:
                cells[index] = new
            return current

    def snapshot(self) -> tuple[int, ...]:
        """Copy of all cells (single atomic copy under the GIL).

        Only meaningful as a consistent snapshot when the array is quiescent.
        """
        return tuple(self._cells)


def cell_read(arr: CellArray, index: int) -> int:
    """Atomic load of ``arr[index]``."""
    return arr.read(index)


def cell_cas(arr: CellArray, index: int, expected: int, new: int) -> int:
    """Atomic compare-and-swap on ``arr[index]``; returns the prior value."""
    return arr.cas(index, expected, new)


class ArrayRegistry:
    """Resolves packed cell references back to live arrays.

    Descriptors store cell addresses as packed words; helpers executing an
    operation from its descriptor need to map those words back to the
    arrays they name. One registry scopes one cooperating group of arrays,
    providers, and operations (typically one benchmark trial or test).
    """

    __slots__ = ("_arrays", "_resolve_memo")

    def __init__(self):
        self._arrays: dict[int, CellArray] = {}
        self._resolve_memo: dict[int, tuple[CellArray, int]] = {}

    def register(self, arr: CellArray) -> CellArray:
        existing = self._arrays.get(arr.array_id)
        if existing is not None and existing is not arr:
            raise ValueError(f"array id {arr.array_id} already registered")
        self._arrays[arr.array_id] = arr
        return arr

    def get(self, array_id: int) -> CellArray:
        try:
            return self._arrays[array_id]
        except KeyError:
            raise KeyError(f"array id {array_id} is not registered") from None

    def resolve(self, ref_word: int) -> tuple[CellArray, int]:
        """Unpack a cell reference word into (array, index).

        Resolutions are memoized: ids are never re-bound (``register``
        rejects rebinding), so a successful resolution stays valid for the
        registry's lifetime.
        """
        hit = self._resolve_memo.get(ref_word)
        if hit is not None:
            return hit
        array_id, index = unpack_cell_ref(ref_word)
        pair = (self.get(array_id), index)
        self._resolve_memo[ref_word] = pair
        return pair
