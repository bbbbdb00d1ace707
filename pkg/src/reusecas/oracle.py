"""Sequential reference models and concurrent-history checkers.

Everything here is deliberately naive and single-threaded; it defines
*what the answers should be* so the concurrent implementations can be
checked against it:

* :func:`sequential_dcss` / :func:`sequential_kcas` — brute-force
  interpreters of the two primitives over plain lists.
* :func:`check_dcss_oracle` / :func:`check_kcas_oracle` — drive the real
  implementation and the interpreter with one seeded operation stream and
  demand bit-for-bit agreement (every return value and the final cells).
* :class:`SlotModel` — reference semantics of the reusable-slot
  descriptor ADT (validity, defaults, field CAS), for replaying
  single-threaded histories and judging interleaved ones.
* :func:`check_kcas_history` / :func:`check_adt_history` — witness-order
  searches: given a recorded concurrent history, find a sequential order,
  consistent with per-thread program order and real-time precedence, that
  replays to the recorded results.
"""

from __future__ import annotations

import random
from itertools import combinations
from typing import Callable, NamedTuple, Sequence

from .cells import ArrayRegistry, CellArray
from .descriptors import DescriptorType
from .dcss import CellRef, Dcss, DcssOperands
from .kcas import Kcas, KcasEntry


class OracleMismatch(AssertionError):
    """The implementation diverged from the sequential reference."""


# ---------------------------------------------------------------------------
# Sequential interpreters
# ---------------------------------------------------------------------------


def sequential_dcss(
    cells: list[int], a1: int, e1: int, a2: int, e2: int, n2: int
) -> int:
    """Reference DCSS over a plain list; returns what dcss must return."""
    current = cells[a2]
    if current != e2:
        return current
    if cells[a1] == e1:
        cells[a2] = n2
    return e2


def sequential_kcas(cells: list[int], entries: Sequence[tuple[int, int, int]]) -> bool:
    """Reference k-CAS over a plain list; entries are (index, expected, new)."""
    if all(cells[i] == e for i, e, _ in entries):
        for i, _, n in entries:
            cells[i] = n
        return True
    return False


# ---------------------------------------------------------------------------
# Oracle-equivalence drivers
# ---------------------------------------------------------------------------


def check_dcss_oracle(
    nops: int, seed, make_provider: Callable[[], object], size: int = 16
) -> None:
    """Run one seeded stream of dcss/read ops against implementation and
    reference simultaneously; raise :class:`OracleMismatch` on divergence.

    Values are generated shifted left two (tag bits clear). Expected
    values are drawn to hit both match and mismatch paths.
    """
    rng = random.Random(seed)
    registry = ArrayRegistry()
    arr = registry.register(CellArray(0, size))
    provider = make_provider()
    p = provider.register_process()
    ops = Dcss(registry, provider)
    model = [0] * size
    counter = 1

    def value_near(current: int) -> int:
        nonlocal counter
        if rng.random() < 0.5:
            return current
        counter += 1
        return counter << 2

    for step in range(nops):
        if rng.random() < 0.25:
            index = rng.randrange(size)
            got = ops.read(p, arr, index)
            want = model[index]
            if got != want:
                raise OracleMismatch(
                    f"step {step}: read({index}) -> {got}, reference {want}"
                )
            continue
        i1, i2 = rng.sample(range(size), 2)
        e1 = value_near(model[i1])
        e2 = value_near(model[i2])
        counter += 1
        n2 = counter << 2
        got = ops.dcss(p, DcssOperands(CellRef(arr, i1), e1, CellRef(arr, i2), e2, n2))
        want = sequential_dcss(model, i1, e1, i2, e2, n2)
        if got != want:
            raise OracleMismatch(
                f"step {step}: dcss({i1},{e1},{i2},{e2},{n2}) -> {got}, "
                f"reference {want}"
            )
    final = arr.snapshot()
    if list(final) != model:
        raise OracleMismatch(f"final cells {final} != reference {tuple(model)}")


def check_kcas_oracle(
    nops: int,
    seed,
    make_provider: Callable[[], object],
    size: int = 16,
    kmax: int = 4,
) -> None:
    """Seeded single-threaded k-CAS stream vs. the reference interpreter."""
    rng = random.Random(seed)
    registry = ArrayRegistry()
    arr = registry.register(CellArray(0, size))
    provider = make_provider()
    p = provider.register_process()
    ops = Kcas(registry, provider, kmax=kmax)
    model = [0] * size
    counter = 1

    for step in range(nops):
        if rng.random() < 0.25:
            index = rng.randrange(size)
            got = ops.read(p, arr, index)
            want = model[index]
            if got != want:
                raise OracleMismatch(
                    f"step {step}: read({index}) -> {got}, reference {want}"
                )
            continue
        k = rng.randint(1, kmax)
        indices = rng.sample(range(size), k)
        entries = []
        ref_entries = []
        for index in indices:
            if rng.random() < 0.75:
                expected = model[index]
            else:
                counter += 1
                expected = counter << 2
            counter += 1
            new = counter << 2
            entries.append(KcasEntry(arr, index, expected, new))
            ref_entries.append((index, expected, new))
        got = ops.kcas(p, entries)
        want = sequential_kcas(model, ref_entries)
        if got != want:
            raise OracleMismatch(
                f"step {step}: kcas({ref_entries}) -> {got}, reference {want}"
            )
    final = arr.snapshot()
    if list(final) != model:
        raise OracleMismatch(f"final cells {final} != reference {tuple(model)}")


# ---------------------------------------------------------------------------
# Reference model of the reusable-slot descriptor ADT
# ---------------------------------------------------------------------------


class SlotModel:
    """Sequential semantics of one descriptor type's reusable slots.

    Handles are (process, seq) pairs; a handle is valid while its seq
    equals the slot's current seq. Used as the ground truth when judging
    recorded ADT histories.
    """

    def __init__(self, dtype: DescriptorType, seq_bits: int = 48):
        self.dtype = dtype
        self._mask = (1 << seq_bits) - 1
        self._seq: dict[int, int] = {}
        self._imm: dict[int, tuple[int, ...]] = {}
        self._mut: dict[int, dict[str, int]] = {}

    def copy(self) -> "SlotModel":
        dup = SlotModel.__new__(SlotModel)
        dup.dtype = self.dtype
        dup._mask = self._mask
        dup._seq = dict(self._seq)
        dup._imm = dict(self._imm)
        dup._mut = {p: dict(m) for p, m in self._mut.items()}
        return dup

    def key(self):
        return (
            tuple(sorted(self._seq.items())),
            tuple(sorted(self._imm.items())),
            tuple(sorted((p, tuple(sorted(m.items()))) for p, m in self._mut.items())),
        )

    def _valid(self, handle: tuple[int, int]) -> bool:
        p, seq = handle
        return self._seq.get(p, 0) == seq

    def create_new(self, p: int, immutables, mutables=()) -> tuple[int, int]:
        seq = (self._seq.get(p, 0) + 2) & self._mask
        self._seq[p] = seq
        self._imm[p] = tuple(immutables)
        self._mut[p] = {
            name: value for (name, _), value in zip(self.dtype.mutable_fields, mutables)
        }
        return (p, seq)

    def read_field(self, handle, fname: str, default=None):
        if not self._valid(handle):
            return default
        p = handle[0]
        if self.dtype.is_immutable(fname):
            return self._imm[p][self.dtype.immutable_position(fname)]
        return self._mut[p][fname]

    def read_immutables(self, handle):
        if not self._valid(handle):
            return None
        return self._imm[handle[0]]

    def write_field(self, handle, fname: str, value: int) -> None:
        if self._valid(handle):
            self._mut[handle[0]][fname] = value

    def cas_field(self, handle, fname: str, expected: int, new: int):
        if not self._valid(handle):
            return None
        fields = self._mut[handle[0]]
        if fields[fname] != expected:
            return fields[fname]
        fields[fname] = new
        return new


# ---------------------------------------------------------------------------
# Witness-order searches over recorded concurrent histories
# ---------------------------------------------------------------------------


class HistoryOp(NamedTuple):
    """One completed operation of a recorded history.

    ``payload`` by kind — ``"kcas"``: tuple of (index, expected, new);
    ``"read"``: index. ``start``/``end`` are monotonic timestamps used for
    the real-time precedence constraint.
    """

    thread: int
    kind: str
    payload: object
    result: object
    start: float
    end: float


def check_kcas_history(size: int, ops: Sequence[HistoryOp]):
    """Search for a witness order of a k-CAS/read history over one array.

    Returns a list of indices into ``ops`` (the sequential order) or
    ``None`` if no order consistent with per-thread program order,
    real-time precedence, and the recorded results exists.
    """
    by_thread: dict[int, list[int]] = {}
    for i, op in enumerate(ops):
        by_thread.setdefault(op.thread, []).append(i)
    threads = sorted(by_thread)
    initial = tuple([0] * size)
    failed: set = set()

    def apply(state: tuple, op: HistoryOp):
        if op.kind == "read":
            return state if state[op.payload] == op.result else None
        if op.kind == "kcas":
            match = all(state[i] == e for i, e, _ in op.payload)
            if match != op.result:
                return None
            if not match:
                return state
            cells = list(state)
            for i, _, n in op.payload:
                cells[i] = n
            return tuple(cells)
        raise ValueError(f"unknown history op kind {op.kind!r}")

    def search(ptrs: tuple, state: tuple):
        if (ptrs, state) in failed:
            return None
        pending = [
            by_thread[t][ptrs[ti]]
            for ti, t in enumerate(threads)
            if ptrs[ti] < len(by_thread[t])
        ]
        if not pending:
            return []
        unconsumed_ends = [
            ops[j].end
            for ti, t in enumerate(threads)
            for j in by_thread[t][ptrs[ti] :]
        ]
        horizon = min(unconsumed_ends)
        for ti, t in enumerate(threads):
            if ptrs[ti] >= len(by_thread[t]):
                continue
            j = by_thread[t][ptrs[ti]]
            # Real-time order: j cannot precede an op that ended before
            # j started.
            if ops[j].start > horizon:
                continue
            nxt = apply(state, ops[j])
            if nxt is None:
                continue
            sub = search(
                tuple(v + 1 if i == ti else v for i, v in enumerate(ptrs)), nxt
            )
            if sub is not None:
                return [j] + sub
        failed.add((ptrs, state))
        return None

    return search(tuple(0 for _ in threads), initial)


def check_adt_history(
    dtype: DescriptorType,
    per_thread_ops: Sequence[Sequence[tuple]],
    seq_bits: int = 48,
):
    """Search for a witness order of a descriptor-ADT history.

    ``per_thread_ops`` holds each thread's completed operations in program
    order as (kind, args, result) tuples, with kinds matching
    :class:`SlotModel` methods and handles as (process, seq) pairs.
    Returns a witness order (list of (thread, op_index)) or ``None``.
    Exhaustive over all interleavings, so histories must stay small.
    """
    counts = [len(ops) for ops in per_thread_ops]
    total = sum(counts)
    if len(counts) > 2:
        raise ValueError("exhaustive ADT search supports at most two threads")

    def replay(order: Sequence[int]) -> bool:
        model = SlotModel(dtype, seq_bits)
        ptrs = [0] * len(counts)
        for t in order:
            kind, args, expected = per_thread_ops[t][ptrs[t]]
            ptrs[t] += 1
            got = getattr(model, kind)(*args)
            if got != expected:
                return False
        return True

    if len(counts) == 1:
        order = [0] * counts[0]
        return [(0, i) for i in range(counts[0])] if replay(order) else None

    slots = range(total)
    for first_positions in combinations(slots, counts[0]):
        order = [1] * total
        for pos in first_positions:
            order[pos] = 0
        if replay(order):
            witness = []
            ptrs = [0, 0]
            for t in order:
                witness.append((t, ptrs[t]))
                ptrs[t] += 1
            return witness
    return None


# ---------------------------------------------------------------------------
# Self-check helpers (used by the CLI selftest)
# ---------------------------------------------------------------------------


def check_handle_sequences(iterations: int, seed, make_provider) -> None:
    """Single-threaded handle-sequence properties of the *reusing* provider
    over random op mixes: handles are even, step by two per (type, process),
    and creating anew invalidates the previous handle permanently. Raises
    :class:`OracleMismatch` on any violation."""
    from .descriptors import DCSS_TYPE, handle_seq, kcas_type

    rng = random.Random(seed)
    provider = make_provider()
    pids = [provider.register_process() for _ in range(3)]
    dtypes = [DCSS_TYPE, kcas_type(2)]
    last_seq: dict[tuple, int] = {}
    previous_handle: dict[tuple, int] = {}
    for step in range(iterations):
        p = rng.choice(pids)
        dtype = rng.choice(dtypes)
        imm = [rng.randrange(1 << 32) << 2 for _ in dtype.immutable_fields]
        mut = [0 for _ in dtype.mutable_fields]
        handle = provider.create_new(dtype, p, imm, mut)
        seq = handle_seq(handle)
        if seq % 2 != 0:
            raise OracleMismatch(f"step {step}: odd handle seq {seq}")
        key = (dtype.name, p)
        if key in last_seq and seq != last_seq[key] + 2:
            raise OracleMismatch(
                f"step {step}: seq stepped {last_seq[key]} -> {seq}, expected +2"
            )
        last_seq[key] = seq
        stale = previous_handle.get(key)
        if stale is not None and provider.read_immutables(dtype, stale) is not None:
            raise OracleMismatch(f"step {step}: stale handle still valid")
        if provider.read_immutables(dtype, handle) != tuple(imm):
            raise OracleMismatch(f"step {step}: fresh handle does not read back")
        previous_handle[key] = handle
