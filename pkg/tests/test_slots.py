"""Reusable-slot descriptor provider: handle validity, sequence protocol,
and the single-writer/locked-CAS concurrency core."""

import pytest

from reusecas import (
    ContractError,
    DCSS_TYPE,
    KcasState,
    SLOT_BYTES,
    SchemaError,
    SlotProvider,
    handle_owner,
    handle_seq,
    kcas_type,
    pack_handle,
)
from reusecas.descriptors import SEQ_BITS_MAX, SEQ_BITS_MIN

from support import Pause, Runner, TraceLog, run_all

KCAS2 = kcas_type(2)


def fresh(dtype=DCSS_TYPE, seq_bits=SEQ_BITS_MAX, nprocs=1):
    provider = SlotProvider(seq_bits=seq_bits)
    pids = [provider.register_process() for _ in range(nprocs)]
    return provider, pids


IMM5 = (40, 44, 48, 52, 56)


# -- registration and construction ---------------------------------------------


def test_register_assigns_dense_ids():
    provider, pids = fresh(nprocs=3)
    assert pids == [0, 1, 2]
    assert provider.process_count() == 3


def test_seq_bits_bounds():
    SlotProvider(seq_bits=SEQ_BITS_MIN)
    SlotProvider(seq_bits=SEQ_BITS_MAX)
    with pytest.raises(ContractError):
        SlotProvider(seq_bits=SEQ_BITS_MIN - 1)
    with pytest.raises(ContractError):
        SlotProvider(seq_bits=SEQ_BITS_MAX + 1)


def test_create_new_rejects_unregistered_process():
    provider, _ = fresh()
    with pytest.raises(ContractError):
        provider.create_new(DCSS_TYPE, 1, IMM5)
    with pytest.raises(ContractError):
        provider.create_new(DCSS_TYPE, -1, IMM5)


def test_current_seq_requires_a_slot():
    provider, (p,) = fresh()
    with pytest.raises(ContractError):
        provider.current_seq(DCSS_TYPE, p)
    provider.create_new(DCSS_TYPE, p, IMM5)
    assert provider.current_seq(DCSS_TYPE, p) == 2


# -- handle sequence protocol ---------------------------------------------------


def test_first_handles_have_even_stepping_sequences():
    provider, (p,) = fresh()
    h1 = provider.create_new(DCSS_TYPE, p, IMM5)
    h2 = provider.create_new(DCSS_TYPE, p, IMM5)
    h3 = provider.create_new(DCSS_TYPE, p, IMM5)
    # Two bumps per incarnation: 0 -> 2 -> 4 -> 6, always even.
    assert [handle_seq(h) for h in (h1, h2, h3)] == [2, 4, 6]
    assert all(handle_owner(h) == p for h in (h1, h2, h3))
    assert h1 == pack_handle(p, 2)


def test_slots_are_per_type_and_per_process():
    provider, pids = fresh(nprocs=2)
    provider.create_new(DCSS_TYPE, pids[0], IMM5)
    h = provider.create_new(DCSS_TYPE, pids[0], IMM5)
    assert handle_seq(h) == 4
    # A different process and a different type both start fresh.
    assert handle_seq(provider.create_new(DCSS_TYPE, pids[1], IMM5)) == 2
    assert handle_seq(provider.create_new(KCAS2, pids[0], [0] * 7, (0,))) == 2


def test_sequence_wraps_modulo_width():
    """At seq_bits=2 an invalidated handle validates again two creates
    later — the reuse hazard the narrow-width experiment measures."""
    provider, (p,) = fresh(seq_bits=2)
    h1 = provider.create_new(DCSS_TYPE, p, IMM5)
    assert handle_seq(h1) == 2
    h2 = provider.create_new(DCSS_TYPE, p, (0, 0, 0, 0, 0))
    assert handle_seq(h2) == 0  # (2+1)&3 = 3, (3+1)&3 = 0
    assert provider.read_immutables(DCSS_TYPE, h1) is None
    h3 = provider.create_new(DCSS_TYPE, p, (4, 4, 4, 4, 4))
    assert handle_seq(h3) == 2
    # The stale first handle is indistinguishable from the third and now
    # reads the *third* incarnation's operands.
    assert provider.read_immutables(DCSS_TYPE, h1) == (4, 4, 4, 4, 4)


# -- reads: validity decided after the value is taken ----------------------------


def test_read_back_fresh_handle():
    provider, (p,) = fresh()
    h = provider.create_new(KCAS2, p, (2, 40, 44, 48, 0, 0, 0), (KcasState.FAILED,))
    assert provider.read_immutables(KCAS2, h) == (2, 40, 44, 48, 0, 0, 0)
    assert provider.read_field(KCAS2, h, "count") == 2
    assert provider.read_field(KCAS2, h, "exp0") == 44
    assert provider.read_field(KCAS2, h, "state") == KcasState.FAILED


def test_stale_reads_report_default():
    provider, (p,) = fresh()
    old = provider.create_new(KCAS2, p, (2, 40, 44, 48, 0, 0, 0), (0,))
    provider.create_new(KCAS2, p, (1, 8, 12, 16, 0, 0, 0), (0,))
    assert provider.read_immutables(KCAS2, old) is None
    assert provider.read_field(KCAS2, old, "count") is None
    assert provider.read_field(KCAS2, old, "state", KcasState.SUCCEEDED) == (
        KcasState.SUCCEEDED
    )
    assert provider.read_field(KCAS2, old, "addr0", 99) == 99


def test_no_handle_validates_during_initialization():
    """While the owner is mid-create (odd sequence), the previous handle is
    already dead and the upcoming one not yet live: torn operands are
    unobservable through the ADT."""
    provider, (p,) = fresh()
    old = provider.create_new(DCSS_TYPE, p, IMM5)
    gate = Pause()
    provider.trace = TraceLog(pauses={"slots:initializing": gate})

    owner = Runner(provider.create_new, DCSS_TYPE, p, (80, 84, 88, 92, 96))
    owner.start()
    gate.wait_reached()
    try:
        upcoming = pack_handle(p, handle_seq(old) + 2)
        assert provider.read_immutables(DCSS_TYPE, old) is None
        assert provider.read_immutables(DCSS_TYPE, upcoming) is None
        assert provider.read_field(DCSS_TYPE, old, "addr1") is None
        assert provider.read_field(DCSS_TYPE, upcoming, "addr1") is None
    finally:
        gate.release()
    new = owner.finish()
    assert new == pack_handle(p, handle_seq(old) + 2)
    assert provider.read_immutables(DCSS_TYPE, new) == (80, 84, 88, 92, 96)


def test_writes_to_stale_handles_are_noops():
    provider, (p,) = fresh()
    old = provider.create_new(KCAS2, p, [0] * 7, (KcasState.UNDECIDED,))
    gate = Pause()
    provider.trace = TraceLog(pauses={"slots:initializing": gate})
    owner = Runner(provider.create_new, KCAS2, p, [4] * 7, (KcasState.UNDECIDED,))
    owner.start()
    gate.wait_reached()
    try:
        # Both the mid-create window and the post-create incarnation must
        # shrug off writes through the invalidated handle.
        provider.write_field(KCAS2, old, "state", KcasState.FAILED)
        assert provider.cas_field(
            KCAS2, old, "state", KcasState.UNDECIDED, KcasState.FAILED
        ) is None
    finally:
        gate.release()
    new = owner.finish()
    provider.write_field(KCAS2, old, "state", KcasState.FAILED)
    assert provider.read_field(KCAS2, new, "state") == KcasState.UNDECIDED


# -- mutable-field writes ----------------------------------------------------


def test_write_and_cas_field_on_live_handle():
    provider, (p,) = fresh()
    h = provider.create_new(KCAS2, p, [0] * 7, (KcasState.UNDECIDED,))
    assert provider.cas_field(
        KCAS2, h, "state", KcasState.UNDECIDED, KcasState.SUCCEEDED
    ) == KcasState.SUCCEEDED
    # Compare failure witnesses the conflicting value and writes nothing.
    assert provider.cas_field(
        KCAS2, h, "state", KcasState.UNDECIDED, KcasState.FAILED
    ) == KcasState.SUCCEEDED
    assert provider.read_field(KCAS2, h, "state") == KcasState.SUCCEEDED
    provider.write_field(KCAS2, h, "state", KcasState.FAILED)
    assert provider.read_field(KCAS2, h, "state") == KcasState.FAILED


def test_field_width_checks():
    provider, (p,) = fresh()
    h = provider.create_new(KCAS2, p, [0] * 7, (0,))
    with pytest.raises(SchemaError):
        provider.write_field(KCAS2, h, "state", 4)
    with pytest.raises(SchemaError):
        provider.cas_field(KCAS2, h, "state", 0, 4)
    with pytest.raises(SchemaError):
        provider.create_new(KCAS2, p, [0] * 6, (0,))  # arity
    with pytest.raises(SchemaError):
        provider.create_new(KCAS2, p, [1 << 64] + [0] * 6, (0,))


def test_concurrent_state_cas_has_one_winner():
    """Racing UNDECIDED->outcome CASes: exactly one writes; the rest
    witness the winner. The sequence number shares the word, so winners
    must never corrupt it."""
    provider, (p,) = fresh()
    h = provider.create_new(KCAS2, p, [0] * 7, (KcasState.UNDECIDED,))
    outcomes = [KcasState.SUCCEEDED, KcasState.FAILED] * 4

    def contender(outcome):
        return provider.cas_field(KCAS2, h, "state", KcasState.UNDECIDED, outcome)

    results = run_all(*(Runner(contender, o) for o in outcomes))
    final = provider.read_field(KCAS2, h, "state")
    wins = [r for r, o in zip(results, outcomes) if r == o]
    assert len(wins) >= 1
    # Every contender saw either its own win or the single final value.
    assert all(r == o or r == final for r, o in zip(results, outcomes))
    assert sum(1 for r, o in zip(results, outcomes) if r == o and o != final) == 0
    assert provider.current_seq(KCAS2, p) == 2  # untouched by the race


def test_owner_recycle_during_field_write_race():
    """A write_field racing the owner's create_new either lands before the
    bump or becomes a no-op — never a write into the new incarnation."""
    provider, (p,) = fresh()
    for round_no in range(200):
        h = provider.create_new(KCAS2, p, [0] * 7, (KcasState.UNDECIDED,))
        writer = Runner(
            provider.write_field, KCAS2, h, "state", KcasState.FAILED
        )
        recycler = Runner(
            provider.create_new, KCAS2, p, [0] * 7, (KcasState.UNDECIDED,)
        )
        writer.start()
        recycler.start()
        writer.finish()
        new = recycler.finish()
        assert provider.read_field(KCAS2, new, "state") == KcasState.UNDECIDED


# -- footprint ----------------------------------------------------------------


def test_slot_is_charged_once_per_type_and_process():
    provider, pids = fresh(nprocs=2)
    assert provider.footprint_bytes() == 0
    provider.create_new(DCSS_TYPE, pids[0], IMM5)
    assert provider.footprint_bytes() == SLOT_BYTES
    for _ in range(10):
        provider.create_new(DCSS_TYPE, pids[0], IMM5)
    assert provider.footprint_bytes() == SLOT_BYTES  # recycling allocates nothing
    provider.create_new(KCAS2, pids[0], [0] * 7, (0,))
    assert provider.footprint_bytes() == 2 * SLOT_BYTES
    provider.create_new(DCSS_TYPE, pids[1], IMM5)
    assert provider.footprint_bytes() == 3 * SLOT_BYTES
    counters = provider.footprint_counters()
    assert counters[0].max_footprint == 2 * SLOT_BYTES
    assert counters[1].max_footprint == SLOT_BYTES


def test_reclamation_hooks_are_noops():
    provider, (p,) = fresh()
    h = provider.create_new(DCSS_TYPE, p, IMM5)
    provider.op_enter(p)
    provider.retire(DCSS_TYPE, p, h)
    provider.op_exit(p)
    assert provider.read_immutables(DCSS_TYPE, h) == IMM5
