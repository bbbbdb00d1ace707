"""Benchmark trial runner: configuration validation, checksum validation,
deterministic count-bounded trials, footprint accounting, the reusable
trial pool, error classification, and the wraparound experiment driver."""

import threading
import time

import pytest

from reusecas import (
    BenchConfig,
    CellArray,
    ContractError,
    SLOT_BYTES,
    TrialResult,
    WraparoundStats,
    max_hardware_threads,
    run_kcas_trial,
    run_wraparound,
    validate_checksum,
)
from reusecas import harness
from reusecas.harness import (
    ERROR_FAULT,
    ERROR_LIVELOCK,
    ERROR_NONE,
    _TrialPool,
)
from reusecas.slots import SlotProvider

from support import WAIT_S


def cfg(**kw) -> BenchConfig:
    base = dict(
        provider="reuse",
        threads=1,
        array_size=64,
        k=2,
        duration_ms=50,
        seq_bits=48,
        seed=1,
        trials=1,
    )
    base.update(kw)
    return BenchConfig(**base)


# -- configuration validation -----------------------------------------------------


def test_valid_config_passes():
    cfg().validate()
    cfg(ops_per_thread=10, duration_ms=0).validate()


@pytest.mark.parametrize(
    "kw",
    [
        dict(provider="hoarder"),
        dict(threads=0),
        dict(array_size=0),
        dict(k=0),
        dict(k=65),  # > array_size
        dict(seq_bits=1),
        dict(seq_bits=49),
        dict(duration_ms=-1),
        dict(trials=0),
        dict(ops_per_thread=0),
        dict(duration_ms=0),  # wall-clock mode needs a positive budget
    ],
)
def test_config_rejections(kw):
    with pytest.raises(ContractError):
        cfg(**kw).validate()


# -- checksum validation ------------------------------------------------------------


def test_validate_checksum_counts_shifted_increments():
    arr = CellArray(0, 3)
    for i, v in enumerate((4, 8, 12)):  # application values 1, 2, 3
        arr.cas(i, 0, v)
    assert validate_checksum(arr, 2, 3) is True  # 6 == 2 * 3
    assert validate_checksum(arr, 2, 4) is False
    assert validate_checksum(arr, 3, 2) is True  # 6 == 3 * 2


def test_validate_checksum_rejects_tagged_words_outright():
    arr = CellArray(0, 2)
    arr.cas(0, 0, (6 << 2) | 0b01)  # tag bit set; v >> 2 would still be 6
    assert validate_checksum(arr, 2, 3) is False


# -- count-bounded trials ----------------------------------------------------------


def test_single_thread_count_mode_is_deterministic():
    c = cfg(ops_per_thread=40, duration_ms=0, seed=77)
    first = run_kcas_trial(c)
    second = run_kcas_trial(c)
    assert first.error_kind == ERROR_NONE
    assert first.thread_ops == (40,)
    # Uncontended, every attempt succeeds.
    assert first.thread_successes == (40,)
    assert (first.ops, first.successes) == (second.ops, second.successes)
    assert first.thread_ops == second.thread_ops
    assert first.checksum_ok and second.checksum_ok
    assert first.flagged_cells == 0
    assert first.elapsed_us > 0
    assert first.throughput_ops_per_us > 0


def test_trial_record_has_the_frozen_key_set():
    c = cfg(ops_per_thread=5, duration_ms=0)
    record = run_kcas_trial(c).to_record(c)
    assert set(record) == {
        "provider",
        "threads",
        "size",
        "k",
        "ms",
        "seq_bits",
        "seed",
        "ops",
        "successes",
        "throughput_ops_per_us",
        "checksum_ok",
        "footprint_bytes",
        "error_kind",
    }
    assert record["provider"] == "reuse"
    assert record["size"] == 64
    assert record["ops"] == 5
    assert record["error_kind"] == ERROR_NONE


def test_wall_clock_trial_smoke():
    result = run_kcas_trial(cfg(threads=2, duration_ms=60))
    assert result.error_kind == ERROR_NONE
    assert result.ops > 0
    assert sum(result.thread_ops) == result.ops
    assert result.flagged_cells == 0


# -- footprint accounting -----------------------------------------------------------


def test_reuse_footprint_is_two_slots_per_thread_exactly():
    result = run_kcas_trial(cfg(threads=2, ops_per_thread=50, duration_ms=0))
    assert result.footprint_bytes == 2 * 2 * SLOT_BYTES


def test_wasteful_footprint_exceeds_reuse():
    reuse = run_kcas_trial(cfg(ops_per_thread=200, duration_ms=0))
    wasteful = run_kcas_trial(
        cfg(provider="wasteful", ops_per_thread=200, duration_ms=0)
    )
    assert wasteful.error_kind == ERROR_NONE
    assert wasteful.footprint_bytes > reuse.footprint_bytes


# -- the reusable trial pool --------------------------------------------------------


def test_pool_runs_rounds_and_reuses_threads():
    pool = _TrialPool(3)
    try:
        seen = []
        lock = threading.Lock()

        def job(tag, value):
            with lock:
                seen.append((tag, value, threading.get_ident()))

        pool.start_round(job, [("a", 1), ("a", 2), ("a", 3)])
        assert pool.wait_round(time.monotonic() + WAIT_S)
        pool.start_round(job, [("b", 4)])
        assert pool.wait_round(time.monotonic() + WAIT_S)
        assert sorted(v for _, v, _ in seen) == [1, 2, 3, 4]
        # The second round ran on one of the same pooled threads.
        idents = {ident for _, _, ident in seen}
        assert len(idents) == 3
    finally:
        pool.close()


def test_pool_rejects_oversized_rounds_and_use_after_close():
    pool = _TrialPool(2)
    with pytest.raises(ContractError):
        pool.start_round(lambda: None, [(), (), ()])
    pool.close()
    with pytest.raises(ContractError):
        pool.start_round(lambda: None, [()])
    with pytest.raises(ContractError):
        _TrialPool(0)


def test_pool_refuses_to_dispatch_over_a_stuck_worker():
    release = threading.Event()
    pool = _TrialPool(1)
    try:
        pool.start_round(lambda: release.wait(WAIT_S) and None, [()])
        assert pool.wait_round(time.monotonic() + 0.05) is False
        with pytest.raises(ContractError):
            pool.start_round(lambda: None, [()])
        release.set()
        assert pool.wait_round(time.monotonic() + WAIT_S)
        # Once the straggler returns, the pool is usable again.
        pool.start_round(lambda: None, [()])
        assert pool.wait_round(time.monotonic() + WAIT_S)
    finally:
        release.set()
        pool.close()


def test_trial_can_borrow_a_pool():
    pool = _TrialPool(2)
    try:
        c = cfg(threads=2, ops_per_thread=30, duration_ms=0)
        first = run_kcas_trial(c, pool=pool)
        second = run_kcas_trial(c, pool=pool)
        assert first.error_kind == ERROR_NONE
        assert second.error_kind == ERROR_NONE
        assert first.ops == second.ops == 60
    finally:
        pool.close()


def test_trial_rejects_a_pool_smaller_than_its_thread_count():
    pool = _TrialPool(1)
    try:
        with pytest.raises(ContractError):
            run_kcas_trial(cfg(threads=2, ops_per_thread=5, duration_ms=0), pool=pool)
    finally:
        pool.close()


# -- error classification ------------------------------------------------------------


def test_worker_exception_is_classified_as_fault(monkeypatch):
    class Exploding(SlotProvider):
        def create_new(self, dtype, p, immutables, mutables=()):
            raise RuntimeError("injected wiring fault")

    monkeypatch.setattr(
        harness, "make_provider", lambda c: Exploding(seq_bits=c.seq_bits)
    )
    result = run_kcas_trial(cfg(ops_per_thread=3, duration_ms=0))
    assert result.error_kind == ERROR_FAULT
    assert result.checksum_ok is False


def test_watchdog_classifies_spinning_workers_as_livelock(monkeypatch):
    class Spinning(SlotProvider):
        def create_new(self, dtype, p, immutables, mutables=()):
            while True:  # abortable retry loop that never makes progress
                if self.interrupt is not None:
                    self.interrupt()
                time.sleep(0.001)

    monkeypatch.setattr(
        harness, "make_provider", lambda c: Spinning(seq_bits=c.seq_bits)
    )
    monkeypatch.setattr(harness, "_DURATION_WATCHDOG_GRACE_S", 0.05)
    result = run_kcas_trial(cfg(duration_ms=20))
    assert result.error_kind == ERROR_LIVELOCK
    assert result.checksum_ok is False


# -- the wraparound experiment driver -------------------------------------------------


def test_wraparound_requires_the_reuse_provider():
    with pytest.raises(ContractError):
        run_wraparound(cfg(provider="wasteful", seq_bits=4), agitators=0)


def test_wraparound_batch_at_full_width_is_clean():
    c = cfg(threads=4, array_size=16, k=4, duration_ms=40, trials=3, seed=9)
    stats = run_wraparound(c, agitators=0)
    assert stats.seq_bits == 48
    assert stats.trials == 3
    assert stats.failures == 0
    assert stats.failure_fraction == 0.0
    assert stats.error_counts == {}
    assert len(stats.results) == 3
    assert all(r.error_kind == ERROR_NONE for r in stats.results)
    record = stats.to_record(c)
    assert record["failures"] == 0
    assert record["errors_checksum"] == 0
    assert record["errors_livelock_timeout"] == 0
    assert record["errors_fault"] == 0


def test_single_threaded_wraparound_is_harmless_even_at_minimum_width():
    # With no concurrent helpers there is nobody to act on a stale handle,
    # so even a 2-bit sequence that wraps every other operation stays
    # correct.
    c = cfg(
        threads=1,
        array_size=8,
        k=2,
        ops_per_thread=2000,
        duration_ms=0,
        seq_bits=2,
        trials=2,
    )
    stats = run_wraparound(c, agitators=0)
    assert stats.failures == 0


def test_wraparound_stats_arithmetic():
    stats = WraparoundStats(
        seq_bits=4,
        trials=8,
        failures=3,
        error_counts={"checksum": 2, "livelock_timeout": 1},
    )
    assert stats.failure_fraction == pytest.approx(0.375)
    record = stats.to_record(cfg(seq_bits=4))
    assert record["failure_fraction"] == pytest.approx(0.375)
    assert record["errors_checksum"] == 2
    assert record["errors_livelock_timeout"] == 1
    assert record["errors_fault"] == 0
    assert WraparoundStats(seq_bits=4, trials=0, failures=0).failure_fraction == 0.0


def test_max_hardware_threads_floor():
    assert max_hardware_threads() >= 4
