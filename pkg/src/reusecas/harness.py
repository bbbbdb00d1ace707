"""Benchmark trial runner with checksum validation.

The workload: each worker repeatedly draws ``k`` distinct uniform cell
indices (a partial Fisher-Yates draw), reads them, and issues a k-CAS
that increments each cell by one. Values are stored shifted left two bits so
application values never collide with the cells' tag bits. Because every
successful k-CAS adds exactly ``k`` increments, a quiescent array must
satisfy ``sum(cells) == k * total_successes`` — any lost, duplicated, or
torn update breaks that checksum, which makes the benchmark its own
correctness witness.

Trials are wall-clock bounded by default. ``ops_per_thread`` bounds work
by count instead, which (single-threaded) makes runs bit-for-bit
reproducible from the seed. A watchdog arms at twice the nominal
duration: descriptor-sequence wraparound (deliberately reachable with
small ``seq_bits``) can strand helpers on stale handles in unbounded retry
loops, and Python threads cannot be killed, so every such loop polls an
abort hook. Trials are classified ``none`` / ``checksum`` / ``fault``
(a worker raised) / ``livelock_timeout`` (the watchdog fired) — for the
wraparound experiment these error kinds are the measured data.

Thread counts are contention knobs, not parallelism: CPython multiplexes
threads onto one core, and trials shrink the interpreter's switch
interval so operations interleave at fine grain.
"""

from __future__ import annotations

import os
import random
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field, replace

from .cells import ArrayRegistry, CellArray, TAG_MASK
from .descriptors import ContractError, SEQ_BITS_MAX, SEQ_BITS_MIN
from .kcas import Kcas, KcasEntry, KMAX_DEFAULT
from .slots import SlotProvider
from .wasteful import WastefulProvider

PROVIDERS = ("reuse", "wasteful")

ERROR_NONE = "none"
ERROR_CHECKSUM = "checksum"
ERROR_LIVELOCK = "livelock_timeout"
ERROR_FAULT = "fault"

#: Interpreter thread-switch interval (seconds) during multi-threaded
#: trials; small enough that operations interleave mid-flight.
TRIAL_SWITCH_INTERVAL = 100e-6
#: Even finer interleaving for wraparound trials, where the interesting
#: events are helpers preempted between reading a handle and acting on it.
WRAPAROUND_SWITCH_INTERVAL = 35e-6

#: Background CPU-burner processes run alongside wraparound trials. A
#: stale-handle error needs a helper to sit descheduled across several of
#: the owner's operations; on multi-core hardware genuinely parallel
#: threads provide those long overlaps, while a single CPython core only
#: rotates the interpreter lock, so each preemption gap is one rotation.
#: Competing OS-level processes reintroduce multi-rotation gaps — applied
#: identically at every sequence width, so comparisons across widths stay
#: controlled.
WRAPAROUND_AGITATORS = 1

#: Watchdog slack for count-bounded trials, which have no natural deadline.
_COUNT_MODE_WATCHDOG_S = 60.0

#: Fixed grace added to the duration-mode watchdog. A genuinely stuck
#: trial (e.g. a cell left permanently flagged) never finishes, so any
#: finite bound catches it; the grace keeps the long-but-finite tail of a
#: last operation under heavy thread multiplexing — or a busy host
#: descheduling the whole process for a while — from being misclassified
#: as a livelock.
_DURATION_WATCHDOG_GRACE_S = 2.0


class TrialAborted(RuntimeError):
    """Raised inside workers when the livelock watchdog fires."""


def max_hardware_threads() -> int:
    """Worker count standing in for "all hardware threads".

    At least 4: with the GIL, threads contend rather than parallelize, so
    on small hosts the interesting maximum is a contention level, not the
    core count.
    """
    return max(4, os.cpu_count() or 1)


@dataclass
class BenchConfig:
    """One benchmark configuration (one or more trials)."""

    provider: str = "reuse"
    threads: int = 1
    array_size: int = 1024
    k: int = 2
    duration_ms: int = 100
    seq_bits: int = SEQ_BITS_MAX
    seed: int = 1
    trials: int = 1
    #: When set, workers run exactly this many operations instead of
    #: racing the clock (single-threaded runs become deterministic).
    ops_per_thread: int | None = None

    def validate(self) -> None:
        if self.provider not in PROVIDERS:
            raise ContractError(f"provider must be one of {PROVIDERS}")
        if self.threads < 1:
            raise ContractError("threads must be >= 1")
        if self.array_size < 1:
            raise ContractError("array size must be >= 1")
        if not 1 <= self.k <= self.array_size:
            raise ContractError("k must satisfy 1 <= k <= array size")
        if not SEQ_BITS_MIN <= self.seq_bits <= SEQ_BITS_MAX:
            raise ContractError(
                f"seq_bits must be in [{SEQ_BITS_MIN}, {SEQ_BITS_MAX}]"
            )
        if self.duration_ms < 0:
            raise ContractError("duration must be >= 0")
        if self.trials < 1:
            raise ContractError("trials must be >= 1")
        if self.ops_per_thread is not None and self.ops_per_thread < 1:
            raise ContractError("ops_per_thread must be >= 1 when set")
        if self.ops_per_thread is None and self.duration_ms == 0:
            raise ContractError("duration must be > 0 for wall-clock trials")


@dataclass
class TrialResult:
    """Outcome of one trial."""

    ops: int
    successes: int
    thread_ops: tuple[int, ...]
    thread_successes: tuple[int, ...]
    throughput_ops_per_us: float
    checksum_ok: bool
    footprint_bytes: int
    error_kind: str
    elapsed_us: float
    #: Cells still holding tagged words after the trial (must be 0 for a
    #: clean quiescent run; not part of the emitted record).
    flagged_cells: int = 0

    def to_record(self, cfg: BenchConfig) -> dict:
        """The emitted result record (one per trial)."""
        return {
            "provider": cfg.provider,
            "threads": cfg.threads,
            "size": cfg.array_size,
            "k": cfg.k,
            "ms": cfg.duration_ms,
            "seq_bits": cfg.seq_bits,
            "seed": cfg.seed,
            "ops": self.ops,
            "successes": self.successes,
            "throughput_ops_per_us": self.throughput_ops_per_us,
            "checksum_ok": self.checksum_ok,
            "footprint_bytes": self.footprint_bytes,
            "error_kind": self.error_kind,
        }


@dataclass
class WraparoundStats:
    """Error statistics over a batch of small-sequence-width trials."""

    seq_bits: int
    trials: int
    failures: int
    error_counts: dict = field(default_factory=dict)
    results: list = field(default_factory=list)

    @property
    def failure_fraction(self) -> float:
        return self.failures / self.trials if self.trials else 0.0

    def to_record(self, cfg: BenchConfig) -> dict:
        return {
            "provider": cfg.provider,
            "threads": cfg.threads,
            "size": cfg.array_size,
            "k": cfg.k,
            "ms": cfg.duration_ms,
            "seq_bits": self.seq_bits,
            "seed": cfg.seed,
            "trials": self.trials,
            "failures": self.failures,
            "failure_fraction": self.failure_fraction,
            "errors_checksum": self.error_counts.get(ERROR_CHECKSUM, 0),
            "errors_livelock_timeout": self.error_counts.get(ERROR_LIVELOCK, 0),
            "errors_fault": self.error_counts.get(ERROR_FAULT, 0),
        }


def make_provider(cfg: BenchConfig):
    if cfg.provider == "reuse":
        return SlotProvider(seq_bits=cfg.seq_bits)
    return WastefulProvider()


def validate_checksum(arr: CellArray, k: int, total_successes: int) -> bool:
    """True iff the quiescent array sums to k times the successes.

    Any word still carrying a tag bit fails validation outright: a
    quiescent array must contain application values only.
    """
    values = arr.snapshot()
    if any(v & TAG_MASK for v in values):
        return False
    return sum(v >> 2 for v in values) == k * total_successes


def scan_flagged(arr: CellArray) -> int:
    """Number of cells still holding tagged (descriptor) words."""
    return sum(1 for v in arr.snapshot() if v & TAG_MASK)


class _TrialPool:
    """Reusable daemon worker threads for running many trials back to back.

    Spawning dozens of OS threads costs a noticeable slice of a short
    trial's wall budget, so multi-trial experiments park one pool of
    threads between trials instead. A round runs one callable per job on a
    dedicated thread; job callables must capture their own errors (trial
    workers already classify faults internally).
    """

    def __init__(self, size: int):
        if size < 1:
            raise ContractError(f"pool size must be >= 1, got {size}")
        self.size = size
        self._go = [threading.Event() for _ in range(size)]
        self._done = [threading.Event() for _ in range(size)]
        self._jobs: list = [None] * size
        self._active = 0
        self._closed = False
        self._threads = [
            threading.Thread(target=self._loop, args=(i,), daemon=True)
            for i in range(size)
        ]
        for t in self._threads:
            t.start()

    def _loop(self, i: int) -> None:
        go, done = self._go[i], self._done[i]
        while True:
            go.wait()
            go.clear()
            if self._closed:
                done.set()
                return
            fn, args = self._jobs[i]
            try:
                fn(*args)
            finally:
                self._jobs[i] = None
                done.set()

    def start_round(self, fn, args_list) -> None:
        """Dispatch ``fn(*args)`` for each args tuple onto pool threads."""
        if self._closed:
            raise ContractError("trial pool is closed")
        if len(args_list) > self.size:
            raise ContractError(
                f"round of {len(args_list)} jobs exceeds pool size {self.size}"
            )
        for i in range(self._active):
            if not self._done[i].is_set():
                # A worker never returned from an earlier round, so its
                # thread cannot take new jobs; reusing the pool would
                # silently run later trials under-threaded.
                raise ContractError("trial pool has a stuck worker thread")
        self._active = len(args_list)
        for i, args in enumerate(args_list):
            self._done[i].clear()
            self._jobs[i] = (fn, args)
            self._go[i].set()

    def wait_round(self, deadline: float) -> bool:
        """Block until the round's jobs finish or ``deadline`` (monotonic);
        returns whether every job finished."""
        finished = True
        for i in range(self._active):
            remaining = deadline - time.monotonic()
            if not self._done[i].wait(max(0.0, remaining)):
                finished = False
        return finished

    def close(self) -> None:
        """Release idle pool threads (stuck ones are daemonic and detached)."""
        if self._closed:
            return
        self._closed = True
        for e in self._go:
            e.set()


def run_kcas_trial(
    cfg: BenchConfig,
    *,
    switch_interval: float | None = None,
    pool: _TrialPool | None = None,
) -> TrialResult:
    """Run one trial of the increment benchmark; never raises on worker
    misbehavior — errors are classified in the result.

    ``pool`` reuses an existing :class:`_TrialPool`'s threads instead of
    spawning fresh ones (the trial's provider, arrays, and process ids are
    still created fresh here, so trials stay independent).
    """
    cfg.validate()
    registry = ArrayRegistry()
    arr = registry.register(CellArray(0, cfg.array_size))
    provider = make_provider(cfg)
    abort = threading.Event()

    def interrupt() -> None:
        if abort.is_set():
            raise TrialAborted

    # The descriptor table is sized to the k this trial exercises, so
    # per-operation descriptor initialization does not pay for unused
    # entry capacity (slot byte accounting is fixed at SLOT_BYTES either
    # way).
    ops = Kcas(registry, provider, kmax=cfg.k, interrupt=interrupt)
    provider.interrupt = interrupt
    pids = [provider.register_process() for _ in range(cfg.threads)]
    barrier = threading.Barrier(cfg.threads + 1)
    duration_s = cfg.duration_ms / 1000.0
    thread_ops = [0] * cfg.threads
    thread_successes = [0] * cfg.threads
    hit_watchdog = [False] * cfg.threads
    faults: list = [None] * cfg.threads

    def worker(w: int, p: int) -> None:
        rng = random.Random(f"{cfg.seed}:{w}")
        randrange = rng.randrange
        size, k = cfg.array_size, cfg.k
        read, do_kcas = ops.read, ops.kcas
        limit = cfg.ops_per_thread
        # Partial Fisher-Yates pool: drawing k distinct indices costs k
        # swaps instead of rejection sampling.
        pool = list(range(size))
        done = succeeded = 0
        try:
            barrier.wait()
            deadline = None if limit is not None else time.monotonic() + duration_s
            while True:
                if limit is not None:
                    if done >= limit:
                        break
                elif time.monotonic() >= deadline:
                    break
                entries = []
                for t in range(k):
                    j = t + randrange(size - t)
                    pool[t], pool[j] = pool[j], pool[t]
                    cell = pool[t]
                    value = read(p, arr, cell)
                    entries.append(KcasEntry(arr, cell, value, value + 4))
                if do_kcas(p, entries):
                    succeeded += 1
                done += 1
        except TrialAborted:
            hit_watchdog[w] = True
        except BaseException as exc:  # classified as a trial fault
            faults[w] = exc
        finally:
            thread_ops[w] = done
            thread_successes[w] = succeeded

    jobs = list(enumerate(pids))
    workers: list[threading.Thread] = []
    previous_switch = sys.getswitchinterval()
    if cfg.threads > 1:
        sys.setswitchinterval(
            switch_interval if switch_interval is not None else TRIAL_SWITCH_INTERVAL
        )
    try:
        if pool is None:
            workers = [
                threading.Thread(target=worker, args=args, daemon=True)
                for args in jobs
            ]
            for t in workers:
                t.start()
        else:
            pool.start_round(worker, jobs)
        barrier.wait()
        started = time.monotonic()
        if cfg.ops_per_thread is None:
            hard_deadline = started + 2.0 * duration_s + _DURATION_WATCHDOG_GRACE_S
        else:
            hard_deadline = started + _COUNT_MODE_WATCHDOG_S
        if pool is None:
            for t in workers:
                t.join(max(0.0, hard_deadline - time.monotonic()))
            on_time = not any(t.is_alive() for t in workers)
        else:
            on_time = pool.wait_round(hard_deadline)
        if on_time:
            stuck = False
        else:
            abort.set()
            if pool is None:
                for t in workers:
                    t.join(10.0)
                stuck = any(t.is_alive() for t in workers)
            else:
                stuck = not pool.wait_round(time.monotonic() + 10.0)
        finished = time.monotonic()
    finally:
        sys.setswitchinterval(previous_switch)

    elapsed_us = max((finished - started) * 1e6, 1e-9)
    total_ops = sum(thread_ops)
    total_successes = sum(thread_successes)
    if any(f is not None for f in faults):
        error_kind = ERROR_FAULT
    elif any(hit_watchdog) or stuck:
        error_kind = ERROR_LIVELOCK
    elif validate_checksum(arr, cfg.k, total_successes):
        error_kind = ERROR_NONE
    else:
        error_kind = ERROR_CHECKSUM
    return TrialResult(
        ops=total_ops,
        successes=total_successes,
        thread_ops=tuple(thread_ops),
        thread_successes=tuple(thread_successes),
        throughput_ops_per_us=total_ops / elapsed_us,
        checksum_ok=error_kind == ERROR_NONE,
        footprint_bytes=provider.footprint_bytes(),
        error_kind=error_kind,
        elapsed_us=elapsed_us,
        flagged_cells=scan_flagged(arr),
    )


def run_wraparound(
    cfg: BenchConfig, *, agitators: int = WRAPAROUND_AGITATORS
) -> WraparoundStats:
    """Run ``cfg.trials`` independent trials at sequence width
    ``cfg.seq_bits`` and tally error kinds; errors are data, not raises.

    Worker threads are pooled across trials (per-trial state stays
    independent), and ``agitators`` background CPU-burner processes run
    for the experiment's whole span — see :data:`WRAPAROUND_AGITATORS`.
    """
    cfg.validate()
    if cfg.provider != "reuse":
        raise ContractError("the wraparound experiment requires the reuse provider")
    stats = WraparoundStats(seq_bits=cfg.seq_bits, trials=cfg.trials, failures=0)
    pool = _TrialPool(cfg.threads)
    burners = [
        subprocess.Popen([sys.executable, "-c", "while True: pass"])
        for _ in range(max(0, agitators))
    ]
    try:
        for i in range(cfg.trials):
            trial_cfg = replace(cfg, trials=1, seed=cfg.seed + 1_000_003 * i)
            result = run_kcas_trial(
                trial_cfg, switch_interval=WRAPAROUND_SWITCH_INTERVAL, pool=pool
            )
            stats.results.append(result)
            if result.error_kind != ERROR_NONE:
                stats.failures += 1
                stats.error_counts[result.error_kind] = (
                    stats.error_counts.get(result.error_kind, 0) + 1
                )
    finally:
        for b in burners:
            b.kill()
        for b in burners:
            b.wait()
        pool.close()
    return stats
