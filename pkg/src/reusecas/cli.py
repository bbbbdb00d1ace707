"""Command-line interface: benchmark, stress, wraparound, and selftest.

Emits one machine-readable record per trial (JSON lines by default, CSV
with a header row on request). Exit codes: 0 when all validations pass,
1 on a validation failure, 2 on bad flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

from .harness import (
    WRAPAROUND_AGITATORS,
    BenchConfig,
    run_kcas_trial,
    run_wraparound,
)
from .oracle import (
    OracleMismatch,
    check_dcss_oracle,
    check_handle_sequences,
    check_kcas_oracle,
)
from .slots import SlotProvider
from .wasteful import WastefulProvider


def _power_of_two(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1 or value & (value - 1):
        raise argparse.ArgumentTypeError(f"size must be a power of two, got {value}")
    return value


class _Emitter:
    """Writes one record per line as JSON, or CSV with a header row."""

    def __init__(self, fmt: str, stream=None):
        self._fmt = fmt
        self._stream = stream if stream is not None else sys.stdout
        self._csv_writer = None

    def emit(self, record: dict) -> None:
        if self._fmt == "json":
            print(json.dumps(record), file=self._stream, flush=True)
            return
        if self._csv_writer is None:
            self._csv_writer = csv.DictWriter(self._stream, fieldnames=list(record))
            self._csv_writer.writeheader()
        self._csv_writer.writerow(record)
        self._stream.flush()


def _add_trial_flags(
    parser: argparse.ArgumentParser,
    *,
    threads: int,
    size: int,
    k: int,
    ms: int,
    trials: int,
    seq_bits: int = 48,
) -> None:
    parser.add_argument(
        "--provider", choices=("reuse", "wasteful"), default="reuse",
        help="descriptor provider (default: %(default)s)",
    )
    parser.add_argument("--threads", type=int, default=threads,
                        help="worker threads (default: %(default)s)")
    parser.add_argument("--size", type=_power_of_two, default=size,
                        help="array size, power of two (default: %(default)s)")
    parser.add_argument("--k", type=int, default=k,
                        help="cells per k-CAS (default: %(default)s)")
    parser.add_argument("--ms", type=int, default=ms,
                        help="trial duration in milliseconds (default: %(default)s)")
    parser.add_argument("--trials", type=int, default=trials,
                        help="number of trials (default: %(default)s)")
    parser.add_argument("--seq-bits", type=int, default=seq_bits,
                        help="descriptor sequence-number width (default: %(default)s)")
    parser.add_argument("--seed", type=int, default=1,
                        help="base RNG seed (default: %(default)s)")
    parser.add_argument("--format", choices=("json", "csv"), default="json",
                        help="record format (default: %(default)s)")


def _config_from(args: argparse.Namespace) -> BenchConfig:
    return BenchConfig(
        provider=args.provider,
        threads=args.threads,
        array_size=args.size,
        k=args.k,
        duration_ms=args.ms,
        seq_bits=args.seq_bits,
        seed=args.seed,
        trials=args.trials,
    )


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config_from(args)
    cfg.validate()
    emitter = _Emitter(args.format)
    all_ok = True
    for i in range(cfg.trials):
        trial_cfg = replace(cfg, trials=1, seed=cfg.seed + i)
        result = run_kcas_trial(trial_cfg)
        emitter.emit(result.to_record(trial_cfg))
        if not result.checksum_ok:
            all_ok = False
    return 0 if all_ok else 1


def _cmd_stress(args: argparse.Namespace) -> int:
    cfg = _config_from(args)
    cfg.validate()
    emitter = _Emitter(args.format)
    all_ok = True
    for i in range(cfg.trials):
        trial_cfg = replace(cfg, trials=1, seed=cfg.seed + i)
        result = run_kcas_trial(trial_cfg)
        emitter.emit(result.to_record(trial_cfg))
        if not result.checksum_ok or result.flagged_cells:
            all_ok = False
    return 0 if all_ok else 1


def _cmd_wraparound(args: argparse.Namespace) -> int:
    if args.provider != "reuse":
        args.parser.error("wraparound requires --provider reuse")
    cfg = _config_from(args)
    cfg.validate()
    stats = run_wraparound(cfg, agitators=args.agitators)
    _Emitter(args.format).emit(stats.to_record(cfg))
    return 0  # error fractions are the data, not a failure


def _cmd_selftest(args: argparse.Namespace) -> int:
    checks = [
        ("dcss oracle (reuse)",
         lambda: check_dcss_oracle(20_000, args.seed, SlotProvider)),
        ("dcss oracle (wasteful)",
         lambda: check_dcss_oracle(20_000, args.seed, WastefulProvider)),
        ("kcas oracle (reuse)",
         lambda: check_kcas_oracle(20_000, args.seed, SlotProvider)),
        ("kcas oracle (wasteful)",
         lambda: check_kcas_oracle(20_000, args.seed, WastefulProvider)),
        ("handle sequence properties",
         lambda: check_handle_sequences(10_000, args.seed, SlotProvider)),
    ]
    failures = 0
    for name, run in checks:
        try:
            run()
        except OracleMismatch as exc:
            failures += 1
            print(f"selftest {name}: FAIL — {exc}")
        else:
            print(f"selftest {name}: ok")
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="reusecas",
        description="k-CAS/DCSS benchmark harness over reusable descriptor slots",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run the increment benchmark")
    _add_trial_flags(bench, threads=4, size=1024, k=2, ms=200, trials=1)
    bench.set_defaults(func=_cmd_bench, parser=bench)

    stress = sub.add_parser(
        "stress", help="high-contention trials with checksum and cleanliness checks"
    )
    _add_trial_flags(stress, threads=4, size=64, k=4, ms=250, trials=20)
    stress.set_defaults(func=_cmd_stress, parser=stress)

    wrap = sub.add_parser(
        "wraparound", help="measure error rates at a small sequence width"
    )
    # Defaults reproduce the narrow-width failure demonstration on a
    # single-core GIL host: many threads over few cells so helpers carry
    # stale evidence across a slot's 2^bits reuses. Pass --ms 200
    # --trials 10 for a quick look instead of the full measurement.
    _add_trial_flags(wrap, threads=64, size=16, k=8, ms=1300, trials=50, seq_bits=4)
    wrap.add_argument(
        "--agitators", type=int, default=WRAPAROUND_AGITATORS,
        help="background CPU-burner processes during trials (default: %(default)s)",
    )
    wrap.set_defaults(func=_cmd_wraparound, parser=wrap)

    selftest = sub.add_parser(
        "selftest", help="run the sequential-oracle and handle-property suites"
    )
    selftest.add_argument("--seed", type=int, default=1)
    selftest.set_defaults(func=_cmd_selftest, parser=selftest)

    args = parser.parse_args(argv)
    return args.func(args)


#: Alias for callers that import the entry point under this name.
cli_main = main


if __name__ == "__main__":
    sys.exit(main())
