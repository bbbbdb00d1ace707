"""Lock-free multi-word CAS over reusable descriptors.

The package provides:

* :mod:`reusecas.cells` — shared word arrays with CAS and tag-bit helpers;
* :mod:`reusecas.descriptors` — descriptor schemas, handle packing, and the
  provider protocol shared by both descriptor-memory strategies;
* :mod:`reusecas.slots` — the reusing provider (one slot per type and
  process, handles invalidated by sequence bumps);
* :mod:`reusecas.wasteful` — the allocate-per-operation baseline with
  epoch-based reclamation;
* :mod:`reusecas.dcss` / :mod:`reusecas.kcas` — double-compare
  single-swap and k-word CAS built on either provider;
* :mod:`reusecas.oracle` — sequential reference models and history
  checkers used by the test suite and ``reusecas selftest``;
* :mod:`reusecas.harness` — benchmark trials, checksum validation, and
  the sequence-wraparound experiment;
* :mod:`reusecas.cli` — the ``reusecas`` command.
"""

from .cells import (
    ArrayRegistry,
    CellArray,
    EncodingError,
    TAG_DCSS,
    TAG_KCAS,
    cell_cas,
    cell_read,
    flag,
    is_flagged,
    pack_cell_ref,
    unflag,
    unpack_cell_ref,
)
from .descriptors import (
    ContractError,
    DCSS_TYPE,
    DescriptorType,
    FootprintCounters,
    KcasState,
    SchemaError,
    aggregate_footprint,
    handle_owner,
    handle_seq,
    kcas_type,
    pack_handle,
)
from .dcss import CellRef, Dcss, DcssOperands, KcasStateRef
from .harness import (
    BenchConfig,
    TrialAborted,
    TrialResult,
    WraparoundStats,
    max_hardware_threads,
    run_kcas_trial,
    run_wraparound,
    validate_checksum,
)
from .kcas import Kcas, KcasEntry
from .oracle import (
    OracleMismatch,
    check_adt_history,
    check_dcss_oracle,
    check_handle_sequences,
    check_kcas_history,
    check_kcas_oracle,
    sequential_dcss,
    sequential_kcas,
)
from .slots import SLOT_BYTES, SlotProvider
from .wasteful import UseAfterFreeError, WastefulProvider

__version__ = "0.1.0"

__all__ = [
    "ArrayRegistry",
    "BenchConfig",
    "CellArray",
    "CellRef",
    "ContractError",
    "DCSS_TYPE",
    "Dcss",
    "DcssOperands",
    "DescriptorType",
    "EncodingError",
    "FootprintCounters",
    "Kcas",
    "KcasEntry",
    "KcasState",
    "KcasStateRef",
    "OracleMismatch",
    "SLOT_BYTES",
    "SchemaError",
    "SlotProvider",
    "TAG_DCSS",
    "TAG_KCAS",
    "TrialAborted",
    "TrialResult",
    "UseAfterFreeError",
    "WastefulProvider",
    "WraparoundStats",
    "aggregate_footprint",
    "cell_cas",
    "cell_read",
    "check_adt_history",
    "check_dcss_oracle",
    "check_handle_sequences",
    "check_kcas_history",
    "check_kcas_oracle",
    "flag",
    "handle_owner",
    "handle_seq",
    "is_flagged",
    "kcas_type",
    "max_hardware_threads",
    "pack_cell_ref",
    "pack_handle",
    "run_kcas_trial",
    "run_wraparound",
    "sequential_dcss",
    "sequential_kcas",
    "unflag",
    "unpack_cell_ref",
    "validate_checksum",
]
