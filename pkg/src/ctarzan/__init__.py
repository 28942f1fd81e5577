"""Tarzan and C-Tarzan anonymous overlays: topology, routing, metrics,
message-level protocol and the paired comparison harness."""

from .errors import (
    CTarzanError,
    DegenerateNetwork,
    EquivalenceViolation,
    NonIntegralK,
    NonIntegralWarning,
    NoSharedCycle,
    ParityMismatch,
    TunnelUnbuildable,
    UnknownKey,
    UnknownPreset,
)
from .overlay import (
    CycleRecord,
    Directory,
    Kind,
    Topology,
    build_topology,
    iterated_lookup,
    lookup,
    select_ctarzan_cycles,
    select_tarzan_mimics,
    verify_selection,
)
from .routing import PairCase, ReturnRoute, Tunnel, build_tunnel, classify_pair, compute_return_route
from .metrics import (
    ASQuery,
    BoundMode,
    anonymity_set_size,
    ctarzan_return_latency_bound,
    equivalent_k,
    equivalent_kprime,
    predicted_hprime,
    required_tarzan_h,
)
from .harness import ComparisonRow, ExperimentConfig, compare, compare_many, emit_csv, preset_figure

__version__ = "0.1.0"
