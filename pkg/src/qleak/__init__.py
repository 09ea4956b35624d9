"""Certified conditional min-entropy, two-party protocol simulation and leakage chain-rule audits."""

from .errors import QleakError
from .minentropy import EntropySolution, hmin, hmin_cc, pguess_cq
from .protocol import CommStats, ProtocolSpec, YaoDecomposition, comm_stats, parse, run, run_prefix, yao_decompose
from .qchannel import ControlledChannel, KrausChannel, apply, apply_controlled, dilate, standard_gates
from .qstate import (
    DensityOperator,
    PureState,
    Subsystem,
    SystemLayout,
    epr_pairs,
    fidelity,
    make_cq,
    partial_trace,
    purified_distance,
    purify,
    schmidt,
    trace_distance,
)

__version__ = "0.1.0"

__all__ = [
    "QleakError", "EntropySolution", "hmin", "hmin_cc", "pguess_cq",
    "CommStats", "ProtocolSpec", "YaoDecomposition", "comm_stats", "parse", "run", "run_prefix", "yao_decompose",
    "ControlledChannel", "KrausChannel", "apply", "apply_controlled", "dilate", "standard_gates",
    "DensityOperator", "PureState", "Subsystem", "SystemLayout", "epr_pairs", "fidelity", "make_cq",
    "partial_trace", "purified_distance", "purify", "schmidt", "trace_distance",
]
