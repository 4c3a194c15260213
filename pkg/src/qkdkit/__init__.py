"""Executable security definitions for quantum key distribution.

Modules:
    statekit: density operators, channels, measurements.
    distinctness: trace distance and the maximum distinctness probability.
    keystates: classical-quantum key states and their security figures.
    protocol: exact simulation of a small BB84-style protocol.
    compose: sequential and parallel composition, event probability gaps.
    cli: batch command line front-end.
"""

__version__ = "0.1.0"

from .errors import (
    DimensionError,
    NumericalError,
    ParseError,
    QkdkitError,
    ValidationError,
)
from .statekit import (
    DensityOperator,
    HermitianOperator,
    KrausChannel,
    Povm,
    SubnormalizedOperator,
    Tolerances,
    helstrom,
    jordan_decompose,
    partial_trace,
    schatten_1_norm,
    validate_density,
)
from .distinctness import (
    DistinctnessBounds,
    conformance_check,
    delta_hat,
    delta_tilde,
    midpoint_state,
    p_neq_max_bounds,
    path_cost,
    trace_distance,
)
from .keystates import (
    KeyedCQState,
    KeyLengthPair,
    SecurityReport,
    correctness_epsilon,
    fixed_length_secrecy,
    key_replacer,
    mismatch_probability,
    secrecy_epsilon,
    security_epsilon,
    security_report,
)
from .protocol import (
    AttackModel,
    KeyLengthRule,
    ProtocolConfig,
    RunArtifacts,
    estimate_completeness,
    privacy_amplification,
    run_protocol,
)
from .compose import (
    CompositionReport,
    event_probability_gap,
    parallel_compose,
    sequential_compose,
)

__all__ = [
    "__version__",
    "DimensionError",
    "NumericalError",
    "ParseError",
    "QkdkitError",
    "ValidationError",
    "DensityOperator",
    "HermitianOperator",
    "KrausChannel",
    "Povm",
    "SubnormalizedOperator",
    "Tolerances",
    "helstrom",
    "jordan_decompose",
    "partial_trace",
    "schatten_1_norm",
    "validate_density",
    "DistinctnessBounds",
    "conformance_check",
    "delta_hat",
    "delta_tilde",
    "midpoint_state",
    "p_neq_max_bounds",
    "path_cost",
    "trace_distance",
    "KeyedCQState",
    "KeyLengthPair",
    "SecurityReport",
    "correctness_epsilon",
    "fixed_length_secrecy",
    "key_replacer",
    "mismatch_probability",
    "secrecy_epsilon",
    "security_epsilon",
    "security_report",
    "AttackModel",
    "KeyLengthRule",
    "ProtocolConfig",
    "RunArtifacts",
    "estimate_completeness",
    "privacy_amplification",
    "run_protocol",
    "CompositionReport",
    "event_probability_gap",
    "parallel_compose",
    "sequential_compose",
]
