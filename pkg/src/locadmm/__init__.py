"""Distributed range-based localization by consensus splitting.

Two barrier-synchronous per-node solvers (a full-state one and a low-storage
rewriting that reproduces its iterates), the matrix-free operators they are
built from, the diagnostics that make their convergence behavior
measurable, dense brute-force oracles for validation, and a command-line
harness.
"""

from .engine import IterationEvent, RunResult
from .errors import (
    ConnectivityFailure,
    DisconnectedGraph,
    EmptyFreeSet,
    InvalidInit,
    InvalidInitSpec,
    InvalidParameter,
    LocadmmError,
    MissingMessage,
    MissingNode,
    MissingPosition,
    NonFiniteValue,
    ParseError,
    SchemaVersionMismatch,
    SingularSystem,
)
from .network import (
    GroundTruth,
    MeasurementSet,
    NetworkGraph,
    NoiseModel,
    generate_rgg,
    load_network,
    measure,
    rmse,
    save_network,
)
from .structured_ops import NodeBlockVector, PenaltyParams
from .solver_full import EdgeMessage, FullNodeState, InitSpec, init_full, run_full
from .solver_lite import LiteNodeState, init_lite, run_lite, step_lite
from .diagnostics import (
    IterationTrace,
    ParameterBounds,
    TraceRecorder,
    parameter_bounds,
    sublinear_envelope_check,
)

__version__ = "0.1.0"
