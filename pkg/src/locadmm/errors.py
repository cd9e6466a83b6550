"""Exception types raised across the package."""


class LocadmmError(Exception):
    """Base class for all package errors."""


class InvalidParameter(LocadmmError):
    """A numeric or structural argument is out of its admissible range."""


class ConnectivityFailure(LocadmmError):
    """Layout resampling exhausted its retry budget without a connected graph."""


class DisconnectedGraph(LocadmmError):
    """A solver was handed a graph that is not a single connected component."""


class MissingPosition(LocadmmError):
    """A node is missing from a position map that must cover it."""


class MissingNode(LocadmmError):
    """A per-node collection does not cover every node of the graph."""


class EmptyFreeSet(LocadmmError):
    """A metric over non-anchor nodes was requested but every node is an anchor."""


class ParseError(LocadmmError):
    """A network file violates the schema; the message names the offending field."""


class SchemaVersionMismatch(LocadmmError):
    """A network file declares a schema version this package does not read."""


class InvalidInitSpec(LocadmmError):
    """An initialization spec is malformed or incomplete."""


class InvalidInit(InvalidInitSpec):
    """Positional initialization is missing required per-node data."""


class MissingMessage(LocadmmError):
    """An expected neighbor payload is absent or mis-addressed."""


class NonFiniteValue(LocadmmError):
    """A state coordinate or recorded metric became NaN or infinite."""


class SingularSystem(LocadmmError):
    """A dense reference solve hit a singular KKT system."""
