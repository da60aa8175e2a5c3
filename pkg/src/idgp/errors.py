"""Exception types shared across the package."""


class IdgpError(ValueError):
    """Base class for all domain errors raised by :mod:`idgp`."""


class InstanceError(IdgpError):
    """An instance violates one of its invariants (bad bounds, duplicate edges...)."""


class InstanceParseError(InstanceError):
    """An instance file could not be parsed; the message carries line/field context."""


class MalformedOrderError(IdgpError):
    """A vertex order is not a permutation of the vertex set."""


class InvalidOrderError(IdgpError):
    """A vertex order fails the clique or contiguous trilateration property."""


class DegenerateAnchorError(IdgpError):
    """The K anchor points of a partial reflection are affinely dependent."""

    def __init__(self, vertex, message=None):
        self.vertex = vertex
        super().__init__(message or f"affinely dependent anchors for partial reflection at vertex {vertex}")


class GroupTooLargeError(IdgpError):
    """The pruning group is too large to enumerate explicitly."""


class CapabilityError(IdgpError):
    """A measure was requested that the available data cannot support."""


class UnsupportedCombinationError(IdgpError):
    """A solver/formulation pair outside the supported matrix."""
