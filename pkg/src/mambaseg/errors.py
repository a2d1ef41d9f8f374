"""Shared exception types. Every failure mode raised by the package lives here
so callers (and the CLI exit-code mapping) can catch one family."""


class MambasegError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(MambasegError):
    """Operands have incompatible extents for the requested operation."""


class DimMismatch(ShapeMismatch):
    """Matrix/vector dimension chains do not line up (scan, attention)."""


class InvalidAttr(MambasegError):
    """Bad operation attribute (negative padding, stride < 1, unknown op kind)."""


class NumericDomain(MambasegError):
    """Input outside the mathematical domain of the op (log of x <= 0, x / 0)."""


class NotScalar(MambasegError):
    """backward() called on a tensor with more than one element."""


class DetachedNode(MambasegError):
    """Gradient requested for a tensor that is not part of the graph."""


class NonFinite(MambasegError):
    """A NaN or infinity appeared where a finite value is required."""


class Overflow(MambasegError):
    """Non-finite state detected mid-scan; the recurrence is unstable."""


class InvalidConfig(MambasegError):
    """A configuration object violates its invariants."""


class ArityMismatch(MambasegError):
    """Number of loss components does not match the aggregator state."""


class DomainError(MambasegError):
    """Probability map entries outside [0, 1] beyond tolerance."""


class EmptyDataset(MambasegError):
    """A dataset-level operation received zero samples."""


class EmptyGTSurface(MambasegError):
    """Ground-truth mask has no surface voxels for the requested class."""


class CorruptHeader(MambasegError):
    """An on-disk header failed to parse or is internally inconsistent."""


class TruncatedPayload(MambasegError):
    """A binary payload is shorter than its header declares."""


class VersionMismatch(MambasegError):
    """On-disk format version is not supported by this build."""
