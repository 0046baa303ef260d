"""Exception types shared across the toolkit."""


class GsbdError(Exception):
    """Base class for all toolkit errors."""


class SupportViolation(GsbdError):
    """A convolution stencil reached samples that are not defined."""


class EmptySlice(GsbdError):
    """A requested line misses the grid domain."""


class ScaleMismatch(GsbdError):
    """A lattice scale is not aligned with the grid spacing."""


class HaloTooSmall(GsbdError):
    """The extension halo around the evaluation domain is too thin for k."""


class DegenerateCube(GsbdError):
    """A least-squares fit system is rank deficient."""


class ZeroStrain(GsbdError):
    """A measured constant has a zero denominator but nonzero numerator."""


class EmptyIntersection(GsbdError):
    """Two boxes expected to overlap do not."""


class MissingFit(GsbdError):
    """No rigid-affine fit is registered for a required node."""


class BadConfig(GsbdError):
    """A reflection configuration violates 0 < mu < nu < 1."""


class CoverageFailure(GsbdError):
    """A jump cover left more of the crack uncovered than requested."""


class InvalidTau(GsbdError):
    """A truncation function violates the bounds on tau or tau'."""


class ConstraintViolation(GsbdError):
    """A field violates its box constraints; carries the node index."""

    def __init__(self, message: str, node_index=None):
        super().__init__(message)
        self.node_index = node_index


class NoConvergence(GsbdError):
    """An inner solver hit its iteration cap before reaching tolerance."""


class QuadratureFailure(GsbdError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class ParseError(GsbdError):
    """A data file is malformed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VersionMismatch(GsbdError):
    """A data file declares an unsupported format version."""
