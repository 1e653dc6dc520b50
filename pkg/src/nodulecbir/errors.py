"""Exception hierarchy shared across the package.

Every exception carries a short machine-readable ``category`` string; the
command-line front end prints it in its single-line error diagnostics.
"""


class CbirError(Exception):
    """Base class for every error raised by this package."""

    category = "error"


class ArgumentError(CbirError, ValueError):
    """An argument violates an operation's precondition."""

    category = "argument"


class DomainError(CbirError, ValueError):
    """A value lies outside its mathematical domain (range, sign, finiteness)."""

    category = "domain"


class ShapeError(CbirError, ValueError):
    """Array or vector dimensions do not match what the operation expects."""

    category = "shape"


class EmptyDatasetError(CbirError):
    """Filtering or loading produced a dataset with no records."""

    category = "empty-dataset"


class DivergenceError(CbirError):
    """Training produced a non-finite loss."""

    category = "divergence"


class IndexBuildError(CbirError):
    """The retrieval index could not be constructed from its inputs."""

    category = "build"


class RetrievalError(CbirError):
    """A query could not return any result."""

    category = "retrieval"


class ProtocolError(CbirError):
    """The cross-validation protocol hit an invalid configuration."""

    category = "protocol"


class StructureError(CbirError):
    """Too little structure for the requested analysis (e.g. tiny dendrogram)."""

    category = "insufficient-structure"


class JoinError(CbirError):
    """Two inputs that must describe the same nodules do not line up."""

    category = "join"


class UnknownIdError(CbirError, LookupError):
    """A nodule id was not found where it was expected."""

    category = "lookup"


class FormatError(CbirError):
    """A file is not in a recognized format or version."""

    category = "format"


class ConfigError(CbirError):
    """Inconsistent run configuration (e.g. model/dataset dimension clash)."""

    category = "config"


class UsageError(CbirError):
    """Bad command-line invocation."""

    category = "usage"
