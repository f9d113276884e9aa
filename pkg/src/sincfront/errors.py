"""Exception types shared across the package.

Each maps to one contract-violation category so callers (and the CLI) can
report a machine-parsable reason without string matching.
"""


class SincFrontError(Exception):
    """Base class for all package errors."""

    category = "error"


class InvalidParameterError(SincFrontError, ValueError):
    """Non-finite or otherwise unusable numeric parameter."""

    category = "invalid-parameter"


class InvalidSpecError(SincFrontError, ValueError):
    """Structurally invalid configuration (even filter length, bad pool size, ...)."""

    category = "invalid-spec"


class ShapeError(SincFrontError, ValueError):
    """Array shapes inconsistent with the operation's contract."""

    category = "shape"


class InvalidLabelError(SincFrontError, ValueError):
    """Class label outside the configured output range."""

    category = "invalid-label"


class InvalidBatchError(SincFrontError, ValueError):
    """Batch too small for the requested statistic."""

    category = "invalid-batch"


class InvalidInputError(SincFrontError, ValueError):
    """Input set does not admit the requested computation (e.g. single-class trials)."""

    category = "invalid-input"


class FormatError(SincFrontError, ValueError):
    """Unparseable or unsupported file content."""

    category = "format"


class CheckpointError(SincFrontError, ValueError):
    """Missing, corrupt, or architecture-incompatible checkpoint."""

    category = "checkpoint"


class LockError(SincFrontError, RuntimeError):
    """Output directory already claimed by another writer."""

    category = "locked"
