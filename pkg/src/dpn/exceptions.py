"""Exception types shared across the package."""


class DPNError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DPNError, ValueError):
    """Operands have incompatible vector dimensions."""


class NonFiniteError(DPNError, ValueError):
    """A value that must be finite is NaN or infinite."""


class ZeroNormError(DPNError, ValueError):
    """A zero-norm vector was passed where a direction is required.

    Zero norms indicate upstream data corruption, so they are rejected
    instead of being mapped to a silent zero similarity.
    """


class EmptyInputError(DPNError, ValueError):
    """An operation received an empty sequence."""


class ShapeError(DPNError, ValueError):
    """Array shapes violate an operation's contract."""


class ConfigError(DPNError, ValueError):
    """Invalid configuration value."""


class SchemaError(DPNError, ValueError):
    """An embedding file or manifest does not match the expected layout."""


class DuplicateIdError(SchemaError):
    """The same instance id appears more than once."""


class MissingLabelError(SchemaError):
    """A row that must carry a label uses the '?' placeholder."""


class SeparationError(DPNError, RuntimeError):
    """Rejection sampling could not place cluster centers far enough apart."""


class DatasetIOError(DPNError, OSError):
    """Reading or writing dataset files failed."""


class InfeasibleKError(DPNError, ValueError):
    """Requested more clusters than the data can support."""


class MissingCategoryError(DPNError, ValueError):
    """A known category has no labeled instances."""


class EmptyClusterError(DPNError, ValueError):
    """A clustering contains an empty cluster."""


class LabelError(DPNError, ValueError):
    """A label is outside the known category space."""


class EvalDataError(DPNError, ValueError):
    """Evaluation input lacks required ground-truth labels."""


class UsageError(DPNError):
    """Command line invocation error; maps to a non-zero exit code."""


class DataWarning(UserWarning):
    """Non-fatal dataset validation issue."""
