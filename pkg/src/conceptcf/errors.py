"""Exception hierarchy shared by every module.

Three families matter to callers: :class:`InvalidConfig` (bad arguments or
config values), :class:`DataError` (malformed inputs or files), and
:class:`NumericError` (computation blew up).  The CLI maps these to exit
codes 1, 2 and 3.
"""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfig(EngineError):
    """A configuration value or argument combination is not usable."""


class DataError(EngineError):
    """Input data or an input file violates a contract."""


class NumericError(EngineError):
    """A numeric computation produced an unusable result."""


# --- file format ---------------------------------------------------------

class BadMagic(DataError):
    """File does not start with the expected magic bytes."""


class VersionMismatch(DataError):
    """File carries an unsupported format version."""


class TruncatedPayload(DataError):
    """Payload length disagrees with the header."""


class NonFiniteEntry(DataError):
    """A matrix contains NaN or infinite values."""


class ManifestError(DataError):
    """Sidecar manifest is missing a field or inconsistent with its matrix."""


# --- shapes and vectors --------------------------------------------------

class DimensionMismatch(DataError):
    """Operand dimensions do not line up."""


class SizeMismatch(DataError):
    """Two containers that must be the same length are not."""


class ZeroVector(DataError):
    """Asked to normalize a (near-)zero vector."""


# --- concept bank --------------------------------------------------------

class DegenerateConcept(DataError):
    """Neutral and stimuli embeddings coincide, so no direction exists."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"degenerate prompt pair(s): {', '.join(self.names)}")


class DuplicateName(DataError):
    """A concept or class name occurs more than once."""


class UnknownConcept(DataError):
    """Referenced concept name is not in the bank."""


class EmptyBank(DataError):
    """A concept bank needs at least one concept."""


# --- datasets and batches ------------------------------------------------

class EmptyBatch(DataError):
    """Loss or gradient requested over zero rows."""


class EmptyDataset(DataError):
    """Training requested on an empty (or unsplittable) dataset."""


class EmptyList(DataError):
    """An aggregate over zero items is undefined."""


class EmptyGroundTruth(DataError):
    """Recall against an empty ground-truth list is undefined."""


# --- optimization --------------------------------------------------------

class InvalidTarget(DataError):
    """Target class index or name does not exist for this head."""


class MissingLabelConcept(DataError):
    """The label-aligned concept is not present in the bank."""


class AlreadyTarget(DataError):
    """Instance is already classified as the requested target class."""


class Infeasible(DataError):
    """No single-concept perturbation flips the prediction within the bound."""


class InfeasibleConfig(InvalidConfig):
    """Requested world configuration cannot be generated."""


class NonFiniteLoss(NumericError):
    """Optimization diverged: a loss value became NaN or infinite.

    When raised from projector training, ``history`` holds the records
    accumulated before the abort.
    """

    def __init__(self, message, history=None):
        self.history = history
        super().__init__(message)
