"""Exception hierarchy shared by all acousep modules."""


class AcousepError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(AcousepError, ValueError):
    """An argument violates an operation's preconditions."""


class FormatError(AcousepError):
    """A file could not be decoded.

    ``offset`` is the byte position in the file where decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigurationError(AcousepError, ValueError):
    """A configuration is inconsistent with the data it is applied to."""


class DegeneracyError(AcousepError, ArithmeticError):
    """A covariance or mixing matrix is singular or nearly so."""


class TrainingError(AcousepError):
    """A classifier cannot be trained on the given examples."""


class ExperimentError(AcousepError):
    """An experiment run exceeded its failed-trial budget."""
