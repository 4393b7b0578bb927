"""Exception types shared across the package."""


class CorpusFormatError(ValueError):
    """Raised when an input or serialized file cannot be parsed.

    Messages include the offending file and, where possible, the line number.
    """


class CompatibilityError(ValueError):
    """Raised when a model and a dataset disagree on users or vocabulary."""


class NumericalError(RuntimeError):
    """Raised when an update produces a non-finite value.

    The message names the parameter block that failed.
    """
