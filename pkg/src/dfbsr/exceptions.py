"""Exception and warning classes raised across the package."""


class DFBSRError(Exception):
    """Base class for all errors raised by dfbsr."""


class ShapeMismatchError(DFBSRError, ValueError):
    pass


class ChannelMismatchError(ShapeMismatchError):
    pass


class BankMismatchError(ShapeMismatchError):
    pass


class BadScaleError(DFBSRError, ValueError):
    pass


class NonDivisibleDimsError(DFBSRError, ValueError):
    pass


class PatchTooLargeError(DFBSRError, ValueError):
    pass


class ImageTooSmallError(DFBSRError, ValueError):
    pass


class EmptyInputError(DFBSRError, ValueError):
    pass


class EmptySampleSetError(EmptyInputError):
    pass


class EmptyBatchError(EmptyInputError):
    pass


class EmptyDatasetError(EmptyInputError):
    pass


class SampleTooLargeError(DFBSRError, ValueError):
    pass


class SubspaceExhaustedError(DFBSRError, ValueError):
    """No unit vector satisfies the zero-sum and orthogonality constraints."""


class TooManyFiltersError(SubspaceExhaustedError):
    pass


class NegativeAlphaError(DFBSRError, ValueError):
    pass


class CirculantTooLargeError(DFBSRError, MemoryError):
    pass


class FormatError(DFBSRError, ValueError):
    """A bank or checkpoint file does not follow its declared format."""


class DegenerateGramWarning(UserWarning):
    """The projected Gram matrix is numerically zero; a fallback filter was used."""


class ConfigError(DFBSRError, ValueError):
    """An invalid or unknown configuration value."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
