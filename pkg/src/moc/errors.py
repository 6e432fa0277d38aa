"""Exception taxonomy for the pipeline.

The CLI maps these onto exit codes: usage errors exit 1, ``DataError``
subclasses exit 2, ``NumericError`` subclasses exit 3.
"""


class MocError(Exception):
    """Base class for every error raised by this package."""


class DataError(MocError):
    """Malformed files, inconsistent shapes, or impossible requests."""


class NumericError(MocError):
    """Numeric breakdown during scoring, training, or verification."""


# -- data / format errors -------------------------------------------------

class NormTooSmall(DataError):
    """Vector norm below the representable-feature threshold (1e-12)."""


class DimensionMismatch(DataError):
    """Operand shapes do not agree."""


class NonFiniteValue(DataError):
    """NaN or Inf encountered where finite values are required."""


class IoFailure(DataError):
    """Underlying filesystem read/write failed."""


class FormatViolation(DataError):
    """File does not follow the canonical binary/text format."""


class InsufficientSlides(DataError):
    """A class cannot fill the requested split partitions."""


class SpecInvalid(DataError):
    """Synthetic-data specification is internally inconsistent."""


class NeedAtLeastTwoClasses(DataError):
    """Operation requires at least two foreground classes."""


class NoBackgroundPrompts(DataError):
    """Background-suppression scoring requires background prompts."""


class IndexOutOfRange(DataError):
    """Patch index outside the slide's range."""


class LabelOutOfRange(DataError):
    """Class label outside [0, C)."""


class LengthMismatch(DataError):
    """Paired sequences differ in length."""


class DegenerateLabels(DataError):
    """A class is absent from the labels, so per-class AUC is undefined."""


class EmptyTrainingSet(DataError):
    """Training requested with no labeled training slides."""


class EmptySubset(DataError):
    """Classifier-bank subset is empty."""


class MissingCoords(DataError):
    """Patch coordinates required but absent from the bag."""


class EncoderUnavailable(DataError):
    """Requested embedding encoder plugin is not registered."""


# -- numeric errors --------------------------------------------------------

class NonFiniteLoss(NumericError):
    """Training loss became NaN/Inf; aborts with a diagnostic."""


class GradCheckFailed(NumericError):
    """Analytic gradients disagree with finite differences beyond tolerance."""
