"""Exception types shared across the package."""


class ReefNetError(Exception):
    """Base class for every error raised by this package."""


class ConstantChannel(ReefNetError):
    """A channel has zero spread, so the requested normalization is undefined."""


class OutOfBounds(ReefNetError):
    """A sampling coordinate lies outside the grid."""


class DegenerateHistogram(ReefNetError):
    """The two stretch percentiles coincide on some channel."""


class UnsupportedEnhancement(ReefNetError):
    """The enhancement kind is reserved but has no implementation."""


class InvalidPlan(ReefNetError):
    """Network shape propagation failed; the message carries the shape trace."""


class ShapeMismatch(ReefNetError):
    """An input does not match the shape the network was built for."""


class IndivisibleSide(ReefNetError):
    """A map side is not divisible by the pooling block size."""


class EmptyClass(ReefNetError):
    """A class has no samples where at least one is required."""


class MissingImage(ReefNetError):
    """An annotation references an image file that does not exist."""


class PointOutOfBounds(ReefNetError):
    """An annotated point lies outside its image."""

    def __init__(self, image_id: str, row: int, col: int):
        super().__init__(f"point ({row}, {col}) outside image '{image_id}'")
        self.image_id = image_id
        self.row = row
        self.col = col


class ParseError(ReefNetError):
    """An annotation line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class BadClassId(ReefNetError):
    """A class id is outside the confusion matrix."""


class EmptyMatrix(ReefNetError):
    """Metrics were requested from a confusion matrix with no counts."""


class ConfigError(ReefNetError):
    """A run configuration is inconsistent or malformed."""
