"""Exception hierarchy, grouped by the CLI exit-code categories.

Exit codes: 1 for configuration problems, 2 for file/I-O problems,
3 for numerical failures inside a solver or learner.
"""


class BowError(Exception):
    """Base class for every toolkit error."""


class ConfigInvalid(BowError):
    """Bad configuration value or combination (exit code 1)."""


class FileFormatError(BowError):
    """Unreadable, malformed, or unwritable data file (exit code 2)."""


class NumericError(BowError):
    """Numerical failure inside a solver, learner, or encoder (exit code 3)."""


# --- numerics -------------------------------------------------------------

class DimensionMismatch(NumericError):
    """Operand shapes do not agree."""


class NotSymmetric(NumericError):
    """Matrix expected to be symmetric is not, beyond tolerance."""


class NotPositiveDefinite(NumericError):
    """Cholesky pivot fell below tolerance; matrix is not SPD."""


class ZeroMatrix(NumericError):
    """Matrix is numerically zero where a nonzero one is required."""


# --- data files -----------------------------------------------------------

class BadMagic(FileFormatError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(FileFormatError):
    """File version field is not supported by this reader."""


class TruncatedFile(FileFormatError):
    """File ends early, has trailing bytes, or declares an empty payload."""


class NonFiniteValue(FileFormatError):
    """A NaN or infinity was found where finite values are required."""


class IoFailure(FileFormatError):
    """Underlying OS read/write failed."""


# --- datasets and learning ------------------------------------------------

class EmptySet(NumericError):
    """Operation asked to draw from a descriptor set with no descriptors."""


class InsufficientData(NumericError):
    """Fewer descriptors than the learner needs (N < K)."""


class DegenerateAtom(NumericError):
    """A zero vector cannot be normalized into a dictionary atom."""


# --- encoders ---------------------------------------------------------

class NotUnitNorm(NumericError):
    """Encoder requires unit-norm dictionary columns."""


class SingularSupport(NumericError):
    """Gram matrix of the selected support is not SPD within tolerance."""


class MaxIterations(NumericError):
    """Iterative solver hit its step cap before reaching its certificate."""


class BatchEncodeError(NumericError):
    """Wraps a per-descriptor encoder failure with the descriptor index."""

    def __init__(self, descriptor_index, message):
        super().__init__(f"descriptor {descriptor_index}: {message}")
        self.descriptor_index = descriptor_index


# --- pooling and classification --------------------------------------------

class LengthMismatch(NumericError):
    """Code length differs from the pooled histogram length."""


class NegativeEntry(NumericError):
    """Histogram entries must be non-negative for chi-square distances."""


class ShapeMismatch(NumericError):
    """Kernel matrices being combined have different shapes."""


class IdMismatch(NumericError):
    """Row/column video id lists disagree."""


class DegenerateLabels(NumericError):
    """Label set does not contain at least two populated classes."""
